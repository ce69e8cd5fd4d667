"""Dataset management: splits, pools, the 16-group batch plan, toy data.

One training step consumes 16 groups of ``group_size`` sequences:
4 reconstruction groups (speech/text x both directions), 8 dual
transformation groups and 4 supervised groups.  Ablation flags remove
exactly the groups belonging to the disabled component; disabling
bidirectional modeling keeps only the left-to-right groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation
from .modality import DirectionTag
from .text import PhonemeVocab


@dataclass
class Utterance:
    id: str
    mel: np.ndarray | None = None        # [T, n_mels] log-mel frames
    phonemes: list[int] | None = None    # ids including terminal EOS

    def __post_init__(self):
        if self.mel is None and self.phonemes is None:
            raise ContractViolation(f"utterance {self.id} has neither side")


@dataclass
class CorpusPartition:
    paired: list
    unpaired_speech: list
    unpaired_text: list
    val: list
    test: list


@dataclass
class SpeechPack:
    mel: np.ndarray      # [B, T, n_mels], zero padded
    frame_ok: np.ndarray  # [B, T] bool
    lengths: np.ndarray


@dataclass
class TextPack:
    ids: np.ndarray      # [B, T], pad_id padded, rows end with EOS
    tok_ok: np.ndarray
    lengths: np.ndarray


@dataclass
class GroupPlan:
    """One named loss-term group of the step's batch."""
    name: str
    term: str            # dae | dt | sup
    task: str            # speech | text (which domain the loss targets)
    direction: DirectionTag
    dt_mode: str | None = None  # same | cross (dual transformation only)
    speech: SpeechPack | None = None
    text: TextPack | None = None
    size: int = 0


@dataclass
class BatchPlan:
    groups: list

    @property
    def total_sequences(self):
        return sum(g.size for g in self.groups)


def pack_speech(utts, n_mels):
    lengths = np.array([len(u.mel) for u in utts], dtype=np.int64)
    t = int(lengths.max())
    mel = np.zeros((len(utts), t, n_mels))
    for i, u in enumerate(utts):
        mel[i, :lengths[i]] = u.mel
    frame_ok = np.arange(t)[None, :] < lengths[:, None]
    return SpeechPack(mel=mel, frame_ok=frame_ok, lengths=lengths)


def pack_text(utts, pad_id):
    lengths = np.array([len(u.phonemes) for u in utts], dtype=np.int64)
    t = int(lengths.max())
    ids = np.full((len(utts), t), pad_id, dtype=np.int64)
    for i, u in enumerate(utts):
        ids[i, :lengths[i]] = u.phonemes
    tok_ok = np.arange(t)[None, :] < lengths[:, None]
    return TextPack(ids=ids, tok_ok=tok_ok, lengths=lengths)


def split_dataset(utterances, seed, train_count, val_count, test_count,
                  paired_count, disjoint_half_pools=False):
    """Deterministic shuffled split, then paired subset selection."""
    total = train_count + val_count + test_count
    if len(utterances) < total:
        raise ContractViolation(
            f"need {total} utterances for the split, have {len(utterances)}")
    if paired_count > train_count:
        raise ContractViolation("paired subset larger than the training set")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    order = rng.permutation(len(utterances))
    chosen = [utterances[i] for i in order[:total]]
    train = chosen[:train_count]
    val = chosen[train_count:train_count + val_count]
    test = chosen[train_count + val_count:total]
    paired = train[:paired_count]
    unpaired = train[paired_count:]
    if disjoint_half_pools:
        half = len(unpaired) // 2
        speech_pool, text_pool = unpaired[:half], unpaired[half:]
    else:
        speech_pool = text_pool = unpaired
    return CorpusPartition(paired=paired, unpaired_speech=speech_pool,
                           unpaired_text=text_pool, val=val, test=test)


def upsample_paired(partition):
    """Repeat factor lifting the paired pool to about the unpaired size."""
    p = len(partition.paired)
    if p == 0:
        raise ContractViolation("paired pool is empty")
    u = max(len(partition.unpaired_speech), len(partition.unpaired_text))
    return max(1, math.ceil(u / p))


# Canonical group order; one training step evaluates each enabled group
# exactly once.  (name, term, task, direction, dt_mode, pool)
_GROUP_TABLE = (
    ("dae_speech_l2r", "dae", "speech", DirectionTag.L2R, None, "unpaired_speech"),
    ("dae_speech_r2l", "dae", "speech", DirectionTag.R2L, None, "unpaired_speech"),
    ("dae_text_l2r", "dae", "text", DirectionTag.L2R, None, "unpaired_text"),
    ("dae_text_r2l", "dae", "text", DirectionTag.R2L, None, "unpaired_text"),
    ("dt_tts_l2r_same", "dt", "speech", DirectionTag.L2R, "same", "unpaired_speech"),
    ("dt_tts_l2r_cross", "dt", "speech", DirectionTag.L2R, "cross", "unpaired_speech"),
    ("dt_tts_r2l_same", "dt", "speech", DirectionTag.R2L, "same", "unpaired_speech"),
    ("dt_tts_r2l_cross", "dt", "speech", DirectionTag.R2L, "cross", "unpaired_speech"),
    ("dt_asr_l2r_same", "dt", "text", DirectionTag.L2R, "same", "unpaired_text"),
    ("dt_asr_l2r_cross", "dt", "text", DirectionTag.L2R, "cross", "unpaired_text"),
    ("dt_asr_r2l_same", "dt", "text", DirectionTag.R2L, "same", "unpaired_text"),
    ("dt_asr_r2l_cross", "dt", "text", DirectionTag.R2L, "cross", "unpaired_text"),
    ("sup_tts_l2r", "sup", "speech", DirectionTag.L2R, None, "paired"),
    ("sup_asr_l2r", "sup", "text", DirectionTag.L2R, None, "paired"),
    ("sup_tts_r2l", "sup", "speech", DirectionTag.R2L, None, "paired"),
    ("sup_asr_r2l", "sup", "text", DirectionTag.R2L, None, "paired"),
)


def enabled_groups(enable_dae=True, enable_dt=True, enable_bsm=True):
    rows = []
    for row in _GROUP_TABLE:
        name, term, task, direction, mode, pool = row
        if term == "dae" and not enable_dae:
            continue
        if term == "dt" and not enable_dt:
            continue
        if not enable_bsm:
            # left-to-right generation only: drop reverse-direction
            # groups and the cross-direction transformation terms
            if direction is DirectionTag.R2L or mode == "cross":
                continue
        rows.append(row)
    return rows


def make_batch(partition, rng, group_size, vocab: PhonemeVocab, n_mels=80,
               enable_dae=True, enable_dt=True, enable_bsm=True):
    """Draw one step's batch: every enabled group gets group_size utterances.

    Reconstruction and transformation groups draw from the unpaired
    pools and expose only the pool's own side; supervised groups draw
    from the (implicitly upsampled) paired pool and expose both sides.
    """
    pools = {
        "paired": partition.paired,
        "unpaired_speech": partition.unpaired_speech,
        "unpaired_text": partition.unpaired_text,
    }
    groups = []
    for name, term, task, direction, mode, pool_name in enabled_groups(
            enable_dae, enable_dt, enable_bsm):
        pool = pools[pool_name]
        if not pool:
            raise ContractViolation(f"pool {pool_name} is empty (group {name})")
        idx = rng.choice(len(pool), size=group_size,
                         replace=len(pool) < group_size)
        utts = [pool[i] for i in idx]
        g = GroupPlan(name=name, term=term, task=task, direction=direction,
                      dt_mode=mode, size=len(utts))
        speech_side = pool_name in ("paired", "unpaired_speech")
        text_side = pool_name in ("paired", "unpaired_text")
        if speech_side:
            g.speech = pack_speech(utts, n_mels)
        if text_side:
            g.text = pack_text(utts, vocab.pad_id)
        groups.append(g)
    return BatchPlan(groups=groups)


# ---------------------------------------------------------------------------
# synthetic toy corpus


@dataclass
class ToySpec:
    n_phonemes: int = 20
    frames_per_phoneme: int = 4
    n_mels: int = 80
    pattern_amplitude: float = 4.0
    pattern_width: float = 2.5
    pattern_base: float = -4.0
    noise_sigma: float = 0.1
    min_len: int = 5
    max_len: int = 20
    n_utterances: int = 600

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ContractViolation("invalid sequence length range")
        if self.n_phonemes < 2:
            raise ContractViolation("need at least two phonemes")


def toy_patterns(spec: ToySpec):
    """One smooth spectral bump per phoneme, centers spread over the bins.

    Rejects specs whose patterns are not separable above the noise
    (min pairwise L2 distance must exceed 4*sigma*sqrt(n_mels)).
    """
    bins = np.arange(spec.n_mels)
    centers = np.linspace(6.0, spec.n_mels - 6.0, spec.n_phonemes)
    pats = spec.pattern_base + spec.pattern_amplitude * np.exp(
        -((bins[None, :] - centers[:, None]) ** 2)
        / (2.0 * spec.pattern_width ** 2))
    dists = np.linalg.norm(pats[:, None, :] - pats[None, :, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    required = 4.0 * spec.noise_sigma * math.sqrt(spec.n_mels)
    if dists.min() <= required:
        raise ContractViolation(
            f"toy patterns indistinguishable: min distance {dists.min():.3f}"
            f" <= {required:.3f}")
    return pats


def synthesize_toy_corpus(spec: ToySpec, seed):
    """Generate utterances whose mel is the pattern sequence plus noise.

    Every utterance keeps its ground-truth transcript, even the ones a
    split later treats as unpaired speech; evaluation needs the truth.
    """
    vocab = PhonemeVocab.toy(spec.n_phonemes)
    pats = toy_patterns(spec)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x707]))
    utts = []
    content_ids = np.array(vocab.content_ids)
    first_content = len(vocab) - spec.n_phonemes
    for i in range(spec.n_utterances):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        toks = rng.choice(content_ids, size=n)
        mel = np.repeat(pats[toks - first_content], spec.frames_per_phoneme,
                        axis=0)
        if spec.noise_sigma > 0:
            mel = mel + rng.normal(0.0, spec.noise_sigma, size=mel.shape)
        utts.append(Utterance(
            id=f"toy{i:05d}", mel=mel,
            phonemes=list(toks) + [vocab.eos_id]))
    return utts, vocab
