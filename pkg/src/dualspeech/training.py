"""Losses, corruption, sequence reversal, dual transformation, train step.

One step evaluates six term losses: reconstruction (speech + text) in
both directions, dual transformation in both directions (four terms
each: same-direction and reversed-cross-direction pseudo sources for
both tasks), and supervised losses on the paired pool in both
directions.  Pseudo sources are generated greedily with the current
parameters and never carry gradient.  The step total is the plain sum
of the six terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, no_grad
from .corpus import make_batch
from .decoding import asr_transform, tts_transform
from .modality import DirectionTag
from .optim import adam_step, zero_grads
from .transformer import ForwardCtx


class NumericAbort(RuntimeError):
    """A loss term became non-finite; carries the offending term name."""

    def __init__(self, term, value):
        super().__init__(f"non-finite loss in term {term}: {value}")
        self.term = term


@dataclass
class CorruptionConfig:
    mask_prob: float = 0.3
    swap_window: int = 0  # 0 disables window swapping

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ContractViolation("mask_prob must be in [0, 1]")
        if self.swap_window == 1 or self.swap_window < 0:
            raise ContractViolation("swap window must be 0 (off) or >= 2")


@dataclass
class TrainSettings:
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    group_size: int = 32
    bce_pos_weight: float = 5.0
    enable_dae: bool = True
    enable_dt: bool = True
    enable_bsm: bool = True
    text_max_ratio: float = 0.5   # pseudo-text cap: ratio * source frames
    speech_max_ratio: float = 8.0  # pseudo-speech cap: ratio * source tokens


@dataclass
class LossReport:
    dae_l2r: float = 0.0
    dae_r2l: float = 0.0
    dt_l2r: float = 0.0
    dt_r2l: float = 0.0
    sup_l2r: float = 0.0
    sup_r2l: float = 0.0
    total: float = 0.0
    parts: dict = field(default_factory=dict)

    TERMS = ("dae_l2r", "dae_r2l", "dt_l2r", "dt_r2l", "sup_l2r", "sup_r2l")

    def term_sum(self):
        return sum(getattr(self, t) for t in self.TERMS)

    def rows(self):
        """(name, value) rows for the loss log, stable order."""
        out = [(t, getattr(self, t)) for t in self.TERMS]
        out.append(("total", self.total))
        out.extend(sorted(self.parts.items()))
        return out


# ---------------------------------------------------------------------------
# sequence operators


def reverse_seq(seq, eos_id=None):
    """Reverse content order; a terminal EOS stays terminal.

    Works on id lists (pass eos_id) and on [T, D] frame arrays.
    """
    if isinstance(seq, np.ndarray):
        return seq[::-1].copy()
    seq = list(seq)
    if eos_id is not None and seq and seq[-1] == eos_id:
        return seq[-2::-1] + [seq[-1]]
    return seq[::-1]


def reverse_packed_speech(mel, lengths):
    out = mel.copy()
    for i, n in enumerate(lengths):
        out[i, :n] = mel[i, :n][::-1]
    return out


def reverse_packed_text(ids, lengths):
    """Per-row content reversal below the terminal EOS."""
    out = ids.copy()
    for i, n in enumerate(lengths):
        out[i, :n - 1] = ids[i, :n - 1][::-1]
    return out


def _swap_windows(n, window, rng):
    """Local shuffle: each position moves at most ``window`` slots."""
    keys = np.arange(n) + rng.uniform(0.0, window + 1.0, size=n)
    return np.argsort(keys, kind="stable")


def corrupt_speech(mel, frame_ok, cfg, rng):
    """Zero each real frame independently with probability mask_prob."""
    keep = rng.random(mel.shape[:2]) >= cfg.mask_prob
    out = mel * (keep | ~frame_ok)[:, :, None]
    if cfg.swap_window:
        out = out.copy()
        for i, n in enumerate(frame_ok.sum(axis=1)):
            perm = _swap_windows(n, cfg.swap_window, rng)
            out[i, :n] = out[i, :n][perm]
    return out


def corrupt_text(ids, tok_ok, mask_id, cfg, rng):
    """Replace each real token independently with the mask id."""
    hit = (rng.random(ids.shape) < cfg.mask_prob) & tok_ok
    out = np.where(hit, mask_id, ids)
    if cfg.swap_window:
        for i, n in enumerate(tok_ok.sum(axis=1)):
            perm = _swap_windows(n, cfg.swap_window, rng)
            out[i, :n] = out[i, :n][perm]
    return out


# ---------------------------------------------------------------------------
# loss operations


def stop_targets(frame_ok, lengths):
    z = np.zeros(frame_ok.shape)
    z[np.arange(len(lengths)), lengths - 1] = 1.0
    return z


def speech_loss(target_mel, frame_ok, lengths, mel_before, mel_after,
                stop_logits, pos_weight=5.0):
    """MSE on both mel outputs plus weighted stop BCE, padded frames excluded.

    Returns (loss tensor, parts dict of detached floats).
    """
    if not frame_ok.any():
        raise ContractViolation("speech loss over an all-padded batch")
    mse_b = ad.masked_mse(mel_before, target_mel, frame_ok)
    mse_a = ad.masked_mse(mel_after, target_mel, frame_ok)
    bce = ad.masked_bce_logits(stop_logits, stop_targets(frame_ok, lengths),
                               frame_ok, pos_weight=pos_weight)
    loss = ad.add(ad.add(mse_b, mse_a), bce)
    parts = {"mse_before": mse_b.item(), "mse_after": mse_a.item(),
             "stop_bce": bce.item()}
    return loss, parts


def text_loss(logits, target_ids, tok_ok):
    """Per-position NLL under the softmax, averaged over real tokens."""
    if not tok_ok.any():
        raise ContractViolation("text loss over an all-padded batch")
    return ad.masked_nll(logits, target_ids, tok_ok)


# ---------------------------------------------------------------------------
# group evaluation


def _oriented_speech(pack, direction):
    if direction is DirectionTag.L2R:
        return pack.mel
    return reverse_packed_speech(pack.mel, pack.lengths)


def _oriented_text(pack, direction):
    if direction is DirectionTag.L2R:
        return pack.ids
    return reverse_packed_text(pack.ids, pack.lengths)


def _flip(direction):
    return (DirectionTag.R2L if direction is DirectionTag.L2R
            else DirectionTag.L2R)


def _group_loss(model, group, settings, vocab, ctx, corrupt_rng):
    """Loss for one batch group, plus its parts for the report."""
    use_start = settings.enable_bsm
    pos_w = settings.bce_pos_weight

    if group.term == "dae" and group.task == "speech":
        tgt = _oriented_speech(group.speech, group.direction)
        ok, lens = group.speech.frame_ok, group.speech.lengths
        src = corrupt_speech(tgt, ok, settings.corruption, corrupt_rng)
        enc = model.encode_speech(src, ok, ctx)
        mel_b, mel_a, stop = model.decode_speech_train(
            enc, ok, tgt, ok, group.direction, ctx, use_start)
        return speech_loss(tgt, ok, lens, mel_b, mel_a, stop, pos_w)

    if group.term == "dae" and group.task == "text":
        tgt = _oriented_text(group.text, group.direction)
        ok, lens = group.text.tok_ok, group.text.lengths
        src = corrupt_text(tgt, ok, vocab.mask_id, settings.corruption,
                           corrupt_rng)
        enc = model.encode_text(src, ok, ctx)
        logits = model.decode_text_train(enc, ok, tgt, ok, group.direction,
                                         ctx, use_start)
        return text_loss(logits, tgt, ok), {}

    if group.term == "dt" and group.task == "speech":
        # train TTS on (pseudo text -> true speech)
        gen_dir = (group.direction if group.dt_mode == "same"
                   else _flip(group.direction))
        ok, lens = group.speech.frame_ok, group.speech.lengths
        gen_src = _oriented_speech(group.speech, gen_dir)
        max_text = max(2, int(np.ceil(gen_src.shape[1] * settings.text_max_ratio)))
        pseudo = asr_transform(model, gen_src, ok, gen_dir, max_text,
                               vocab.eos_id, vocab.pad_id, use_start)
        src_ids = pseudo.ids
        if group.dt_mode == "cross":
            src_ids = reverse_packed_text(src_ids, pseudo.lengths)
        tgt = _oriented_speech(group.speech, group.direction)
        enc = model.encode_text(src_ids, pseudo.tok_ok, ctx)
        mel_b, mel_a, stop = model.decode_speech_train(
            enc, pseudo.tok_ok, tgt, ok, group.direction, ctx, use_start)
        return speech_loss(tgt, ok, lens, mel_b, mel_a, stop, pos_w)

    if group.term == "dt" and group.task == "text":
        # train ASR on (pseudo speech -> true text)
        gen_dir = (group.direction if group.dt_mode == "same"
                   else _flip(group.direction))
        ok = group.text.tok_ok
        gen_src = _oriented_text(group.text, gen_dir)
        max_speech = max(2, int(settings.speech_max_ratio * gen_src.shape[1]))
        pseudo = tts_transform(model, gen_src, ok, gen_dir, max_speech,
                               use_start)
        src_mel = pseudo.mel_after
        if group.dt_mode == "cross":
            src_mel = reverse_packed_speech(src_mel, pseudo.lengths)
        tgt = _oriented_text(group.text, group.direction)
        enc = model.encode_speech(src_mel, pseudo.frame_ok, ctx)
        logits = model.decode_text_train(enc, pseudo.frame_ok, tgt, ok,
                                         group.direction, ctx, use_start)
        return text_loss(logits, tgt, ok), {}

    if group.term == "sup" and group.task == "speech":
        src = _oriented_text(group.text, group.direction)
        tgt = _oriented_speech(group.speech, group.direction)
        ok, lens = group.speech.frame_ok, group.speech.lengths
        enc = model.encode_text(src, group.text.tok_ok, ctx)
        mel_b, mel_a, stop = model.decode_speech_train(
            enc, group.text.tok_ok, tgt, ok, group.direction, ctx, use_start)
        return speech_loss(tgt, ok, lens, mel_b, mel_a, stop, pos_w)

    if group.term == "sup" and group.task == "text":
        src = _oriented_speech(group.speech, group.direction)
        tgt = _oriented_text(group.text, group.direction)
        enc = model.encode_speech(src, group.speech.frame_ok, ctx)
        logits = model.decode_text_train(enc, group.speech.frame_ok, tgt,
                                         group.text.tok_ok, group.direction,
                                         ctx, use_start)
        return text_loss(logits, tgt, group.text.tok_ok), {}

    raise ValueError(f"unknown group {group.name}")


def step_rngs(seed, step):
    """Stateless per-step generators; resuming at step k replays exactly."""
    base = np.random.SeedSequence([seed, step])
    batch, corrupt, drop = (np.random.default_rng(s) for s in base.spawn(3))
    return batch, corrupt, drop


def train_step(model, partition, opt_state, settings, vocab, seed, step,
               dropout=0.0):
    """One full optimization step; returns the per-term LossReport."""
    batch_rng, corrupt_rng, drop_rng = step_rngs(seed, step)
    plan = make_batch(partition, batch_rng, settings.group_size, vocab,
                      n_mels=model.cfg.n_mels,
                      enable_dae=settings.enable_dae,
                      enable_dt=settings.enable_dt,
                      enable_bsm=settings.enable_bsm)
    ctx = ForwardCtx(training=True, rng=drop_rng, dropout=dropout)

    report = LossReport()
    term_tensors = []
    for group in plan.groups:
        loss, parts = _group_loss(model, group, settings, vocab, ctx,
                                  corrupt_rng)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericAbort(group.name, value)
        term = f"{group.term}_{group.direction.value}"
        setattr(report, term, getattr(report, term) + value)
        report.parts[group.name] = value
        for k, v in parts.items():
            report.parts[f"{group.name}.{k}"] = v
        term_tensors.append(loss)

    total = term_tensors[0]
    for t in term_tensors[1:]:
        total = ad.add(total, t)
    report.total = total.item()
    if not np.isfinite(report.total):
        raise NumericAbort("total", report.total)

    zero_grads(model.params)
    ad.backward(total)
    adam_step(model.params, opt_state)
    return report
