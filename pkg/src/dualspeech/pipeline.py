"""End-to-end orchestration shared by the CLI and the experiment suites:
corpus loading, training runs with logging/checkpoints, and test-set
recognition metrics.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .config import config_text, write_config
from .corpus import Utterance, pack_speech, split_dataset
from .decoding import greedy_text_decode
from .evaluate import PerReport, edit_alignment, right_half_per
from .fileio import FormatError, LossLog, read_manifest, read_melf
from .model import ModelConfig, ModelParameters
from .modality import DirectionTag
from .optim import OptimizerState
from .text import Lexicon, PhonemeVocab, text_to_phonemes
from .training import CorruptionConfig, TrainSettings, train_step
from .transformer import INFERENCE, TransformerConfig


class DataError(ValueError):
    pass


def model_config_from(cfg, vocab_size):
    t = TransformerConfig(num_layers=cfg.num_layers, model_dim=cfg.model_dim,
                          ffn_dim=cfg.ffn_dim, num_heads=cfg.num_heads,
                          dropout=cfg.dropout, max_len=cfg.max_len)
    return ModelConfig(transformer=t, vocab_size=vocab_size,
                       n_mels=cfg.n_mels, prenet_hidden=cfg.prenet_hidden,
                       prenet_dropout=cfg.prenet_dropout,
                       postnet_hidden=cfg.postnet_hidden,
                       postnet_layers=cfg.postnet_layers,
                       postnet_kernel=cfg.postnet_kernel)


def train_settings_from(cfg):
    return TrainSettings(
        corruption=CorruptionConfig(mask_prob=cfg.mask_prob,
                                    swap_window=cfg.swap_window),
        group_size=cfg.group_size, bce_pos_weight=cfg.bce_pos_weight,
        enable_dae=cfg.enable_dae, enable_dt=cfg.enable_dt,
        enable_bsm=cfg.enable_bsm, text_max_ratio=cfg.text_max_ratio,
        speech_max_ratio=cfg.speech_max_ratio)


def load_corpus(data_dir, cfg):
    """Read a prepared corpus: manifest.tsv + vocab.txt + .melf features."""
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.tsv"
    vocab_path = data_dir / "vocab.txt"
    if not manifest.exists():
        raise DataError(f"missing manifest: {manifest}")
    if not vocab_path.exists():
        raise DataError(f"missing vocabulary: {vocab_path}")
    vocab = PhonemeVocab.load(vocab_path)
    lexicon = Lexicon.bundled() if cfg.text_mode == "words" else None
    utts = []
    for uid, path, transcript in read_manifest(manifest):
        feat = data_dir / path
        if feat.suffix != ".melf":
            raise DataError(
                f"{uid}: training expects .melf features, got {path} "
                "(run `dualspeech prepare` first)")
        try:
            mel = read_melf(feat)
        except (OSError, FormatError) as exc:
            raise DataError(str(exc)) from None
        if cfg.text_mode == "words":
            ids = text_to_phonemes(transcript, lexicon, vocab)
        else:
            ids = vocab.encode_phoneme_string(transcript)
        utts.append(Utterance(id=uid, mel=mel, phonemes=ids))
    if not utts:
        raise DataError(f"{manifest}: empty corpus")
    return utts, vocab


def build_partition(utts, cfg):
    return split_dataset(utts, cfg.seed, cfg.train_count, cfg.val_count,
                         cfg.test_count, cfg.paired_count,
                         cfg.disjoint_half_pools)


def run_training(cfg, resume=None, progress=None):
    """Train per config; returns the final checkpoint path.

    Writes the resolved config echo, a per-step loss CSV and periodic
    checkpoints into cfg.out_dir.  ``resume`` continues from a
    checkpoint on the bit-identical trajectory.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    utts, vocab = load_corpus(cfg.data_dir, cfg)
    partition = build_partition(utts, cfg)
    model = ModelParameters(model_config_from(cfg, len(vocab)), seed=cfg.seed)
    opt = OptimizerState(model.params, d_model=cfg.model_dim,
                         warmup_steps=cfg.warmup_steps, beta1=cfg.beta1,
                         beta2=cfg.beta2, epsilon=cfg.adam_epsilon,
                         lr_factor=cfg.lr_factor)
    settings = train_settings_from(cfg)
    start = 0
    if resume is not None:
        tables, start, _ = load_checkpoint(resume)
        restore_into(tables, model.params, opt)
        opt.step = start
    write_config(out_dir / "config_resolved.cfg", cfg)
    vocab.save(out_dir / "vocab.txt")
    last_path = None
    with LossLog(out_dir / "loss.csv", resume=start > 0) as log:
        for step in range(start, cfg.steps):
            report = train_step(model, partition, opt, settings, vocab,
                                cfg.seed, step, dropout=cfg.dropout)
            log.write(step, report.rows())
            if progress is not None:
                progress(step, report)
            done = step + 1
            if done % cfg.checkpoint_interval == 0 or done == cfg.steps:
                last_path = out_dir / f"checkpoint_{done:06d}.dsckpt"
                save_checkpoint(last_path, model.params, opt, done,
                                config_text(cfg))
    return last_path


def load_model(checkpoint_path, cfg, vocab):
    model = ModelParameters(model_config_from(cfg, len(vocab)), seed=cfg.seed)
    opt = OptimizerState(model.params, d_model=cfg.model_dim,
                         warmup_steps=cfg.warmup_steps, beta1=cfg.beta1,
                         beta2=cfg.beta2, epsilon=cfg.adam_epsilon,
                         lr_factor=cfg.lr_factor)
    tables, step, _ = load_checkpoint(checkpoint_path)
    restore_into(tables, model.params, opt)
    opt.step = step
    return model, opt


def strip_eos(ids, vocab):
    return [i for i in ids if i != vocab.eos_id and i != vocab.pad_id]


def recognize_batch(model, utts, vocab, cfg, direction=DirectionTag.L2R,
                    use_start=True, batch_size=32):
    """Greedy ASR over utterances; returns hypothesis id lists (no EOS)."""
    from .decoding import asr_transform  # local import keeps cycles out
    hyps = []
    for i in range(0, len(utts), batch_size):
        chunk = utts[i:i + batch_size]
        pack = pack_speech(chunk, model.cfg.n_mels)
        max_text = max(2, int(np.ceil(pack.mel.shape[1] * cfg.text_max_ratio)))
        dec = asr_transform(model, pack.mel, pack.frame_ok, direction,
                            max_text, vocab.eos_id, vocab.pad_id, use_start)
        for b in range(len(chunk)):
            hyps.append(strip_eos(dec.ids[b, :dec.lengths[b]].tolist(), vocab))
    return hyps


def asr_test_metrics(model, utts, vocab, cfg, use_start=True, batch_size=32):
    """Aggregate PER plus left/right half PER on ground-truth transcripts."""
    refs = [strip_eos(u.phonemes, vocab) for u in utts]
    hyps = recognize_batch(model, utts, vocab, cfg, DirectionTag.L2R,
                           use_start, batch_size)
    sub = dele = ins = total = 0
    for ref, hyp in zip(refs, hyps):
        _, ops = edit_alignment(ref, hyp)
        for kind, _ in ops:
            if kind == "sub":
                sub += 1
            elif kind == "del":
                dele += 1
            elif kind == "ins":
                ins += 1
        total += len(ref)
    left, right = right_half_per(refs, hyps)
    report = PerReport(substitutions=sub, deletions=dele, insertions=ins,
                       ref_len=total)
    return {"per": report.per, "left_per": left, "right_per": right,
            "errors": report.errors, "ref_len": total}
