"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
abort (non-finite loss).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .autodiff import ContractViolation
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config
from .corpus import ToySpec, pack_speech, pack_text, synthesize_toy_corpus
from .decoding import greedy_speech_decode, greedy_text_decode
from .evaluate import render_spectrogram_image
from .fileio import FormatError, read_manifest, read_melf, write_manifest, write_melf
from .modality import DirectionTag
from .pipeline import (DataError, asr_test_metrics, build_partition,
                       load_corpus, load_model, run_training, strip_eos)
from .text import Lexicon, PhonemeVocab, text_to_phonemes
from .training import NumericAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _cmd_make_toy_corpus(args):
    spec = ToySpec(n_phonemes=args.phonemes,
                   frames_per_phoneme=args.frames_per_phoneme,
                   noise_sigma=args.noise_sigma, min_len=args.min_len,
                   max_len=args.max_len, n_utterances=args.utterances)
    utts, vocab = synthesize_toy_corpus(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for u in utts:
        feat = f"{u.id}.melf"
        write_melf(out / feat, u.mel)
        symbols = vocab.ids_to_phonemes(strip_eos(u.phonemes, vocab))
        rows.append((u.id, feat, " ".join(symbols)))
    write_manifest(out / "manifest.tsv", rows)
    vocab.save(out / "vocab.txt")
    print(f"wrote {len(utts)} toy utterances to {out}")
    return EXIT_OK


def _cmd_prepare(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    stft_cfg = dsp.StftConfig(sample_rate=cfg.sample_rate,
                              frame_ms=cfg.frame_ms, hop_ms=cfg.hop_ms,
                              fft_size=cfg.fft_size)
    fb = dsp.mel_filterbank(stft_cfg, cfg.n_mels, cfg.fmin, cfg.fmax)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_dir = Path(args.manifest).parent
    rows = []
    for uid, path, transcript in read_manifest(args.manifest):
        src = Path(path)
        if not src.is_absolute():
            src = manifest_dir / src
        if src.suffix == ".melf":
            mel = read_melf(src)
        else:
            wave = dsp.resample(dsp.read_wav(src), cfg.sample_rate)
            mel = dsp.mel_spectrogram(wave, stft_cfg, fb).frames
        feat = f"{uid}.melf"
        write_melf(out / feat, mel)
        rows.append((uid, feat, transcript))
    write_manifest(out / "manifest.tsv", rows)
    vocab = (PhonemeVocab.arpabet() if cfg.text_mode == "words"
             else PhonemeVocab.load(manifest_dir / "vocab.txt"))
    vocab.save(out / "vocab.txt")
    print(f"prepared {len(rows)} utterances into {out}")
    return EXIT_OK


def _apply_sets(cfg, sets):
    for item in sets or []:
        cfg = parse_config(item, base=cfg)
    return cfg


def _cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = _apply_sets(cfg, args.set)
    if args.data:
        cfg = cfg.replace(data_dir=args.data)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    if not cfg.data_dir or not cfg.out_dir:
        raise ConfigError("train needs data_dir and out_dir (config or flags)")

    def progress(step, report):
        if (step + 1) % args.print_every == 0:
            print(f"step {step + 1}/{cfg.steps} total={report.total:.4f}")

    final = run_training(cfg, resume=args.resume,
                         progress=progress if args.print_every else None)
    print(f"final checkpoint: {final}")
    return EXIT_OK


def _load_from_checkpoint(ckpt_path, vocab_arg):
    _, _, cfg_text = load_checkpoint(ckpt_path)
    cfg = parse_config(cfg_text)
    vocab_path = Path(vocab_arg) if vocab_arg else Path(ckpt_path).parent / "vocab.txt"
    if not vocab_path.exists():
        raise DataError(f"vocabulary not found at {vocab_path}")
    vocab = PhonemeVocab.load(vocab_path)
    model, _ = load_model(ckpt_path, cfg, vocab)
    return model, cfg, vocab


def _encode_text_arg(text, cfg, vocab):
    if cfg.text_mode == "words":
        return text_to_phonemes(text, Lexicon.bundled(), vocab)
    return vocab.encode_phoneme_string(text)


def _cmd_synthesize(args):
    model, cfg, vocab = _load_from_checkpoint(args.checkpoint, args.vocab)
    ids = _encode_text_arg(args.text, cfg, vocab)
    from .corpus import Utterance
    pack = pack_text([Utterance(id="synth", phonemes=ids)], vocab.pad_id)
    from .autodiff import no_grad
    with no_grad():
        enc = model.encode_text(pack.ids, pack.tok_ok)
    max_frames = max(2, int(cfg.speech_max_ratio * len(ids)))
    dec = greedy_speech_decode(model, enc, pack.tok_ok, DirectionTag.L2R,
                               max_frames, use_start=cfg.enable_bsm)
    mel = dec.mel_after[0, :dec.lengths[0]]
    stft_cfg = dsp.StftConfig(sample_rate=cfg.sample_rate,
                              frame_ms=cfg.frame_ms, hop_ms=cfg.hop_ms,
                              fft_size=cfg.fft_size)
    fb = dsp.mel_filterbank(stft_cfg, cfg.n_mels, cfg.fmin, cfg.fmax)
    wave = dsp.griffin_lim(dsp.MelSpectrogram(frames=mel, config=stft_cfg),
                           stft_cfg, fb, iterations=cfg.griffin_lim_iters)
    dsp.write_wav(args.out_wav, wave)
    if args.out_pgm:
        render_spectrogram_image(mel, args.out_pgm)
    if dec.truncated[0]:
        print("warning: stop head never fired; output truncated at cap")
    print(f"synthesized {len(mel)} frames -> {args.out_wav}")
    return EXIT_OK


def _cmd_recognize(args):
    model, cfg, vocab = _load_from_checkpoint(args.checkpoint, args.vocab)
    src = Path(args.input)
    if src.suffix == ".melf":
        mel = read_melf(src)
    else:
        stft_cfg = dsp.StftConfig(sample_rate=cfg.sample_rate,
                                  frame_ms=cfg.frame_ms, hop_ms=cfg.hop_ms,
                                  fft_size=cfg.fft_size)
        fb = dsp.mel_filterbank(stft_cfg, cfg.n_mels, cfg.fmin, cfg.fmax)
        wave = dsp.resample(dsp.read_wav(src), cfg.sample_rate)
        mel = dsp.mel_spectrogram(wave, stft_cfg, fb).frames
    from .corpus import Utterance
    pack = pack_speech([Utterance(id="rec", mel=mel)], cfg.n_mels)
    from .autodiff import no_grad
    with no_grad():
        enc = model.encode_speech(pack.mel, pack.frame_ok)
    max_text = max(2, int(np.ceil(mel.shape[0] * cfg.text_max_ratio)))
    dec = greedy_text_decode(model, enc, pack.frame_ok, DirectionTag.L2R,
                             max_text, vocab.eos_id, vocab.pad_id,
                             use_start=cfg.enable_bsm)
    ids = strip_eos(dec.ids[0, :dec.lengths[0]].tolist(), vocab)
    print(" ".join(vocab.ids_to_phonemes(ids)))
    return EXIT_OK


def _cmd_evaluate(args):
    model, cfg, vocab = _load_from_checkpoint(args.checkpoint, args.vocab)
    if args.data:
        cfg = cfg.replace(data_dir=args.data)
    utts, data_vocab = load_corpus(cfg.data_dir, cfg)
    if data_vocab.symbols != vocab.symbols:
        raise DataError("corpus vocabulary differs from the checkpoint's")
    partition = build_partition(utts, cfg)
    metrics = asr_test_metrics(model, partition.test, vocab, cfg,
                               use_start=cfg.enable_bsm)
    print(f"test utterances: {len(partition.test)}")
    print(f"PER        {metrics['per']:.4f}  "
          f"({metrics['errors']}/{metrics['ref_len']})")
    print(f"left  half {metrics['left_per']:.4f}")
    print(f"right half {metrics['right_per']:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("metric,value\n")
            for k in ("per", "left_per", "right_per"):
                f.write(f"{k},{metrics[k]!r}\n")
    return EXIT_OK


SWEEP_ABLATION = (
    ("pair_only", {"enable_dae": False, "enable_dt": False, "enable_bsm": False}),
    ("dae", {"enable_dae": True, "enable_dt": False, "enable_bsm": False}),
    ("dae_dt", {"enable_dae": True, "enable_dt": True, "enable_bsm": False}),
    ("dae_dt_bsm", {"enable_dae": True, "enable_dt": True, "enable_bsm": True}),
)


def _cmd_sweep(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = _apply_sets(cfg, args.set)
    if args.data:
        cfg = cfg.replace(data_dir=args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.which == "ablation":
        variants = [(name, flags) for name, flags in SWEEP_ABLATION]
    elif args.which == "paired":
        grid = args.grid or "100,200,300,400,500"
        variants = [(f"paired_{v}", {"paired_count": int(v)})
                    for v in grid.split(",")]
    else:  # maskprob
        grid = args.grid or "0.1,0.2,0.3,0.4,0.5"
        variants = [(f"p_{v}", {"mask_prob": float(v)})
                    for v in grid.split(",")]

    rows = []
    for name, overrides in variants:
        run_cfg = cfg.replace(out_dir=str(out / name), **overrides)
        final = run_training(run_cfg)
        utts, vocab = load_corpus(run_cfg.data_dir, run_cfg)
        partition = build_partition(utts, run_cfg)
        model, _ = load_model(final, run_cfg, vocab)
        metrics = asr_test_metrics(model, partition.test, vocab, run_cfg,
                                   use_start=run_cfg.enable_bsm)
        rows.append((name, metrics))
        print(f"{name}: PER {metrics['per']:.4f} "
              f"(left {metrics['left_per']:.4f}, right {metrics['right_per']:.4f})")
    csv_path = out / f"sweep_{args.which}.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("setting,per,left_per,right_per\n")
        for name, m in rows:
            f.write(f"{name},{m['per']!r},{m['left_per']!r},{m['right_per']!r}\n")
    print(f"wrote {csv_path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dualspeech",
                                description="almost-unsupervised TTS/ASR trainer")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("make-toy-corpus", help="generate a synthetic corpus")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=1234)
    t.add_argument("--phonemes", type=int, default=20)
    t.add_argument("--frames-per-phoneme", type=int, default=4)
    t.add_argument("--utterances", type=int, default=600)
    t.add_argument("--min-len", type=int, default=5)
    t.add_argument("--max-len", type=int, default=20)
    t.add_argument("--noise-sigma", type=float, default=0.1)
    t.set_defaults(func=_cmd_make_toy_corpus)

    t = sub.add_parser("prepare", help="extract mel features from a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.set_defaults(func=_cmd_prepare)

    t = sub.add_parser("train", help="run training")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--resume")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--print-every", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    t = sub.add_parser("synthesize", help="text -> wav (+ spectrogram image)")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--text", required=True)
    t.add_argument("--out-wav", required=True)
    t.add_argument("--out-pgm")
    t.add_argument("--vocab")
    t.set_defaults(func=_cmd_synthesize)

    t = sub.add_parser("recognize", help="wav or melf -> phoneme string")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--input", required=True)
    t.add_argument("--vocab")
    t.set_defaults(func=_cmd_recognize)

    t = sub.add_parser("evaluate", help="test-set PER with half split")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--data")
    t.add_argument("--vocab")
    t.add_argument("--out")
    t.set_defaults(func=_cmd_evaluate)

    t = sub.add_parser("sweep", help="ablation / paired-data / mask-prob sweeps")
    t.add_argument("--which", required=True,
                   choices=("ablation", "paired", "maskprob"))
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--grid")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, CheckpointError, ContractViolation,
            FileNotFoundError, dsp.DspError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
