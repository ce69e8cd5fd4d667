"""Greedy autoregressive decoding for the two transformation directions.

Generation always runs under no_grad (dual transformation never
backpropagates through the generated sequence) and uses cached
incremental decoding, which matches full-prefix recomputation.
Sources must already be oriented by the caller; ``direction`` only
selects the start embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .transformer import INFERENCE


@dataclass
class TextDecode:
    ids: np.ndarray        # [B, T] padded with pad_id, EOS-terminated rows
    tok_ok: np.ndarray     # [B, T] bool
    lengths: np.ndarray    # [B] including the terminal EOS
    truncated: np.ndarray  # [B] bool, True when EOS was forced at max_len


@dataclass
class SpeechDecode:
    mel_before: np.ndarray  # [B, T, n_mels]
    mel_after: np.ndarray   # [B, T, n_mels], post-net refined
    frame_ok: np.ndarray    # [B, T] bool
    lengths: np.ndarray     # [B]
    truncated: np.ndarray   # [B] bool, True when the stop head never fired


def greedy_text_decode(model, enc_hidden, src_ok, direction, max_len,
                       eos_id, pad_id, use_start=True):
    """Per-step argmax decode until every row emits EOS (or max_len)."""
    b = enc_hidden.shape[0]
    with no_grad():
        caches = model.text_dec.make_caches(b, max_len)
        cross = model.text_dec.make_cross_caches(enc_hidden)
        x = ad.add(model._start_tile("text", direction, b, use_start),
                   model.pe[0][None, None, :])
        done = np.zeros(b, dtype=bool)
        cols = []
        for t in range(max_len):
            hidden = model.text_dec.step(x, enc_hidden, src_ok, caches, cross)
            logits = model.embed.project(hidden).data[:, 0, :]
            nxt = logits.argmax(axis=1)
            nxt[done] = pad_id
            cols.append(nxt)
            done |= nxt == eos_id
            if done.all() or t == max_len - 1:
                break
            x = ad.add(model.embed.lookup(nxt[:, None]),
                       model.pe[t + 1][None, None, :])
    ids = np.stack(cols, axis=1)
    truncated = ~done
    if truncated.any():  # cap reached: close the rows with EOS
        if ids.shape[1] < max_len:
            ids = np.concatenate(
                [ids, np.full((b, 1), pad_id, dtype=ids.dtype)], axis=1)
            ids[truncated, -1] = eos_id
        else:
            ids[truncated, -1] = eos_id
    lengths = (ids == eos_id).argmax(axis=1) + 1
    tok_ok = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    ids = np.where(tok_ok, ids, pad_id)
    return TextDecode(ids=ids, tok_ok=tok_ok, lengths=lengths,
                      truncated=truncated)


def greedy_speech_decode(model, enc_hidden, src_ok, direction, max_len,
                         use_start=True):
    """Regression decode; a frame with stop probability > 0.5 is final."""
    b = enc_hidden.shape[0]
    n_mels = model.cfg.n_mels
    with no_grad():
        caches = model.speech_dec.make_caches(b, max_len)
        cross = model.speech_dec.make_cross_caches(enc_hidden)
        x = ad.add(model._start_tile("speech", direction, b, use_start),
                   model.pe[0][None, None, :])
        done = np.zeros(b, dtype=bool)
        lengths = np.full(b, max_len, dtype=np.int64)
        frames = []
        for t in range(max_len):
            hidden = model.speech_dec.step(x, enc_hidden, src_ok, caches, cross)
            frame = model.speech_head.mel(hidden).data[:, 0, :]
            stop_p = model.speech_head.stop_prob(hidden).data[:, 0]
            frames.append(frame)
            newly = (stop_p > 0.5) & ~done
            lengths[newly] = t + 1
            done |= newly
            if done.all() or t == max_len - 1:
                break
            x = ad.add(model.prenet(Tensor(frame[:, None, :]), INFERENCE),
                       model.pe[t + 1][None, None, :])
        mel_before = np.stack(frames, axis=1)
        t_out = mel_before.shape[1]
        lengths = np.minimum(lengths, t_out)
        frame_ok = np.arange(t_out)[None, :] < lengths[:, None]
        mel_before = mel_before * frame_ok[:, :, None]
        post = model.speech_head.postnet(Tensor(mel_before)).data
        mel_after = (mel_before + post) * frame_ok[:, :, None]
    return SpeechDecode(mel_before=mel_before, mel_after=mel_after,
                        frame_ok=frame_ok, lengths=lengths, truncated=~done)


def asr_transform(model, mel, frame_ok, direction, max_len, eos_id, pad_id,
                  use_start=True):
    """Speech -> pseudo text with the current parameters, gradient-free."""
    with no_grad():
        enc = model.encode_speech(mel, frame_ok, INFERENCE)
    return greedy_text_decode(model, enc, frame_ok, direction, max_len,
                              eos_id, pad_id, use_start)


def tts_transform(model, ids, tok_ok, direction, max_len, use_start=True):
    """Text -> pseudo speech with the current parameters, gradient-free."""
    with no_grad():
        enc = model.encode_text(ids, tok_ok, INFERENCE)
    return greedy_speech_decode(model, enc, tok_ok, direction, max_len,
                                use_start)
