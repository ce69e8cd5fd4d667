"""Objective metrics: phoneme error rate, half-sequence error analysis,
mel distortion, and grayscale spectrogram rendering.

PER comes from a unit-cost minimum-edit-distance alignment.  The
half-split analysis attributes every error to a reference position via
the alignment backtrace, so left and right errors always recombine to
the full count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractViolation


@dataclass
class PerReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def per(self):
        return self.errors / self.ref_len


def edit_distance(ref, hyp):
    """Unit-cost edit distance, rolling-row DP (plain lists: sequences
    here are short, so list arithmetic beats array dispatch)."""
    m = len(hyp)
    prev = list(range(m + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if r == hyp[j - 1] else 1
            a = prev[j - 1] + cost
            b = prev[j] + 1
            c = cur[j - 1] + 1
            cur[j] = a if a <= b and a <= c else (b if b <= c else c)
        prev = cur
    return prev[m]


def edit_alignment(ref, hyp):
    """Minimum-edit alignment (unit costs) with a deterministic backtrace.

    Returns (distance, ops) where ops is a list of (kind, ref_index):
    kind in {match, sub, del, ins}; insertions are attributed to the
    reference position the cursor sits before (clamped to the last).
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    d[0] = list(range(m + 1))
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = d[i]
        above = d[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ri == hyp[j - 1] else 1
            a = above[j - 1] + cost
            b = above[j] + 1
            c = row[j - 1] + 1
            row[j] = a if a <= b and a <= c else (b if b <= c else c)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (
                0 if ref[i - 1] == hyp[j - 1] else 1):
            ops.append(("match" if ref[i - 1] == hyp[j - 1] else "sub", i - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            ops.append(("del", i - 1))
            i -= 1
        else:
            ops.append(("ins", min(i, n - 1)))
            j -= 1
    ops.reverse()
    return d[n][m], ops


def per(ref, hyp):
    """Phoneme error rate (S+D+I)/N of ``hyp`` against non-empty ``ref``."""
    if len(ref) == 0:
        raise ContractViolation("reference sequence must be non-empty")
    _, ops = edit_alignment(list(ref), list(hyp))
    counts = {"sub": 0, "del": 0, "ins": 0}
    for kind, _ in ops:
        if kind in counts:
            counts[kind] += 1
    return PerReport(substitutions=counts["sub"], deletions=counts["del"],
                     insertions=counts["ins"], ref_len=len(ref))


def right_half_per(refs, hyps):
    """Corpus-level PER split over first/second halves of each reference.

    Every alignment error lands in exactly one half, so the
    length-weighted mean of the two halves equals the full PER.
    Returns (left_per, right_per).
    """
    err = {"left": 0, "right": 0}
    length = {"left": 0, "right": 0}
    for ref, hyp in zip(refs, hyps):
        if len(ref) == 0:
            raise ContractViolation("reference sequence must be non-empty")
        n_left = (len(ref) + 1) // 2
        length["left"] += n_left
        length["right"] += len(ref) - n_left
        _, ops = edit_alignment(list(ref), list(hyp))
        for kind, pos in ops:
            if kind != "match":
                err["left" if pos < n_left else "right"] += 1
    left = err["left"] / length["left"] if length["left"] else 0.0
    right = err["right"] / length["right"] if length["right"] else 0.0
    return left, right


@dataclass
class MelDistortion:
    per_frame: np.ndarray
    overall: float
    left: float
    right: float


def mel_distortion(ref_mel, hyp_mel):
    """Frame-wise MSE over the common prefix, with a midpoint half split."""
    t = min(len(ref_mel), len(hyp_mel))
    if t == 0:
        raise ContractViolation("empty mel comparison")
    diff = ref_mel[:t] - hyp_mel[:t]
    per_frame = (diff * diff).mean(axis=1)
    mid = (t + 1) // 2
    right = float(per_frame[mid:].mean()) if mid < t else 0.0
    return MelDistortion(per_frame=per_frame,
                         overall=float(per_frame.mean()),
                         left=float(per_frame[:mid].mean()),
                         right=right)


def render_spectrogram_image(mel_frames, path):
    """Binary PGM: width = frames, height = mel bins, bin 79 on top.

    Values are min-max scaled to 0..255; a constant input renders as
    all zeros.  Deterministic: identical mels give identical bytes.
    """
    frames = np.asarray(mel_frames, dtype=np.float64)
    if not np.isfinite(frames).all():
        raise ContractViolation("mel contains non-finite values")
    n_frames, n_bins = frames.shape
    lo, hi = frames.min(), frames.max()
    if hi > lo:
        scaled = np.rint((frames - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros_like(frames, dtype=np.uint8)
    img = scaled.T[::-1]  # rows: bin n_bins-1 .. 0; cols: time
    with open(path, "wb") as f:
        f.write(f"P5\n{n_frames} {n_bins}\n255\n".encode("ascii"))
        f.write(img.tobytes())
