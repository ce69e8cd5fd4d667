"""On-disk formats: mel feature files, corpus manifests, loss logs.

Feature file: magic "MELF", u32 version (1), u32 n_frames, u32 n_mels,
then n_frames*n_mels float32 little-endian values, row-major.
Manifest: UTF-8 lines "id<TAB>audio_or_feature_path<TAB>transcript".
Loss log: append-only CSV "step,term,value".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MELF_MAGIC = b"MELF"
MELF_VERSION = 1


class FormatError(ValueError):
    pass


def write_melf(path, frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise FormatError("mel frames must be 2-d")
    with open(path, "wb") as f:
        f.write(MELF_MAGIC)
        f.write(struct.pack("<III", MELF_VERSION, frames.shape[0],
                            frames.shape[1]))
        f.write(frames.astype("<f4").tobytes())


def read_melf(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MELF_MAGIC:
            raise FormatError(f"{path}: not a MELF file")
        version, n_frames, n_mels = struct.unpack("<III", f.read(12))
        if version != MELF_VERSION:
            raise FormatError(f"{path}: unsupported MELF version {version}")
        data = f.read(4 * n_frames * n_mels)
        if len(data) != 4 * n_frames * n_mels:
            raise FormatError(f"{path}: truncated MELF payload")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(
        n_frames, n_mels)


def write_manifest(path, rows):
    """rows: iterable of (id, path, transcript)."""
    with open(path, "w", encoding="utf-8") as f:
        for uid, p, transcript in rows:
            f.write(f"{uid}\t{p}\t{transcript}\n")


def read_manifest(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields")
            rows.append(tuple(parts))
    return rows


class LossLog:
    """Append-only loss CSV; float repr keeps rows bit-comparable."""

    def __init__(self, path, resume=False):
        self.path = Path(path)
        mode = "a" if resume and self.path.exists() else "w"
        self._f = open(self.path, mode, encoding="utf-8")
        if mode == "w":
            self._f.write("step,term,value\n")

    def write(self, step, rows):
        for term, value in rows:
            self._f.write(f"{step},{term},{value!r}\n")
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
