"""Binary checkpoints: named parameter table, Adam moments, step, config.

Values are stored as little-endian float32.  To keep a resumed run on
the bit-identical trajectory of an uninterrupted one, ``save`` rounds
the live training state through the same float32 encoding it writes;
both runs therefore continue from identical numbers whenever a
checkpoint is written at the same step.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DSCP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(f, arr):
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f4").tobytes())


def _read_array(f):
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = f.read(4 * count)
    if len(data) != 4 * count:
        raise CheckpointError("truncated checkpoint payload")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)


def _round_f32(arr):
    return arr.astype(np.float32).astype(np.float64)


def save_checkpoint(path, params, opt_state, step, config_text):
    """Write the checkpoint and round live state to the stored precision."""
    names = list(params.keys())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, step))
        blob = config_text.encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            _write_array(f, params[name].data)
            _write_array(f, opt_state.m[name])
            _write_array(f, opt_state.v[name])
    for name in names:
        params[name].data = _round_f32(params[name].data)
        opt_state.m[name] = _round_f32(opt_state.m[name])
        opt_state.v[name] = _round_f32(opt_state.v[name])


def load_checkpoint(path):
    """Returns (tables, step, config_text); tables maps name -> (p, m, v)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, step = struct.unpack("<IQ", f.read(12))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version} != supported {VERSION}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        config_text = f.read(blob_len).decode("utf-8")
        (n_params,) = struct.unpack("<I", f.read(4))
        tables = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            p = _read_array(f)
            m = _read_array(f)
            v = _read_array(f)
            tables[name] = (p, m, v)
    return tables, step, config_text


def restore_into(tables, params, opt_state):
    """Load checkpoint tables into live parameters and moments."""
    missing = set(params) ^ set(tables)
    if missing:
        raise CheckpointError(
            f"checkpoint/model parameter mismatch: {sorted(missing)[:4]}")
    for name, (p, m, v) in tables.items():
        if params[name].data.shape != p.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {p.shape} != model "
                f"{params[name].data.shape}")
        params[name].data = p
        opt_state.m[name] = m
        opt_state.v[name] = v
