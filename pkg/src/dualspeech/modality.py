"""Speech/text input and output modules around the Transformer stacks.

Speech in: 2-layer dense pre-net to model_dim.  Speech out: stop
projection (sigmoid) plus mel projection refined by a 5-layer conv
post-net whose final layer starts at zero (so refinement begins as the
identity).  Text in/out: one embedding matrix shared between input
lookup and the output projection (transposed).  Four learnable start
vectors replace the zero start element, one per (domain, direction).
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor
from .transformer import Linear


class DirectionTag(enum.Enum):
    L2R = "l2r"
    R2L = "r2l"


def sinusoidal_positions(max_len, dim):
    """Fixed sin/cos position table [max_len, dim]."""
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((max_len, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


class SpeechPrenet:
    """Two dense ReLU layers mapping mel frames to model_dim vectors."""

    def __init__(self, rng, reg, n_mels, hidden, model_dim, dropout=0.5):
        self.n_mels = n_mels
        self.dropout = dropout
        self.lin1 = Linear(rng, reg, "prenet.lin1", n_mels, hidden)
        self.lin2 = Linear(rng, reg, "prenet.lin2", hidden, model_dim)

    def __call__(self, frames, ctx):
        if frames.shape[-1] != self.n_mels:
            raise ContractViolation(
                f"expected {self.n_mels}-dim frames, got {frames.shape[-1]}")
        h = ad.relu(self.lin1(frames))
        if ctx.training and self.dropout > 0.0:
            h = ad.dropout(h, self.dropout, ctx.rng)
        h = ad.relu(self.lin2(h))
        if ctx.training and self.dropout > 0.0:
            h = ad.dropout(h, self.dropout, ctx.rng)
        return h


class PostNet:
    """Conv stack refining mel output; tanh on all but the final layer."""

    def __init__(self, rng, reg, n_mels, hidden, num_layers=5, kernel=5):
        self.weights = []
        dims = [n_mels] + [hidden] * (num_layers - 1) + [n_mels]
        for i in range(num_layers):
            if i == num_layers - 1:  # identity refinement at init
                w = np.zeros((kernel, dims[i], dims[i + 1]))
            else:
                limit = math.sqrt(6.0 / (kernel * dims[i] + kernel * dims[i + 1]))
                w = rng.uniform(-limit, limit, size=(kernel, dims[i], dims[i + 1]))
            self.weights.append((
                reg.add(f"postnet.conv{i}.w", w),
                reg.add(f"postnet.conv{i}.b", np.zeros(dims[i + 1])),
            ))
        self.num_layers = num_layers

    def __call__(self, mel):
        h = mel
        for i, (w, b) in enumerate(self.weights):
            h = ad.conv1d_same(h, w, b)
            if i < self.num_layers - 1:
                h = ad.tanh(h)
        return h


class SpeechOutputHead:
    """Stop + mel projections with post-net residual refinement."""

    def __init__(self, rng, reg, model_dim, n_mels, postnet_hidden,
                 postnet_layers=5, postnet_kernel=5):
        self.stop = Linear(rng, reg, "stop_head", model_dim, 1)
        self.mel = Linear(rng, reg, "mel_head", model_dim, n_mels)
        self.postnet = PostNet(rng, reg, n_mels, postnet_hidden,
                               postnet_layers, postnet_kernel)

    def __call__(self, hidden, frame_ok=None):
        """Returns (mel_before, mel_after, stop_logits).

        ``frame_ok`` [B, T] zeroes padded frames before the post-net so
        zero padding cannot leak into unpadded outputs through the
        convolution's receptive field.
        """
        mel_before = self.mel(hidden)
        postnet_in = mel_before
        if frame_ok is not None:
            postnet_in = ad.mul(mel_before, np.asarray(frame_ok, dtype=np.float64)[..., None])
        mel_after = ad.add(mel_before, self.postnet(postnet_in))
        stop_logits = ad.reshape(self.stop(hidden), hidden.shape[:-1])
        return mel_before, mel_after, stop_logits

    def stop_prob(self, hidden):
        return ad.sigmoid(ad.reshape(self.stop(hidden), hidden.shape[:-1]))


class TiedPhonemeEmbedding:
    """One matrix serving as input embedding and output projection."""

    def __init__(self, rng, reg, vocab_size, model_dim):
        self.vocab_size = vocab_size
        self.model_dim = model_dim
        self.table = reg.add(
            "embed.table", rng.normal(0.0, model_dim ** -0.5,
                                      size=(vocab_size, model_dim)))

    def lookup(self, ids):
        return ad.scale(ad.embedding(self.table, ids), math.sqrt(self.model_dim))

    def project(self, hidden):
        """Logits via the transposed embedding; weights are shared storage."""
        b, t, d = hidden.shape
        flat = ad.reshape(hidden, (b * t, d))
        logits = ad.matmul(flat, ad.transpose(self.table, (1, 0)))
        return ad.reshape(logits, (b, t, self.vocab_size))


class DirectionStartEmbeddings:
    """The four learnable decoder start vectors: (domain, direction)."""

    def __init__(self, rng, reg, model_dim):
        self.vectors = {}
        for domain in ("speech", "text"):
            for tag in DirectionTag:
                name = f"start.{domain}_{tag.value}"
                self.vectors[(domain, tag)] = reg.add(
                    name, rng.normal(0.0, model_dim ** -0.5, size=(model_dim,)))

    def get(self, domain, direction):
        return self.vectors[(domain, direction)]


def add_positions(x, pe_table):
    """Add the fixed position encoding for positions 0..T-1."""
    t = x.shape[1]
    if t > pe_table.shape[0]:
        raise ContractViolation(
            f"sequence length {t} exceeds max_len {pe_table.shape[0]}")
    return ad.add(x, pe_table[:t][None, :, :])
