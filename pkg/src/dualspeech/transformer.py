"""Transformer encoder/decoder stacks (post-norm, multi-head attention).

Four independent stacks are instantiated by ``model.py``: speech and
text each get their own encoder and decoder with the same structure
but separate parameters.  The decoder supports incremental decoding
with key/value caches; cached decoding must match full-prefix
recomputation, it is a speed path only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor


@dataclass
class TransformerConfig:
    num_layers: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    num_heads: int = 4
    dropout: float = 0.1
    max_len: int = 2048

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ContractViolation(
                f"model_dim {self.model_dim} not divisible by "
                f"num_heads {self.num_heads}")
        for name in ("num_layers", "model_dim", "ffn_dim", "num_heads", "max_len"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads


@dataclass
class ForwardCtx:
    """Per-call forward state: dropout only fires when training."""
    training: bool = False
    rng: np.random.Generator | None = None
    dropout: float = 0.0


INFERENCE = ForwardCtx()


class AttentionMask:
    """Boolean allowed-matrix over (target, source) positions.

    ``allowed`` has shape [B or 1, 1, Tq, Tk] so it broadcasts over
    heads; True marks positions attention may use.
    """

    def __init__(self, allowed, kind):
        self.allowed = allowed
        self.kind = kind

    @classmethod
    def padding(cls, src_ok):
        """Mask from a [B, Tk] boolean of valid source positions."""
        return cls(src_ok[:, None, None, :], "padding")

    @classmethod
    def causal(cls, t):
        tri = np.tril(np.ones((t, t), dtype=bool))
        return cls(tri[None, None, :, :], "causal")

    @classmethod
    def combined(cls, t, tgt_ok):
        """Causal plus target-padding mask for decoder self-attention."""
        tri = np.tril(np.ones((t, t), dtype=bool))
        return cls(tri[None, None, :, :] & tgt_ok[:, None, None, :], "combined")


class ParamRegistry:
    """Flat name -> Tensor table; model assembly adds every parameter here."""

    def __init__(self):
        self.params = {}

    def add(self, name, array):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = Tensor(array, requires_grad=True)
        self.params[name] = t
        return t


def xavier_uniform(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    def __init__(self, rng, reg, name, d_in, d_out, zero_init=False):
        w = np.zeros((d_in, d_out)) if zero_init else xavier_uniform(rng, (d_in, d_out))
        self.w = reg.add(name + ".w", w)
        self.b = reg.add(name + ".b", np.zeros(d_out))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, reg, name, dim):
        self.gamma = reg.add(name + ".gamma", np.ones(dim))
        self.beta = reg.add(name + ".beta", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


def _dropout(x, ctx):
    if ctx.training and ctx.dropout > 0.0:
        return ad.dropout(x, ctx.dropout, ctx.rng)
    return x


class KVCache:
    """Preallocated per-layer key/value buffers for incremental decoding."""

    def __init__(self, batch, heads, max_len, head_dim):
        self.k = np.zeros((batch, heads, max_len, head_dim))
        self.v = np.zeros((batch, heads, max_len, head_dim))
        self.len = 0

    def append(self, k_new, v_new):
        t = k_new.shape[2]
        self.k[:, :, self.len:self.len + t] = k_new
        self.v[:, :, self.len:self.len + t] = v_new
        self.len += t

    def view(self):
        return self.k[:, :, :self.len], self.v[:, :, :self.len]


class MultiHeadAttention:
    """Scaled dot-product attention with head split/concat projections."""

    def __init__(self, rng, reg, name, cfg):
        d = cfg.model_dim
        self.cfg = cfg
        self.wq = Linear(rng, reg, name + ".wq", d, d)
        self.wk = Linear(rng, reg, name + ".wk", d, d)
        self.wv = Linear(rng, reg, name + ".wv", d, d)
        self.wo = Linear(rng, reg, name + ".wo", d, d)

    def _split(self, x):
        b, t, _ = x.shape
        h, dh = self.cfg.num_heads, self.cfg.head_dim
        return ad.transpose(ad.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))

    def project_kv(self, kv_in):
        """Precompute split keys/values (decode sessions reuse them)."""
        return self._split(self.wk(kv_in)), self._split(self.wv(kv_in))

    def __call__(self, q_in, kv_in, mask, ctx, cache=None, kv=None):
        """Attend queries over keys/values.

        With ``cache`` the new kv_in positions are appended and
        attention runs over everything cached so far (mask may be None
        because the cache only ever holds past positions).  ``kv``
        supplies projected keys/values from ``project_kv``.
        """
        q = self._split(self.wq(q_in))
        if kv is not None:
            k, v = kv
        else:
            k = self._split(self.wk(kv_in))
            v = self._split(self.wv(kv_in))
        if cache is not None:
            cache.append(k.data, v.data)
            k_full, v_full = cache.view()
            k, v = Tensor(k_full), Tensor(v_full)
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                          1.0 / math.sqrt(self.cfg.head_dim))
        probs = ad.masked_softmax(scores, None if mask is None else mask.allowed)
        probs = _dropout(probs, ctx)
        context = ad.matmul(probs, v)
        b, _, tq, _ = context.shape
        merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)),
                            (b, tq, self.cfg.model_dim))
        return self.wo(merged)


class FeedForward:
    def __init__(self, rng, reg, name, cfg):
        self.lin1 = Linear(rng, reg, name + ".lin1", cfg.model_dim, cfg.ffn_dim)
        self.lin2 = Linear(rng, reg, name + ".lin2", cfg.ffn_dim, cfg.model_dim)

    def __call__(self, x, ctx):
        return self.lin2(_dropout(ad.relu(self.lin1(x)), ctx))


class EncoderLayer:
    def __init__(self, rng, reg, name, cfg):
        self.attn = MultiHeadAttention(rng, reg, name + ".self_attn", cfg)
        self.norm1 = LayerNorm(reg, name + ".norm1", cfg.model_dim)
        self.ffn = FeedForward(rng, reg, name + ".ffn", cfg)
        self.norm2 = LayerNorm(reg, name + ".norm2", cfg.model_dim)

    def __call__(self, x, mask, ctx):
        x = self.norm1(ad.add(x, _dropout(self.attn(x, x, mask, ctx), ctx)))
        x = self.norm2(ad.add(x, _dropout(self.ffn(x, ctx), ctx)))
        return x


class DecoderLayer:
    def __init__(self, rng, reg, name, cfg):
        self.self_attn = MultiHeadAttention(rng, reg, name + ".self_attn", cfg)
        self.norm1 = LayerNorm(reg, name + ".norm1", cfg.model_dim)
        self.cross_attn = MultiHeadAttention(rng, reg, name + ".cross_attn", cfg)
        self.norm2 = LayerNorm(reg, name + ".norm2", cfg.model_dim)
        self.ffn = FeedForward(rng, reg, name + ".ffn", cfg)
        self.norm3 = LayerNorm(reg, name + ".norm3", cfg.model_dim)

    def __call__(self, x, enc_hidden, self_mask, cross_mask, ctx, cache=None,
                 cross_kv=None):
        x = self.norm1(ad.add(x, _dropout(
            self.self_attn(x, x, self_mask, ctx, cache=cache), ctx)))
        x = self.norm2(ad.add(x, _dropout(
            self.cross_attn(x, enc_hidden, cross_mask, ctx, kv=cross_kv), ctx)))
        x = self.norm3(ad.add(x, _dropout(self.ffn(x, ctx), ctx)))
        return x


class TransformerEncoder:
    def __init__(self, rng, reg, name, cfg):
        self.cfg = cfg
        self.layers = [EncoderLayer(rng, reg, f"{name}.layer{i}", cfg)
                       for i in range(cfg.num_layers)]

    def __call__(self, x, src_ok, ctx=INFERENCE):
        """x: [B, T, D] already embedded and position-encoded.

        src_ok: [B, T] boolean of valid (unpadded) positions.
        """
        if x.shape[1] > self.cfg.max_len:
            raise ContractViolation(
                f"sequence length {x.shape[1]} exceeds max_len {self.cfg.max_len}")
        mask = AttentionMask.padding(src_ok)
        for layer in self.layers:
            x = layer(x, mask, ctx)
        return x


class TransformerDecoder:
    def __init__(self, rng, reg, name, cfg):
        self.cfg = cfg
        self.layers = [DecoderLayer(rng, reg, f"{name}.layer{i}", cfg)
                       for i in range(cfg.num_layers)]

    def __call__(self, x, enc_hidden, src_ok, ctx=INFERENCE, tgt_ok=None):
        """Teacher-forced full-prefix pass; causality comes from the mask."""
        t = x.shape[1]
        if t < 1:
            raise ContractViolation("decoder prefix must be non-empty")
        if t > self.cfg.max_len:
            raise ContractViolation(
                f"sequence length {t} exceeds max_len {self.cfg.max_len}")
        if tgt_ok is None:
            self_mask = AttentionMask.causal(t)
        else:
            self_mask = AttentionMask.combined(t, tgt_ok)
        cross_mask = AttentionMask.padding(src_ok)
        for layer in self.layers:
            x = layer(x, enc_hidden, self_mask, cross_mask, ctx)
        return x

    def make_caches(self, batch, max_len):
        cfg = self.cfg
        return [KVCache(batch, cfg.num_heads, max_len, cfg.head_dim)
                for _ in self.layers]

    def make_cross_caches(self, enc_hidden):
        """Projected encoder keys/values, one pair per layer."""
        return [layer.cross_attn.project_kv(enc_hidden)
                for layer in self.layers]

    def step(self, x_new, enc_hidden, src_ok, caches, cross_caches=None):
        """Incremental decode of the next position.

        x_new: [B, 1, D]; appends to ``caches`` and returns the new
        position's hidden state.  One position at a time keeps the
        cached self-attention causal without an explicit mask.
        """
        if x_new.shape[1] != 1:
            raise ContractViolation("incremental decode consumes one position")
        cross_mask = AttentionMask.padding(src_ok)
        x = x_new
        for i, (layer, cache) in enumerate(zip(self.layers, caches)):
            kv = cross_caches[i] if cross_caches is not None else None
            x = layer(x, enc_hidden, None, cross_mask, INFERENCE, cache=cache,
                      cross_kv=kv)
        return x
