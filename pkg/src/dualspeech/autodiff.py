"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array.  Operations record a node in an
implicit acyclic graph; ``backward`` on a scalar loss walks the graph
once in reverse topological order and accumulates gradients by plain
summation, so two runs over the same graph are bit-identical.

Generation-time code runs under ``no_grad()`` which skips all graph
recording; the forward numerics are unchanged.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import backend


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for generation)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-d float64 array, optionally tracked by the gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Build a result tensor, recording a graph node when tracking is on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t, g, owned=False):
    """Add ``g`` into t.grad; ``owned`` marks a freshly-allocated array
    that may be adopted without a defensive copy."""
    if t.grad is None:
        if owned and isinstance(g, np.ndarray):
            t.grad = g
        else:
            t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(
                g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss):
    """Reverse-mode accumulation from a scalar loss.

    Gradients land in ``.grad`` of every reachable tensor with
    ``requires_grad``.  Visits each node exactly once; graph order is
    the deterministic construction order.
    """
    if loss.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo = []
    seen = set()
    stack = [(loss, False)]
    on_path = set()
    while stack:
        node, done = stack.pop()
        if done:
            on_path.discard(id(node))
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        if id(node) in on_path:
            raise RuntimeError("cycle detected in gradient graph")
        seen.add(id(node))
        on_path.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape), owned=True)

    return _make(out_data, (a, b), bwd)


def scale(a, s):
    s = float(s)

    def bwd(g):
        _accum(a, g * s, owned=True)

    return _make(a.data * s, (a,), bwd)


def matmul(a, b):
    """Matrix product with numpy batch broadcasting on leading axes."""
    out_data = a.data @ b.data

    def bwd(g):
        # contiguous transposes keep the backward products on the fast
        # BLAS path for batched (>2-d) operands
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2)
            if bt.ndim > 2:
                bt = np.ascontiguousarray(bt)
            _accum(a, _unbroadcast(g @ bt, a.shape), owned=True)
        if b.requires_grad:
            at = np.swapaxes(a.data, -1, -2)
            if at.ndim > 2:
                at = np.ascontiguousarray(at)
            _accum(b, _unbroadcast(at @ g, b.shape), owned=True)

    return _make(out_data, (a, b), bwd)


def reshape(a, shape):
    orig = a.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def sum_all(a):
    def bwd(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(), (a,), bwd)


def relu(a):
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0), owned=True)

    return _make(out_data, (a,), bwd)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data), owned=True)

    return _make(out_data, (a,), bwd)


def sigmoid(a):
    # exp of a negative argument on both branches keeps this overflow-free
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data), owned=True)

    return _make(out_data, (a,), bwd)


def dropout(a, p, rng):
    """Inverted dropout; only invoked in training mode, p in [0, 1)."""
    if p <= 0.0:
        return a
    keep = rng.random(a.shape) >= p
    m = keep / (1.0 - p)

    def bwd(g):
        _accum(a, g * m, owned=True)

    return _make(a.data * m, (a,), bwd)


# ---------------------------------------------------------------------------
# fused network kernels (backed by the selected backend)


def layer_norm(a, gamma, beta, eps=1e-6):
    """Layer normalization over the last axis."""
    d = a.shape[-1]
    x2 = np.ascontiguousarray(a.data.reshape(-1, d))
    y, mean, rstd = backend.layer_norm_fwd(x2, gamma.data, beta.data, eps)

    def bwd(g):
        dx, dg, db = backend.layer_norm_bwd(
            np.ascontiguousarray(g.reshape(-1, d)), x2, gamma.data, mean, rstd)
        if a.requires_grad:
            _accum(a, dx.reshape(a.shape), owned=True)
        if gamma.requires_grad:
            _accum(gamma, dg, owned=True)
        if beta.requires_grad:
            _accum(beta, db, owned=True)

    return _make(y.reshape(a.shape), (a, gamma, beta), bwd)


def masked_softmax(a, mask=None):
    """Softmax over the last axis; masked (False) positions get weight 0.

    Raises ContractViolation if any row is fully masked.
    """
    k = a.shape[-1]
    if mask is not None:
        mask = np.broadcast_to(mask, a.shape)
        m2 = np.ascontiguousarray(mask.reshape(-1, k))
        if not m2.any(axis=1).all():
            raise ContractViolation("attention row with no unmasked position")
    else:
        m2 = None
    s2 = np.ascontiguousarray(a.data.reshape(-1, k))
    p = backend.masked_softmax_fwd(s2, m2)

    def bwd(g):
        ds = backend.masked_softmax_bwd(np.ascontiguousarray(g.reshape(-1, k)), p)
        _accum(a, ds.reshape(a.shape), owned=True)

    return _make(p.reshape(a.shape), (a,), bwd)


def conv1d_same(x, w, b):
    """Same-padded conv along the time axis; x [B,T,Cin], w [K,Cin,Cout]."""
    xd = np.ascontiguousarray(x.data)
    y = backend.conv1d_fwd(xd, w.data, b.data)

    def bwd(g):
        dx, dw, db = backend.conv1d_bwd(np.ascontiguousarray(g), xd, w.data)
        if x.requires_grad:
            _accum(x, dx, owned=True)
        if w.requires_grad:
            _accum(w, dw, owned=True)
        if b.requires_grad:
            _accum(b, db, owned=True)

    return _make(y, (x, w, b), bwd)


def embedding(table, ids):
    """Row gather: out[..., :] = table[ids[...]]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(
            f"embedding id out of range [0, {table.shape[0]})")
    out_data = table.data[ids]

    def bwd(g):
        dtab = np.zeros_like(table.data)
        backend.scatter_add_rows(
            dtab, np.ascontiguousarray(ids.reshape(-1), dtype=np.int64),
            np.ascontiguousarray(g.reshape(-1, table.shape[1])))
        _accum(table, dtab, owned=True)

    return _make(out_data, (table,), bwd)


# ---------------------------------------------------------------------------
# fused losses


def masked_mse(pred, target, mask):
    """Mean squared error over unmasked positions.

    pred/target: [..., D]; mask: broadcastable to pred.shape[:-1], with
    at least one True entry.  The mean runs over unmasked positions
    times D.
    """
    t = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    count = m.sum() * pred.shape[-1]
    if count == 0:
        raise ContractViolation("masked_mse over an all-masked batch")
    diff = (pred.data - t) * m[..., None]
    out_data = np.array((diff * diff).sum() / count)

    def bwd(g):
        _accum(pred, (2.0 / count) * float(g) * diff, owned=True)

    return _make(out_data, (pred,), bwd)


def masked_nll(logits, targets, mask):
    """Mean negative log-likelihood under a softmax over the last axis.

    logits: [..., V]; targets: integer ids, shape logits.shape[:-1];
    mask: same shape as targets (True = counted).
    """
    v = logits.shape[-1]
    ids = np.asarray(targets).reshape(-1)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if not m.any():
        raise ContractViolation("masked_nll over an all-masked batch")
    x = logits.data.reshape(-1, v)
    mx = x.max(axis=1, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(x.shape[0])
    count = m.sum()
    out_data = np.array(-(logp[rows, ids] * m).sum() / count)

    def bwd(g):
        p = np.exp(logp)
        p[rows, ids] -= 1.0
        p *= (m / count * float(g))[:, None]
        _accum(logits, p.reshape(logits.shape), owned=True)

    return _make(out_data, (logits,), bwd)


def masked_bce_logits(logits, targets, mask, pos_weight=1.0):
    """Mean binary cross-entropy on logits with a positive-class weight.

    loss_i = pos_weight*z_i*softplus(-x_i) + (1-z_i)*softplus(x_i),
    averaged over unmasked positions.
    """
    z = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    count = m.sum()
    if count == 0:
        raise ContractViolation("masked_bce over an all-masked batch")
    x = logits.data
    per = pos_weight * z * np.logaddexp(0.0, -x) + (1.0 - z) * np.logaddexp(0.0, x)
    out_data = np.array((per * m).sum() / count)

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))
        dx = (pos_weight * z * (sig - 1.0) + (1.0 - z) * sig) * m
        _accum(logits, dx * (float(g) / count), owned=True)

    return _make(out_data, (logits,), bwd)
