"""Small dense reverse-mode autodiff engine on top of numpy (float64 only).

Every op builds a :class:`Tensor` whose ``_backward`` closure maps the output
gradient to one gradient per parent. :func:`backward` walks the graph in
reverse topological order. Graphs are rebuilt on every forward pass.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_state = threading.local()


def _guided() -> bool:
    return getattr(_state, "guided", False)


@contextlib.contextmanager
def guided_backprop_mode():
    """Switch ELU and ReLU backward rules to the guided (doubly gated) variant.

    The flag is read when backward closures execute, so the backward call
    itself must happen inside the ``with`` block.
    """
    prev = _guided()
    _state.guided = True
    try:
        yield
    finally:
        _state.guided = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "name", "_done")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._backward = None
        self.name = name
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        return self.data.ravel()

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op, parents=parents)
    if out.requires_grad:
        out._backward = fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# backward


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node that requires grad.

    Returns a mapping ``{tensor: gradient}``. Raises if ``loss`` is not a scalar,
    does not depend on anything requiring grad, or if gradients from an earlier
    pass are still present (call :func:`zero_grad` first).
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached: nothing in its graph requires grad")
    if loss._done:
        raise RuntimeError("backward already called on this graph; reset gradients first")
    order = _topo(loss)
    for node in order:
        if node.grad is not None:
            raise RuntimeError(
                f"stale gradient on {node!r}; call zero_grad before a second backward"
            )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node.parents, grads):
            if g is None or not p.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                g = g.reshape(p.shape)
            p.grad = g if p.grad is None else p.grad + g
    loss._done = True
    return {node: node.grad for node in order}


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
        t._done = False


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", fn)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.data > 0
    neg_exp = np.exp(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, alpha * (neg_exp - 1.0))

    def fn(g):
        if _guided():
            return (g * (pos & (g > 0)),)
        return (g * np.where(pos, 1.0, alpha * neg_exp),)

    return _make(out, (x,), "elu", fn)


def gelu(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data**2) / np.sqrt(2.0 * np.pi)

    def fn(g):
        return (g * (cdf + x.data * pdf),)

    return _make(x.data * cdf, (x,), "gelu", fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def fn(g):
        if _guided():
            return (g * (mask & (g > 0)),)
        return (g * mask,)

    return _make(x.data * mask, (x,), "relu", fn)


# --------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    def fn(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), "reshape", fn)


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if not axes else tuple(axes)
    inv = np.argsort(axes)

    def fn(g):
        return (g.transpose(inv),)

    return _make(x.data.transpose(axes), (x,), "transpose", fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", fn)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum", fn)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape),)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), "mean", fn)


# --------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with leading-dimension broadcasting (``np.matmul``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), "matmul", fn)


def conv2d_valid(x: Tensor, kernel: Tensor, stride=(1, 1), groups: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid 2-D cross-correlation of ``x`` (N,C,H,W) with ``kernel`` (K,C/groups,kh,kw).

    Output is (N, K, H', W') with H' = (H - kh) // sh + 1 and likewise for W'.
    ``groups == C == K`` selects a depthwise path. An optional ``bias`` of
    shape (K,) is added per output map.
    """
    N, C, H, W = x.shape
    K, Cg, kh, kw = kernel.shape
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    if kh > H or kw > W:
        raise ValueError(f"kernel {(kh, kw)} larger than input {(H, W)}")
    if C % groups or K % groups or C // groups != Cg:
        raise ValueError(f"channel mismatch: input C={C}, kernel C={Cg}, groups={groups}")
    G, Kg = groups, K // groups
    Ho, Wo = (H - kh) // sh + 1, (W - kw) // sw + 1
    if G == C == K:
        out = _depthwise(x, kernel, Ho, Wo, sh, sw)
        return out if bias is None else add(out, reshape(bias, (1, K, 1, 1)))
    M, ckk = N * Ho * Wo, Cg * kh * kw

    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = (
        win.reshape(N, G, Cg, Ho, Wo, kh, kw)
        .transpose(1, 0, 3, 4, 2, 5, 6)
        .reshape(G, M, ckk)
    )
    wmat = kernel.data.reshape(G, Kg, ckk).transpose(0, 2, 1)
    out = (cols @ wmat).reshape(G, N, Ho, Wo, Kg).transpose(1, 0, 4, 2, 3).reshape(N, K, Ho, Wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def fn(g):
        gg = g.reshape(N, G, Kg, Ho, Wo).transpose(1, 0, 3, 4, 2).reshape(G, M, Kg)
        gx = gk = None
        if kernel.requires_grad:
            gk = (np.swapaxes(cols, 1, 2) @ gg).transpose(0, 2, 1).reshape(K, Cg, kh, kw)
        if x.requires_grad:
            dcols = (gg @ np.swapaxes(wmat, 1, 2)).reshape(G, N, Ho, Wo, Cg, kh, kw)
            dcols = dcols.transpose(1, 0, 4, 2, 3, 5, 6).reshape(N, C, Ho, Wo, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw] += dcols[..., i, j]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, "conv2d", fn)


def _depthwise(x: Tensor, kernel: Tensor, Ho: int, Wo: int, sh: int, sw: int) -> Tensor:
    # one filter per input channel: accumulate over kernel offsets instead of im2col
    _, _, kh, kw = kernel.shape
    w = kernel.data[:, 0]
    if Ho == 1 and kw == 1 and sw == 1:
        return _depthwise_column(x, kernel)

    def window(arr, i, j):
        return arr[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw]

    out = 0.0
    for i in range(kh):
        for j in range(kw):
            out = out + w[None, :, i, j, None, None] * window(x.data, i, j)

    def fn(g):
        gx = gk = None
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for i in range(kh):
                for j in range(kw):
                    gk[:, 0, i, j] = np.einsum("nchw,nchw->c", g, window(x.data, i, j))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    window(gx, i, j)[...] += w[None, :, i, j, None, None] * g
        return gx, gk

    return _make(out, (x, kernel), "conv2d", fn)


def _depthwise_column(x: Tensor, kernel: Tensor) -> Tensor:
    # kernel spans the full height: a per-channel weighted sum over rows
    w = kernel.data[:, 0, :, 0]
    out = np.einsum("nchw,ch->ncw", x.data, w)[:, :, None, :]

    def fn(g):
        g2 = g[:, :, 0, :]
        gk = np.einsum("ncw,nchw->ch", g2, x.data)[:, None, :, None] if kernel.requires_grad else None
        gx = w[None, :, :, None] * g2[:, :, None, :] if x.requires_grad else None
        return gx, gk

    return _make(out, (x, kernel), "conv2d", fn)


def avg_pool2d(x: Tensor, window, stride) -> Tensor:
    N, C, H, W = x.shape
    ph, pw = window
    sh, sw = stride
    if ph > H or pw > W:
        raise ValueError(f"pool window {window} larger than input {(H, W)}")
    Ho, Wo = (H - ph) // sh + 1, (W - pw) // sw + 1
    win = sliding_window_view(x.data, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = win.mean(axis=(-2, -1))

    def fn(g):
        gx = np.zeros_like(x.data)
        share = g / (ph * pw)
        for i in range(ph):
            for j in range(pw):
                gx[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw] += share
        return (gx,)

    return _make(out, (x,), "avg_pool2d", fn)


# --------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over axis 1 of an (N,C,H,W) tensor.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place; in eval mode the running statistics
    turn the op into a fixed per-channel affine map.
    """
    axes = (0, 2, 3)
    bshape = (1, -1, 1, 1)
    g_ = gamma.data.reshape(bshape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu.ravel()
        running_var *= 1 - momentum
        running_var += momentum * var.ravel() * (m / max(m - 1, 1))
    else:
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = g_ * xhat + beta.data.reshape(bshape)

    def fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g_
        if training:
            m = x.size // x.shape[1]
            dx = inv / m * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), "batch_norm", fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    D = x.shape[-1]

    def fn(g):
        lead = tuple(range(x.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv / D * (
            D * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _make(gamma.data * xhat + beta.data, (x, gamma, beta), "layer_norm", fn)


# --------------------------------------------------------------------------
# probability


def softmax(x: Tensor) -> Tensor:
    if x.shape[-1] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), "softmax", fn)


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy of (N,C) logits against integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    N, C = logits.shape
    if targets.shape != (N,):
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    logp = log_softmax_np(logits.data)
    loss = -logp[np.arange(N), targets].mean()

    def fn(g):
        p = np.exp(logp)
        p[np.arange(N), targets] -= 1.0
        return (p * (g / N),)

    return _make(np.array(loss), (logits,), "cross_entropy", fn)


# --------------------------------------------------------------------------
# randomness


@dataclass
class RngState:
    """Counter-based random stream: the same ``(seed, counter)`` gives the same draws.

    Backed by numpy's Philox bit generator; the counter occupies a high word
    of the Philox counter so successive streams never overlap.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bg = np.random.Philox(key=self.seed & (2**64 - 1), counter=[0, 0, self.counter, 0])
        self.counter += 1
        return np.random.Generator(bg)


def dropout(x: Tensor, p: float, training: bool, rng: RngState | None = None, mask=None):
    """Inverted dropout. Returns ``(out, mask)``; pass ``mask`` back in to replay it."""
    if not training or p == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ValueError("dropout in train mode needs an RngState or a recorded mask")
        keep = rng.generator().random(x.shape) >= p
        mask = keep / (1.0 - p)
    if mask.shape != x.shape:
        raise ValueError(f"replayed dropout mask {mask.shape} does not match input {x.shape}")

    def fn(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), "dropout", fn), mask


# --------------------------------------------------------------------------
# attention


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def multihead_attention(x: Tensor, heads: int, params: dict, prefix: str = "") -> Tensor:
    """Scaled dot-product self-attention over tokens of ``x`` (N,T,D).

    ``params`` must hold ``wq, bq, wk, bk, wv, bv, wo, bo`` (optionally under
    ``prefix``); projection matrices are (D,D).
    """
    N, T, D = x.shape
    if D % heads:
        raise ValueError(f"embedding dim {D} not divisible by {heads} heads")
    dh = D // heads

    def split(t):
        return transpose(reshape(t, (N, T, heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, params[prefix + "wq"], params[prefix + "bq"]))
    k = split(linear(x, params[prefix + "wk"], params[prefix + "bk"]))
    v = split(linear(x, params[prefix + "wv"], params[prefix + "bv"]))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = softmax(scores)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (N, T, D))
    return linear(ctx, params[prefix + "wo"], params[prefix + "bo"])


# --------------------------------------------------------------------------
# verification


def grad_check(
    fn: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-5,
    indices=None,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``fn`` maps a tensor shaped like ``x`` to a scalar tensor. ``indices``
    optionally restricts the comparison to a subset of flat coordinates.
    The per-coordinate error is ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    t = Tensor(base.copy(), requires_grad=True)
    y = fn(t)
    if not np.all(np.isfinite(y.data)):
        raise FloatingPointError("function output is not finite")
    backward(y)
    g_ad = t.grad.ravel()
    idx = np.arange(base.size) if indices is None else np.asarray(indices)
    flat = base.ravel()
    worst = 0.0
    for i in idx:
        saved = flat[i]
        flat[i] = saved + eps
        fp = float(fn(Tensor(base.copy())).data)
        flat[i] = saved - eps
        fm = float(fn(Tensor(base.copy())).data)
        flat[i] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("function output is not finite")
        g_fd = (fp - fm) / (2 * eps)
        err = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# parameter store


def save_params(path, arrays: dict, extra: dict | None = None) -> dict:
    """Write named arrays as ``<path>.bin`` (little-endian f64 payloads) + ``<path>.json``.

    The JSON manifest lists, in file order, each name with its shape, byte
    offset and byte length, plus a sha256 of the payload file. ``extra`` is
    stored verbatim under ``"extra"`` (model config, etc.).
    """
    path = Path(path)
    entries, offset, chunks = [], 0, []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name].data if isinstance(arrays[name], Tensor) else arrays[name])
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(payload)})
        offset += len(payload)
        chunks.append(payload)
    blob = b"".join(chunks)
    path.with_suffix(".bin").write_bytes(blob)
    manifest = {
        "format": "neurocam-params/1",
        "dtype": "<f8",
        "sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
        "extra": extra or {},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_params(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_params`; returns ``(arrays, extra)``."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError(f"parameter payload digest mismatch for {path}")
    arrays = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest.get("extra", {})
