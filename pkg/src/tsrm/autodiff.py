"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ndarray and, when an operation involves at least
one gradient-requiring input, records a backward closure plus parent links.
``Tensor.backward()`` walks the (acyclic) graph in reverse topological order
and accumulates gradients with ``+=`` so shared subgraphs receive summed
contributions.

Everything runs in whatever dtype the inputs carry; the model uses float32
at runtime while gradient-check rigs push float64 through the same code.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special as _special

from .errors import ConfigError

__all__ = [
    "Tensor",
    "Parameter",
    "Adam",
    "matmul",
    "conv1d_depthwise",
    "conv1d_transpose_depthwise",
    "conv1d",
    "maxpool1d",
    "adaptive_maxpool1d",
    "group_norm",
    "gelu",
    "elu",
    "sigmoid",
    "softmax",
    "dropout",
    "concat",
    "bce_with_logits",
    "softmax_cross_entropy",
    "kaiming_uniform",
    "global_grad_norm",
    "clip_grad_norm",
]


class Tensor:
    """Dense n-dimensional array participating in a backward graph.

    ``grad`` is lazily allocated on first accumulation; ``None`` means an
    all-zero gradient. Graph nodes are immutable once created: ops return
    new tensors and never mutate ``data`` of their inputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None
        self._op = ""

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph plumbing ------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor through the recorded graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.data.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.data.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.data.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.data.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.data.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(np.asarray(-1, dtype=self.data.dtype)))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def narrow(self, axis: int, start: int, length: int):
        return narrow(self, axis, start, length)

    def square(self):
        return mul(self, self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _coerce(x, dtype) -> Tensor:
    """Wrap operand; python scalars adopt the other side's dtype."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ConfigError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ConfigError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# shape surgery
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(data, (a,), backward, "transpose")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _make(data, (a,), backward, "narrow")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return _make(data, tensors, backward, "concat")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis] if isinstance(axis, int) else int(np.prod([a.data.shape[ax] for ax in axis]))
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, _as_tensor(np.asarray(1.0 / count, dtype=a.data.dtype)))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + _special.erf(x * _INV_SQRT2))
    data = (x * cdf).astype(x.dtype)

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        a._accumulate((g * (cdf + x * pdf)).astype(x.dtype))

    return _make(data, (a,), backward, "gelu")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg = np.minimum(x, 0)
    expm = alpha * (np.exp(neg) - 1.0)
    data = np.where(x > 0, x, expm).astype(x.dtype)

    def backward(g):
        local = np.where(x > 0, np.ones_like(x), expm + alpha)
        a._accumulate((g * local).astype(x.dtype))

    return _make(data, (a,), backward, "elu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        a._accumulate((g * s * (1.0 - s)).astype(a.data.dtype))

    return _make(s, (a,), backward, "sigmoid")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate((s * (g - dot)).astype(a.data.dtype))

    return _make(s, (a,), backward, "softmax")


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=a.data.dtype)
    mask = keep * scale
    data = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return _make(data, (a,), backward, "dropout")


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------

def conv_output_length(L: int, k: int, dilation: int, stride: int) -> int:
    """Valid-convolution output length: floor((L - k_eff)/stride) + 1."""
    k_eff = (k - 1) * dilation + 1
    if k_eff > L:
        raise ConfigError(f"effective kernel {k_eff} (k={k}, dilation={dilation}) exceeds input length {L}")
    return (L - k_eff) // stride + 1


def conv1d_depthwise(x: Tensor, kernel: Tensor, bias: Optional[Tensor],
                     dilation: int = 1, stride: int = 1) -> Tensor:
    """Depthwise valid 1-d convolution.

    x: [B, C, L], kernel: [C, k], bias: [C] or None -> [B, C, L_out].
    Channel c is convolved only with kernel row c.
    """
    B, C, L = x.data.shape
    Ck, k = kernel.data.shape
    if Ck != C:
        raise ConfigError(f"depthwise kernel has {Ck} channels, input has {C}")
    L_out = conv_output_length(L, k, dilation, stride)
    span = (L_out - 1) * stride + 1
    out = np.zeros((B, C, L_out), dtype=x.data.dtype)
    for j in range(k):
        out += x.data[:, :, j * dilation: j * dilation + span: stride] * kernel.data[:, j][None, :, None]
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j * dilation: j * dilation + span: stride] += g * kernel.data[:, j][None, :, None]
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for j in range(k):
                gk[:, j] = (g * x.data[:, :, j * dilation: j * dilation + span: stride]).sum(axis=(0, 2))
            kernel._accumulate(gk)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _make(out, parents, backward, "conv1d_dw")


def conv1d_transpose_depthwise(x: Tensor, kernel: Tensor, dilation: int,
                               stride: int, target_len: int) -> Tensor:
    """Depthwise transposed 1-d convolution, fitted to target_len.

    x: [B, C, L_in], kernel: [C, k] -> [B, C, target_len]. The natural
    output length (L_in-1)*stride + k_eff is right-cropped or right-zero-
    padded to target_len.
    """
    B, C, L_in = x.data.shape
    Ck, k = kernel.data.shape
    if Ck != C:
        raise ConfigError(f"depthwise kernel has {Ck} channels, input has {C}")
    k_eff = (k - 1) * dilation + 1
    if target_len < k_eff:
        raise ConfigError(f"target length {target_len} shorter than effective kernel {k_eff}")
    natural = (L_in - 1) * stride + k_eff
    span = (L_in - 1) * stride + 1
    full = np.zeros((B, C, natural), dtype=x.data.dtype)
    for j in range(k):
        full[:, :, j * dilation: j * dilation + span: stride] += x.data * kernel.data[:, j][None, :, None]
    if natural >= target_len:
        out = full[:, :, :target_len].copy()
    else:
        out = np.zeros((B, C, target_len), dtype=x.data.dtype)
        out[:, :, :natural] = full

    def backward(g):
        gf = np.zeros((B, C, natural), dtype=g.dtype)
        gf[:, :, :min(natural, target_len)] = g[:, :, :min(natural, target_len)]
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx += gf[:, :, j * dilation: j * dilation + span: stride] * kernel.data[:, j][None, :, None]
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for j in range(k):
                gk[:, j] = (gf[:, :, j * dilation: j * dilation + span: stride] * x.data).sum(axis=(0, 2))
            kernel._accumulate(gk)

    return _make(out, (x, kernel), backward, "conv1d_tdw")


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1) -> Tensor:
    """Full valid 1-d convolution (no dilation).

    x: [B, C_in, L], weight: [C_out, C_in, k], bias: [C_out] -> [B, C_out, L_out].
    """
    B, Cin, L = x.data.shape
    Cout, Cin_w, k = weight.data.shape
    if Cin_w != Cin:
        raise ConfigError(f"conv1d weight expects {Cin_w} input channels, input has {Cin}")
    L_out = conv_output_length(L, k, 1, stride)
    starts = np.arange(L_out) * stride
    idx = starts[:, None] + np.arange(k)[None, :]          # [L_out, k]
    windows = x.data[:, :, idx]                            # [B, Cin, L_out, k]
    out = np.einsum("bilk,oik->bol", windows, weight.data, optimize=True)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.astype(x.data.dtype)

    def backward(g):
        if x.requires_grad:
            gw = np.einsum("bol,oik->bilk", g, weight.data, optimize=True)
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), slice(None), idx), gw)
            x._accumulate(gx)
        if weight.requires_grad:
            weight._accumulate(np.einsum("bol,bilk->oik", g, windows, optimize=True).astype(weight.data.dtype))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, backward, "conv1d")


def maxpool1d(x: Tensor, k: int, stride: int) -> Tensor:
    """Max pooling over the last axis; gradient routed to the first argmax."""
    B, C, L = x.data.shape
    if k > L:
        raise ConfigError(f"pool kernel {k} exceeds input length {L}")
    L_out = (L - k) // stride + 1
    starts = np.arange(L_out) * stride
    idx = starts[:, None] + np.arange(k)[None, :]
    windows = x.data[:, :, idx]                            # [B, C, L_out, k]
    arg = windows.argmax(axis=-1)                          # first max wins ties
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        src = idx[np.arange(L_out)[None, None, :], arg]   # absolute argmax positions
        gx = np.zeros_like(x.data)
        b_i, c_i = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        np.add.at(gx, (b_i[..., None], c_i[..., None], src), g)
        x._accumulate(gx)

    return _make(out, (x,), backward, "maxpool1d")


def adaptive_maxpool1d(x: Tensor, out_len: int) -> Tensor:
    """Adaptive max pooling: window i covers [floor(i*L/out), ceil((i+1)*L/out))."""
    B, C, L = x.data.shape
    out = np.empty((B, C, out_len), dtype=x.data.dtype)
    arg = np.empty((B, C, out_len), dtype=np.int64)
    for i in range(out_len):
        lo = (i * L) // out_len
        hi = -(-((i + 1) * L) // out_len)
        seg = x.data[:, :, lo:hi]
        a = seg.argmax(axis=-1)
        arg[:, :, i] = a + lo
        out[:, :, i] = np.take_along_axis(seg, a[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        b_i, c_i = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        np.add.at(gx, (b_i[..., None], c_i[..., None], arg), g)
        x._accumulate(gx)

    return _make(out, (x,), backward, "adaptive_maxpool1d")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization over [B, L, C] with channel groups.

    Each group is normalized to zero mean / unit variance over its
    (L x group-width) slice per sample, then scaled and shifted per channel.
    Zero-variance slices come out as zeros (eps guards the division).
    """
    B, L, C = x.data.shape
    if C % groups != 0:
        raise ConfigError(f"channel count {C} not divisible by {groups} groups")
    w = C // groups
    xg = x.data.reshape(B, L, groups, w)
    mean = xg.mean(axis=(1, 3), keepdims=True)
    var = xg.var(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).astype(x.data.dtype)
    out = xhat.reshape(B, L, C) * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat.reshape(B, L, C)).sum(axis=(0, 1)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 1)))
        if x.requires_grad:
            gh = (g * gamma.data).reshape(B, L, groups, w)
            m1 = gh.mean(axis=(1, 3), keepdims=True)
            m2 = (gh * xhat).mean(axis=(1, 3), keepdims=True)
            gx = inv * (gh - m1 - xhat * m2)
            x._accumulate(gx.reshape(B, L, C).astype(x.data.dtype))

    return _make(out, (x, gamma, beta), backward, "group_norm")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on logits, numerically stable."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray(loss.mean(), dtype=z.dtype)

    def backward(g):
        logits._accumulate((g * (_sigmoid(z) - y) / z.size).astype(z.dtype))

    return _make(data, (logits,), backward, "bce_with_logits")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of [B, C] logits against integer labels [B]."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    zmax = z.max(axis=-1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    picked = z[np.arange(z.shape[0]), labels]
    data = np.asarray((logsumexp - picked).mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(z.shape[0]), labels] -= 1.0
        logits._accumulate((g * p / z.shape[0]).astype(z.dtype))

    return _make(data, (logits,), backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------

class Parameter:
    """Named, trainable tensor. Freezing removes it from optimization and
    keeps its gradient buffer empty."""

    def __init__(self, name: str, tensor: Tensor, frozen: bool = False):
        self.name = name
        self.tensor = tensor
        self.tensor.requires_grad = not frozen
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = value
        self.tensor.requires_grad = not value
        if value:
            self.tensor.grad = None

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.shape}, frozen={self.frozen})"


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Adam:
    """Canonical Adam with bias correction; skips frozen parameters."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ConfigError(f"Adam betas must lie in (0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {p.name: np.zeros_like(p.data) for p in self.params}
        self._v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p in self.params:
            if p.frozen:
                p.tensor.grad = None  # keep the freeze contract: grad stays zero
                continue
            g = p.tensor.grad
            if g is None:
                raise RuntimeError(f"parameter {p.name} has no gradient; run backward first")
            m = self._m[p.name]
            v = self._v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)
            p.tensor.data = p.tensor.data - update


def global_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float((p.tensor.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad *= np.asarray(scale, dtype=p.tensor.grad.dtype)
    return norm
