"""Self-attention mechanisms and the feature-separated multi-head wrapper.

Three interchangeable kinds: dense softmax attention, entmax-1.5 sparse
attention (bisection solver, rows may contain exact zeros), and a
prob-sparse variant that computes full rows only for the queries with the
highest max-minus-mean sparsity score and hands every other query the mean
of the values (equivalently: a uniform attention row).

Recorded attention maps are row-stochastic for every kind; the reduced
per-feature map vector sums over the query axis, measuring how much
attention each representation position receives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _make, matmul, softmax
from .errors import ConfigError

__all__ = [
    "AttentionKind",
    "entmax15",
    "vanilla_attention",
    "entmax_attention",
    "probsparse_attention",
    "probsparse_top_u",
    "feature_separated_mha",
    "reduce_map",
]

KINDS = ("vanilla", "entmax15", "probsparse")


@dataclass(frozen=True)
class AttentionKind:
    """Which attention mechanism an encoding layer uses."""

    kind: str = "vanilla"
    probsparse_factor: float = 5.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attention kind {self.kind!r}, expected one of {KINDS}")
        if self.probsparse_factor <= 0:
            raise ConfigError("probsparse factor must be positive")


def entmax15(z: Tensor, axis: int = -1, n_iter: int = 60) -> Tensor:
    """1.5-entmax along an axis: p_i = [(z_i/2 - tau)+]^2 with sum(p) = 1.

    tau is located by bisection (n_iter >= 50 halvings of the bracketing
    interval [min(z/2)-1, max(z/2)]); the result is renormalized so the
    slice sums to one exactly while zero entries stay exactly zero.
    """
    if n_iter < 50:
        raise ConfigError("entmax15 bisection needs at least 50 iterations")
    x = np.moveaxis(z.data, axis, -1)
    # uniform shifts cancel in the solution; subtracting the max also keeps
    # the bracket tight
    u = x / 2.0
    u = u - u.max(axis=-1, keepdims=True)
    lo = u.min(axis=-1, keepdims=True) - 1.0
    hi = np.zeros_like(lo)
    for _ in range(n_iter):
        tau = 0.5 * (lo + hi)
        mass = np.square(np.maximum(u - tau, 0.0)).sum(axis=-1, keepdims=True)
        too_low = mass >= 1.0
        lo = np.where(too_low, tau, lo)
        hi = np.where(too_low, hi, tau)
    tau = 0.5 * (lo + hi)
    p = np.square(np.maximum(u - tau, 0.0))
    p = p / p.sum(axis=-1, keepdims=True)
    p = np.moveaxis(p, -1, axis).astype(z.data.dtype)

    def backward(g):
        # Jacobian on the support: diag(s) - s s^T / sum(s) with s = sqrt(p)
        s = np.sqrt(p)
        gs = (g * s).sum(axis=axis, keepdims=True)
        ssum = s.sum(axis=axis, keepdims=True)
        z._accumulate((s * (g - gs / ssum)).astype(z.data.dtype))

    return _make(p, (z,), backward, "entmax15")


def _head_average_map(weights: Tensor) -> Tensor:
    """Average the head axis (-3) of [..., h, D, D] attention weights."""
    return weights.mean(axis=-3)


def vanilla_attention(q: Tensor, k: Tensor, v: Tensor):
    """Dense softmax attention on [..., h, D, d_h] tensors.

    Returns (values [..., h, D, d_h], head-averaged map [..., D, D]).
    """
    d_h = q.shape[-1]
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))
    scores = scores * (1.0 / math.sqrt(d_h))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), _head_average_map(weights)


def entmax_attention(q: Tensor, k: Tensor, v: Tensor):
    """As vanilla attention but with entmax-1.5 in place of softmax."""
    d_h = q.shape[-1]
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))
    scores = scores * (1.0 / math.sqrt(d_h))
    weights = entmax15(scores, axis=-1)
    return matmul(weights, v), _head_average_map(weights)


def probsparse_top_u(D: int, c: float) -> int:
    """Number of sampled keys / retained queries: min(D, ceil(c ln D))."""
    if D < 1:
        raise ConfigError("attention needs at least one position")
    return min(D, math.ceil(c * math.log(D))) if D > 1 else 1


def probsparse_attention(q: Tensor, k: Tensor, v: Tensor, c: float,
                         rng: np.random.Generator):
    """Prob-sparse attention: full softmax rows only for the top-u queries.

    Query sparsity is scored as max - mean of the scaled scores against u
    sampled keys; non-selected queries receive the uniform row (their output
    is the mean of the values). Sampling is driven by the supplied seeded
    generator and shared across batch and head slices.
    """
    D = q.shape[-2]
    d_h = q.shape[-1]
    u = probsparse_top_u(D, c)
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))
    scores = scores * (1.0 / math.sqrt(d_h))

    if u >= D:
        weights = softmax(scores, axis=-1)
        return matmul(weights, v), _head_average_map(weights)

    # one sampled key set per query, without replacement
    sample_idx = np.argsort(rng.random((D, D)), axis=-1)[:, :u]         # [D, u]
    sampled = np.take_along_axis(
        scores.data, sample_idx.reshape((1,) * (scores.ndim - 2) + (D, u)), axis=-1
    )                                                                   # [..., D, u]
    sparsity = sampled.max(axis=-1) - sampled.mean(axis=-1)             # [..., D]
    order = np.argsort(-sparsity, axis=-1, kind="stable")
    selected = np.zeros(sparsity.shape, dtype=scores.data.dtype)
    np.put_along_axis(selected, order[..., :u], 1.0, axis=-1)

    full = softmax(scores, axis=-1)
    sel = Tensor(selected[..., None])
    uniform = Tensor(np.asarray((1.0 - selected[..., None]) / D, dtype=scores.data.dtype))
    weights = full * sel + uniform
    return matmul(weights, v), _head_average_map(weights)


def reduce_map(map_tensor: Tensor, axis: str = "queries") -> Tensor:
    """Reduce a row-stochastic [..., D, D] map to a per-position vector.

    "queries" sums over the query axis (attention received per position);
    "keys" sums each row instead, which is constant for stochastic maps and
    exists only as an explicit switch.
    """
    if axis == "queries":
        return map_tensor.sum(axis=-2)
    if axis == "keys":
        return map_tensor.sum(axis=-1)
    raise ConfigError(f"unknown attention reduce axis {axis!r}")


def feature_separated_mha(r: Tensor, params: dict, kind: AttentionKind, heads: int,
                          rng: np.random.Generator, reduce_axis: str = "queries",
                          record_full: bool = False):
    """Per-feature multi-head self-attention over [B, D, F*f_embed].

    Each of the F width-f_embed segments runs through its own Q/K/V/output
    projections (stacked as [F, f_embed, f_embed] weights) and h-head
    attention of the selected kind; segments are concatenated back in
    feature order. Returns (output [B, D, F*f_embed], reduced maps
    [B, F, D] still on the gradient graph, recorded full maps
    [B, F, D, D] as a detached array or None).
    """
    B, D, E = r.shape
    F, f_embed, _ = params["wq"].shape
    if F * f_embed != E:
        raise ConfigError(f"attention parameters cover width {F * f_embed}, input has {E}")
    if f_embed % heads != 0:
        raise ConfigError(f"f_embed {f_embed} not divisible by {heads} heads")
    d_h = f_embed // heads

    x = r.reshape(B, D, F, f_embed).transpose(2, 0, 1, 3)               # [F, B, D, f]

    def project(w, b):
        out = matmul(x, w.reshape(F, 1, f_embed, f_embed)) + b.reshape(F, 1, 1, f_embed)
        return out.reshape(F, B, D, heads, d_h).transpose(0, 1, 3, 2, 4)  # [F, B, h, D, d_h]

    q = project(params["wq"], params["bq"])
    k = project(params["wk"], params["bk"])
    v = project(params["wv"], params["bv"])

    if kind.kind == "vanilla":
        values, avg_map = vanilla_attention(q, k, v)
    elif kind.kind == "entmax15":
        values, avg_map = entmax_attention(q, k, v)
    else:
        values, avg_map = probsparse_attention(q, k, v, kind.probsparse_factor, rng)

    merged = values.transpose(0, 1, 3, 2, 4).reshape(F, B, D, f_embed)
    out = matmul(merged, params["wo"].reshape(F, 1, f_embed, f_embed))
    out = out + params["bo"].reshape(F, 1, 1, f_embed)
    out = out.transpose(1, 2, 0, 3).reshape(B, D, E)

    reduced = reduce_map(avg_map, reduce_axis).transpose(1, 0, 2)       # [B, F, D]
    full = np.ascontiguousarray(avg_map.data.transpose(1, 0, 2, 3)) if record_full else None
    return out, reduced, full
