"""Multi-head self-attention with optional dependency scaling.

For every head the alignment scores ``S = Q K^T / sqrt(d_k)`` are multiplied
elementwise by the dependency-scaled matrix (one matrix shared by all heads),
masked positions are set to -inf, and the softmax-weighted values of all
heads are concatenated in head order and projected by ``W_O``. Without a
scaled matrix the layer is the ordinary scaled dot-product attention.

Both unbatched ``(I, d_model)`` and batched ``(B, I, d_model)`` inputs are
accepted; matrices and masks follow the same convention.

Since the scale peaks at 1/sqrt(2 pi sigma^2) (about 0.399 at sigma=1), the
product also shrinks every score, acting like a softmax temperature on top
of the reweighting. No renormalization is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from depsan import tensor as T
from depsan.errors import DimensionMismatch, FullyMaskedRow
from depsan.scaling import AttentionMask, ScaledMatrix
from depsan.tensor import Tensor


@dataclass
class AttentionParams:
    """Per-head projections stacked along the first axis.

    ``w_q``, ``w_k``, ``w_v`` are (N, d_model, d_k); ``w_o`` is (N*d_k, d_model).
    """

    n_heads: int
    d_model: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise DimensionMismatch(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        head = (self.n_heads, self.d_model, self.d_k)
        for name in ("w_q", "w_k", "w_v"):
            if getattr(self, name).shape != head:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {head}")
        if self.w_o.shape != (self.n_heads * self.d_k, self.d_model):
            raise DimensionMismatch(f"w_o has shape {self.w_o.shape}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def init(cls, d_model: int, n_heads: int, rng: np.random.Generator) -> "AttentionParams":
        """Glorot-uniform initialization."""
        if n_heads < 1 or d_model % n_heads:
            raise DimensionMismatch(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        d_k = d_model // n_heads

        def uniform(shape, fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)

        return cls(
            n_heads,
            d_model,
            uniform((n_heads, d_model, d_k), d_model, d_k),
            uniform((n_heads, d_model, d_k), d_model, d_k),
            uniform((n_heads, d_model, d_k), d_model, d_k),
            uniform((n_heads * d_k, d_model), n_heads * d_k, d_model),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}


@dataclass
class AttentionTrace:
    """Intermediate values of one attention call (plain arrays, no graph).

    Per-head arrays are (N, I, I) or (N, I, d_k), with a leading batch axis
    for batched calls. ``allowed`` is the combined mask or None, and
    ``query_valid`` marks the rows that correspond to real tokens.
    """

    scores: np.ndarray
    scaled_scores: np.ndarray
    weights: np.ndarray
    head_outputs: np.ndarray
    output: np.ndarray
    allowed: np.ndarray | None = None
    query_valid: np.ndarray | None = None
    dependency_scaled: bool = False


def _mask_array(mask) -> np.ndarray | None:
    if mask is None:
        return None
    if isinstance(mask, AttentionMask):
        return mask.allowed
    return np.asarray(mask, dtype=bool)


def _batched(arr, batch, n, what):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape != (batch, n, n):
        raise DimensionMismatch(f"{what} has shape {arr.shape}, expected ({batch}, {n}, {n}) or ({n}, {n})")
    return arr


def deps_attention(H, Ds, params: AttentionParams, pad_mask=None, wink=None, query_valid=None):
    """Dependency-scaled multi-head attention; returns ``(output, trace)``.

    ``Ds`` is a :class:`ScaledMatrix`, an array, or None for the plain layer.
    ``pad_mask`` and ``wink`` are boolean "allowed" masks; their intersection
    is applied after the scaling, so the -inf sentinel is never multiplied.
    """
    H = T.as_tensor(H)
    unbatched = H.ndim == 2
    if unbatched:
        H = T.reshape(H, (1,) + H.shape)
    if H.ndim != 3 or H.shape[-1] != params.d_model:
        raise DimensionMismatch(f"input shape {H.shape} does not end in d_model={params.d_model}")
    B, n, _ = H.shape

    scale_arr = None
    if Ds is not None:
        values = Ds.values if isinstance(Ds, ScaledMatrix) else Ds
        scale_arr = _batched(np.asarray(values, dtype=np.float64), B, n, "scaled matrix")

    allowed = None
    for m in (_mask_array(pad_mask), _mask_array(wink)):
        if m is None:
            continue
        m = _batched(m, B, n, "mask")
        allowed = m if allowed is None else (allowed & m)
    if allowed is not None and not allowed.any(axis=-1).all():
        b, i = np.argwhere(~allowed.any(axis=-1))[0]
        raise FullyMaskedRow(f"row {i} of sentence {b} has no allowed position")

    x = T.reshape(H, (B, 1, n, params.d_model))
    q = T.matmul(x, params.w_q)
    k = T.matmul(x, params.w_k)
    v = T.matmul(x, params.w_v)
    s = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(params.d_k))
    s_tilde = s if scale_arr is None else T.mul_const(s, scale_arr[:, None])
    logits = s_tilde if allowed is None else T.masked_fill(s_tilde, ~allowed[:, None], -np.inf)
    w = T.softmax(logits)
    z = T.matmul(w, v)
    merged = T.reshape(T.swapaxes(z, 1, 2), (B, n, params.n_heads * params.d_k))
    out = T.matmul(merged, params.w_o)

    qv = None if query_valid is None else np.asarray(query_valid, dtype=bool).reshape(B, n)
    pick = (lambda a: a[0]) if unbatched else (lambda a: a)
    trace = AttentionTrace(
        scores=pick(s.data.copy()),
        scaled_scores=pick(s_tilde.data.copy()),
        weights=pick(w.data.copy()),
        head_outputs=pick(z.data.copy()),
        output=pick(out.data.copy()),
        allowed=None if allowed is None else pick(allowed),
        query_valid=None if qv is None else pick(qv),
        dependency_scaled=scale_arr is not None,
    )
    if unbatched:
        out = T.reshape(out, (n, params.d_model))
    return out, trace


def baseline_attention(H, params: AttentionParams, pad_mask=None, query_valid=None):
    """Scaled dot-product attention with no dependency scaling or wink mask."""
    return deps_attention(H, None, params, pad_mask=pad_mask, wink=None, query_valid=query_valid)


def row_entropy(weights: np.ndarray) -> np.ndarray:
    """Entropy in nats of each last-axis row; zero weights contribute 0."""
    w = np.asarray(weights, dtype=np.float64)
    logs = np.log(np.where(w > 0, w, 1.0))
    return -(w * logs).sum(axis=-1)


def attention_entropy(trace: AttentionTrace) -> np.ndarray:
    """Mean row entropy per head; padded query rows are skipped."""
    h = row_entropy(trace.weights)  # (..., N, I)
    if h.ndim == 2:
        h = h[None]
    valid = trace.query_valid
    if valid is None:
        valid = np.ones((h.shape[0], h.shape[-1]), dtype=bool)
    valid = np.asarray(valid, dtype=bool).reshape(h.shape[0], 1, h.shape[-1])
    mask = np.broadcast_to(valid, h.shape)
    return (h * mask).sum(axis=(0, 2)) / mask.sum(axis=(0, 2))


def mean_entropy(trace: AttentionTrace) -> float:
    """Entropy averaged over heads and rows."""
    return float(attention_entropy(trace).mean())
