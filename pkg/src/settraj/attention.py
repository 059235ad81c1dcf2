"""Masked scaled dot-product attention, multi-head attention and the set
attention block (SAB).

Mask convention: a key-mask entry of 1 EXCLUDES that key for that query, 0
includes it. Excluded keys receive exactly zero weight. A query row whose
keys are all excluded is degenerate: its weights and its attention output are
forced to exactly zero, so a surrounding residual connection passes the input
embedding through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import (
    ConfigError,
    DiffTensor,
    Parameter,
    ShapeError,
    add,
    affine,
    as_tensor,
    concat_axis,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax_rows,
    transpose,
)

# Finite stand-in for -inf in masked logits: large enough that exp() underflows
# to exactly 0 after row-max subtraction, small enough to stay finite.
NEG_INF_LOGIT = -1e30


@dataclass
class KeyMask:
    """Binary [n_queries x n_keys] key-exclusion mask (1 = exclude)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2:
            raise ShapeError(f"KeyMask must be 2-D, got shape {e.shape}")
        if not np.isin(e, (0, 1)).all():
            raise ValueError("KeyMask entries must be 0 or 1")
        self.entries = e.astype(np.float64)

    @property
    def fully_masked(self) -> np.ndarray:
        """Boolean flag per query row: every key excluded."""
        return self.entries.min(axis=-1) >= 1.0


MaskLike = Union[KeyMask, np.ndarray, None]


def _mask_array(m: MaskLike) -> Optional[np.ndarray]:
    if m is None:
        return None
    arr = m.entries if isinstance(m, KeyMask) else np.asarray(m, dtype=np.float64)
    return arr


def masked_attention(q, k, v, m: MaskLike = None):
    """Scaled dot-product attention with key exclusion.

    q: [..., n, d_k], k: [..., n_v, d_k], v: [..., n_v, d_v]; ``m`` is
    broadcastable to [..., n, n_v]. Returns ``(output, weights)`` where
    weight rows over included keys sum to 1 and fully-masked rows are all
    zero (as is the corresponding output row).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.values.shape[-1]
    if k.values.shape[-1] != d_k:
        raise ShapeError(f"query dim {d_k} != key dim {k.values.shape[-1]}")
    if k.values.shape[-2] != v.values.shape[-2]:
        raise ShapeError("key/value counts differ")

    logits = matmul(q, transpose(k, _swap_last_two(k.ndim)))
    mask = _mask_array(m)
    if mask is not None:
        logits = add(logits, DiffTensor(mask * NEG_INF_LOGIT))
    logits = scale(logits, 1.0 / np.sqrt(d_k))
    weights = softmax_rows(logits)
    if mask is not None:
        # A fully-excluded row softmaxes to uniform (all logits equal);
        # zero it out explicitly per the degenerate-row rule.
        keep = 1.0 - (np.broadcast_to(mask, logits.shape).min(axis=-1,
                                                              keepdims=True) >= 1.0)
        if (keep == 0.0).any():
            weights = mul(weights, DiffTensor(keep.astype(np.float64)))
    out = matmul(weights, v)
    return out, weights


def _swap_last_two(ndim: int):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes


@dataclass
class MhaParams:
    """Per-head projections plus output projection for multi-head attention."""

    wq: Sequence[Parameter]  # H matrices [d, d/H]
    wk: Sequence[Parameter]
    wv: Sequence[Parameter]
    wo: Parameter            # [d, d]

    @property
    def n_heads(self) -> int:
        return len(self.wq)


def multi_head_attention(q, k, v, m: MaskLike, p: MhaParams):
    """Concat of per-head masked attention, linearly mixed by ``wo``.

    Heads are evaluated in one batched pass (projections fused along the
    output axis, attention over a leading head axis); the math per head is
    exactly ``masked_attention`` over the head's projected inputs. Returns
    ``(output, head_avg_weights)``; the weights are the per-head attention
    matrices averaged over heads (plain ndarray, for export).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.values.shape[-1]
    H = p.n_heads
    if d % H != 0:
        raise ConfigError(f"model width {d} not divisible by {H} heads")

    def project(x, mats):
        # [..., n, d] @ [d, H*dh] -> [H, ..., n, dh]
        merged = matmul(x, concat_axis([w.tensor for w in mats], axis=-1))
        n = merged.shape[-2]
        lead = merged.shape[:-2]
        dh = merged.shape[-1] // H
        split = reshape(merged, lead + (n, H, dh))
        ndim = len(split.shape)
        axes = (ndim - 2,) + tuple(range(ndim - 2)) + (ndim - 1,)
        return transpose(split, axes)

    qh, kh, vh = project(q, p.wq), project(k, p.wk), project(v, p.wv)
    out_h, w_h = masked_attention(qh, kh, vh, m)
    ndim = len(out_h.shape)
    axes = tuple(range(1, ndim - 1)) + (0, ndim - 1)
    merged = transpose(out_h, axes)
    lead = merged.shape[:-2]
    out = matmul(reshape(merged, lead + (d,)), p.wo.tensor)
    return out, w_h.values.mean(axis=0)


@dataclass
class SabParams:
    """Parameters of one set attention block."""

    mha: MhaParams
    ln1_gain: Parameter
    ln1_bias: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter
    ff_w1: Parameter  # [d, hidden]
    ff_b1: Parameter
    ff_w2: Parameter  # [hidden, d]
    ff_b2: Parameter


def set_attention_block(x, m: MaskLike, p: SabParams):
    """Pre-norm-free transformer encoder block without positional encoding.

    Computes ``LayerNorm(h + rFFN(h))`` with ``h = LayerNorm(x + MHA(x,x,x,m))``.
    Permutation-equivariant over the set axis (second-to-last). Returns
    ``(output, head_avg_weights)``.
    """
    x = as_tensor(x)
    attn, weights = multi_head_attention(x, x, x, m, p.mha)
    h = layer_norm(add(x, attn), p.ln1_gain, p.ln1_bias)
    ff = affine(relu(affine(h, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2)
    out = layer_norm(add(h, ff), p.ln2_gain, p.ln2_bias)
    return out, weights
