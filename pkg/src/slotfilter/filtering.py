"""Class-aware slot filtering and attention-weighted patch re-embedding.

Slots are scored by cosine similarity to the class token, min-max scaled,
thresholded into a hard mask, and the attention rows of the surviving slots
are averaged into one weight per patch. Patches are scaled by that weight and
shifted by ``lambda * class_token``.

The mask is a hard selection and carries no gradient; gradients reach the
slot-attention parameters only through the averaged attention rows.
"""
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .tensor import Tensor, add, as_tensor, div, l2_normalize, mul, reshape, sum_

DEGENERATE_SPAN = 1e-12
MASK_MODES = ("weighted", "binary")


@dataclass(frozen=True)
class FilterConfig:
    threshold: float = 0.5
    mask_mode: str = "weighted"
    lam: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise UsageError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.mask_mode not in MASK_MODES:
            raise UsageError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.lam < 0:
            raise UsageError(f"lambda must be non-negative, got {self.lam}")


@dataclass
class FilterResult:
    similarity: Tensor
    similarity_norm: np.ndarray
    mask: np.ndarray
    n_passing: np.ndarray
    combined: Tensor
    weighted_embeddings: Tensor
    refined: Tensor


def slot_similarity(slots, class_token):
    """Cosine similarity of each slot (``(..., N, D)``) to the token (``(..., D)``)."""
    s = l2_normalize(slots, axis=-1)
    c = l2_normalize(class_token, axis=-1)
    return sum_(mul(s, _expand(c, -2)), axis=-1)


def _expand(t, axis):
    t = as_tensor(t)
    shape = list(t.shape)
    shape.insert(axis % (t.ndim + 1), 1)
    return reshape(t, tuple(shape))


def minmax_normalize(similarity):
    """Scale the last axis to [0, 1]; all-equal inputs map to all ones."""
    x = np.asarray(similarity.data if isinstance(similarity, Tensor) else similarity,
                   dtype=np.float64)
    if x.shape[-1] < 2:
        raise UsageError("min-max filtering needs at least two slots")
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span < DEGENERATE_SPAN
    out = (x - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 1.0, out)


def make_mask(similarity_norm, threshold=0.5):
    """Hard slot mask ``norm > threshold`` and the per-item survivor count."""
    m = (np.asarray(similarity_norm) > threshold).astype(np.float64)
    return m, m.sum(axis=-1)


def combine_attention(attn, mask, n_passing):
    """Mean of the surviving slots' attention rows: ``(..., N, P) -> (..., P)``."""
    n_passing = np.asarray(n_passing, dtype=np.float64)
    if np.any(n_passing < 1):
        raise AssertionError("no slot passed the mask; min-max scaling guarantees one")
    masked = mul(attn, np.asarray(mask, dtype=np.float64)[..., None])
    return div(sum_(masked, axis=-2), n_passing[..., None])


def apply_filter(embeddings, combined, mode="weighted"):
    """Scale patch rows by the combined attention (weighted) or a 0/1 cut (binary).

    The binary cut keeps patches whose weight exceeds half the largest weight
    of the same image.
    """
    if mode == "weighted":
        return mul(embeddings, _expand(combined, -1))
    if mode == "binary":
        a = combined.data if isinstance(combined, Tensor) else np.asarray(combined)
        keep = (a > 0.5 * a.max(axis=-1, keepdims=True)).astype(np.float64)
        return mul(embeddings, keep[..., None])
    raise UsageError(f"unknown mask mode {mode!r}")


def class_aware_add(weighted, class_token, lam=2.0):
    return add(weighted, mul(_expand(class_token, -2), float(lam)))


def filter_features(embeddings, class_token, slot_state, config=FilterConfig()):
    sim = slot_similarity(slot_state.slots, class_token)
    norm = minmax_normalize(sim)
    mask, n_passing = make_mask(norm, config.threshold)
    combined = combine_attention(slot_state.attention, mask, n_passing)
    weighted = apply_filter(embeddings, combined, config.mask_mode)
    refined = class_aware_add(weighted, class_token, config.lam)
    return FilterResult(similarity=sim, similarity_norm=norm, mask=mask, n_passing=n_passing,
                        combined=combined, weighted_embeddings=weighted, refined=refined)
