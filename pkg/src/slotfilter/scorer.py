"""Dense patch-to-patch similarity, MLP pair scoring, and episode classification."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import (LOG_FLOOR, Tensor, add, as_tensor, log, matmul, mean, mul, l2_normalize,
                     relu, reshape, softmax, sum_, transpose)

DEFAULT_HIDDEN = 64


@dataclass
class ScorerParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor

    @property
    def n_patches(self):
        return int(round(np.sqrt(self.w1.shape[0])))

    def named(self):
        return {"score_w1": self.w1, "score_b1": self.b1, "score_w2": self.w2}

    @classmethod
    def from_named(cls, named):
        return cls(named["score_w1"], named["score_b1"], named["score_w2"])


def init_scorer_params(n_patches, rng, hidden=DEFAULT_HIDDEN, zero_output=True):
    """He-scaled first layer; the output layer starts at zero unless told otherwise.

    A zero output layer makes the untrained scorer return the same score for
    every pair, so an untrained model sits exactly at chance.
    """
    width = n_patches * n_patches
    w1 = rng.normal((width, hidden)) * np.sqrt(2.0 / width)
    w2 = np.zeros((hidden, 1)) if zero_output else rng.normal((hidden, 1)) / np.sqrt(hidden)
    return ScorerParams(Tensor(w1, requires_grad=True), Tensor(np.zeros(hidden), requires_grad=True),
                        Tensor(w2, requires_grad=True))


@dataclass
class EpisodeScores:
    pair_scores: Tensor
    aggregated: Tensor
    probabilities: Tensor


def dense_similarity(f_support, f_query):
    """Cosine similarity of every support patch (rows) with every query patch (columns)."""
    f_support, f_query = as_tensor(f_support), as_tensor(f_query)
    if f_support.shape != f_query.shape:
        raise DimensionError(f"support {f_support.shape} and query {f_query.shape} differ")
    s = l2_normalize(f_support, axis=-1)
    q = l2_normalize(f_query, axis=-1)
    return matmul(s, transpose(q, (1, 0)))


def dense_similarity_all(f_support, f_query):
    """All support/query pairs at once, flattened row-major.

    ``f_support`` is ``(S, P, D)`` and ``f_query`` is ``(Q, P, D)``; the result is
    ``(S, Q, P*P)`` where entry ``[s, q, a*P + b]`` compares support patch ``a``
    with query patch ``b``.
    """
    n_s, p, d = f_support.shape
    n_q = f_query.shape[0]
    if f_query.shape[1:] != (p, d):
        raise DimensionError(f"support {f_support.shape} and query {f_query.shape} disagree")
    s = reshape(l2_normalize(f_support, axis=-1), (n_s * p, d))
    q = reshape(l2_normalize(f_query, axis=-1), (n_q * p, d))
    sim = reshape(matmul(s, transpose(q, (1, 0))), (n_s, p, n_q, p))
    return reshape(transpose(sim, (0, 2, 1, 3)), (n_s, n_q, p * p))


def mlp_scores(flat, params):
    """Two-layer ReLU MLP over the last axis, one scalar per leading index.

    The output layer has no bias: a shift common to all pairs cancels in the
    class softmax.
    """
    flat = as_tensor(flat)
    if flat.shape[-1] != params.w1.shape[0]:
        raise DimensionError(f"scorer expects {params.w1.shape[0]} inputs, got {flat.shape[-1]}")
    lead = flat.shape[:-1]
    x = reshape(flat, (-1, flat.shape[-1]))
    h = relu(add(matmul(x, params.w1), params.b1))
    out = matmul(h, params.w2)
    return reshape(out, lead)


def score_pair(sim, params):
    sim = as_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {sim.shape}")
    return mlp_scores(reshape(sim, (1, -1)), params)[0]


def aggregate_shots(scores, n_way, k_shot):
    """Sum the ``k_shot`` contiguous support rows of each class: ``(N*K, Q) -> (N, Q)``."""
    scores = as_tensor(scores)
    if scores.shape[0] != n_way * k_shot:
        raise DimensionError(f"expected {n_way * k_shot} support rows, got {scores.shape[0]}")
    return sum_(reshape(scores, (n_way, k_shot) + scores.shape[1:]), axis=1)


def classify(s):
    """Column-wise softmax over classes."""
    return softmax(s, axis=0)


def cross_entropy(p, labels):
    """Mean over queries of ``-log p[label, q]``, the log clamped at 1e-12."""
    p = as_tensor(p)
    labels = np.asarray(labels, dtype=np.int64)
    n, q = p.shape
    if labels.shape != (q,):
        raise DimensionError(f"expected {q} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise UsageError(f"labels must lie in [0, {n})")
    onehot = np.zeros((n, q))
    onehot[labels, np.arange(q)] = 1.0
    picked = sum_(mul(p, onehot), axis=0)
    return mul(mean(log(picked, LOG_FLOOR)), -1.0)


def score_episode(f_support, f_query, n_way, k_shot, params):
    pair = reshape(mlp_scores(dense_similarity_all(f_support, f_query), params),
                   (f_support.shape[0], f_query.shape[0]))
    agg = aggregate_shots(pair, n_way, k_shot)
    return EpisodeScores(pair_scores=pair, aggregated=agg, probabilities=classify(agg))
