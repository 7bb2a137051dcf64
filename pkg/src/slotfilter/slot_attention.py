"""Iterative slot attention seeded from the class token.

Slots start as jittered copies of the image's class token and compete for
patches through a softmax taken across the slot axis. Every function accepts
arbitrary leading batch axes: ``inputs`` is ``(..., P, D)``, ``class_token``
is ``(..., D)`` and slots are ``(..., N, D)``.
"""
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import (GRUWeights, Tensor, add, as_tensor, div, gru_cell, layer_norm, matmul,
                     mul, relu, softmax, sum_, transpose)

ATTN_EPS = 1e-8
DEFAULT_SLOTS = 5
DEFAULT_ITERS = 5
DEFAULT_NOISE = 0.1


@dataclass
class SlotAttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    gru: GRUWeights
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    ln_in_g: Tensor
    ln_in_b: Tensor
    ln_slot_g: Tensor
    ln_ff_g: Tensor
    ln_ff_b: Tensor

    @property
    def dim(self):
        return self.wq.shape[0]

    def named(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, GRUWeights):
                for k, t in val._asdict().items():
                    out[f"gru_{k}"] = t
            else:
                out[f.name] = val
        return out

    @classmethod
    def from_named(cls, named):
        gru = GRUWeights(**{k: named[f"gru_{k}"] for k in GRUWeights._fields})
        kw = {f.name: named[f.name] for f in fields(cls) if f.name != "gru"}
        return cls(gru=gru, **kw)


def init_slot_params(dim, rng, hidden=None):
    """Fan-in scaled Gaussian weights, zero biases, unit layer-norm gains."""
    hidden = 2 * dim if hidden is None else hidden

    def w(rows, cols):
        return Tensor(rng.normal((rows, cols)) / np.sqrt(rows), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n), requires_grad=True)

    gru = GRUWeights(wz=w(dim, dim), uz=w(dim, dim), bz=zeros(dim),
                     wr=w(dim, dim), ur=w(dim, dim), br=zeros(dim),
                     wh=w(dim, dim), uh=w(dim, dim), bh=zeros(dim))
    return SlotAttentionParams(
        wq=w(dim, dim), wk=w(dim, dim), wv=w(dim, dim), gru=gru,
        mlp_w1=w(dim, hidden), mlp_b1=zeros(hidden), mlp_w2=w(hidden, dim), mlp_b2=zeros(dim),
        ln_in_g=ones(dim), ln_in_b=zeros(dim), ln_slot_g=ones(dim),
        ln_ff_g=ones(dim), ln_ff_b=zeros(dim))


@dataclass
class SlotState:
    slots: Tensor
    attention: Tensor
    iterations_run: int
    history: list = field(default_factory=list, repr=False)


def default_noise_scale(class_token, rel=DEFAULT_NOISE):
    """``rel * RMS(class_token)`` per token (leading axes kept)."""
    tok = np.asarray(class_token.data if isinstance(class_token, Tensor) else class_token)
    return rel * np.sqrt((tok * tok).mean(axis=-1))


def init_slots(class_token, n_slots, noise_scale, rng):
    """``n_slots`` copies of the class token plus ``noise_scale`` Gaussian jitter."""
    if n_slots < 1:
        raise UsageError("n_slots must be at least 1")
    tok = np.asarray(class_token.data if isinstance(class_token, Tensor) else class_token,
                     dtype=np.float64)
    sigma = np.asarray(noise_scale, dtype=np.float64)
    if np.any(sigma < 0):
        raise UsageError("noise_scale must be non-negative")
    lead = tok.shape[:-1]
    base = np.broadcast_to(tok[..., None, :], lead + (n_slots, tok.shape[-1]))
    if not np.any(sigma > 0):
        return Tensor(base)
    xi = rng.normal(lead + (n_slots, tok.shape[-1]))
    return Tensor(base + sigma[..., None, None] * xi)


def _project_inputs(inputs, params):
    x = layer_norm(inputs, params.ln_in_g, params.ln_in_b)
    return matmul(x, params.wk), matmul(x, params.wv)


def _step(slots, k, v, params):
    d = params.dim
    # no shift before the query projection: it would move every slot's logit
    # for a patch equally and cancel in the slot-axis softmax
    q = matmul(layer_norm(slots, params.ln_slot_g, np.zeros(d)), params.wq)
    logits = mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d))
    attn = softmax(logits, axis=-2)
    weights = div(attn, add(sum_(attn, axis=-1, keepdims=True), ATTN_EPS))
    updates = matmul(weights, v)
    new = gru_cell(updates, slots, params.gru)
    hidden = relu(add(matmul(layer_norm(new, params.ln_ff_g, params.ln_ff_b), params.mlp_w1),
                      params.mlp_b1))
    new = add(new, add(matmul(hidden, params.mlp_w2), params.mlp_b2))
    return new, attn


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _check(slots, inputs, params):
    d = params.dim
    if inputs.shape[-1] != d or slots.shape[-1] != d:
        raise DimensionError(f"slot attention expects D={d}, got inputs {inputs.shape}, "
                             f"slots {slots.shape}")
    if inputs.shape[:-2] != slots.shape[:-2]:
        raise DimensionError(f"batch axes differ: inputs {inputs.shape}, slots {slots.shape}")


def attention_step(slots, inputs, params):
    """One refinement round; returns ``(new_slots, attn)`` with attn ``(..., N, P)``."""
    slots, inputs = as_tensor(slots), as_tensor(inputs)
    _check(slots, inputs, params)
    k, v = _project_inputs(inputs, params)
    return _step(slots, k, v, params)


def run(inputs, class_token, n_slots=DEFAULT_SLOTS, n_iters=DEFAULT_ITERS, params=None, rng=None,
        noise_scale=None, keep_history=False):
    """Seed slots from ``class_token`` and refine them ``n_iters`` times.

    ``noise_scale=None`` uses ``0.1 * RMS(class_token)``. The returned attention
    is the last iteration's map.
    """
    if n_iters < 1:
        raise UsageError("n_iters must be at least 1")
    inputs = as_tensor(inputs)
    if noise_scale is None:
        noise_scale = default_noise_scale(class_token)
    slots = init_slots(class_token, n_slots, noise_scale, rng)
    _check(slots, inputs, params)
    k, v = _project_inputs(inputs, params)
    history = []
    attn = None
    for _ in range(n_iters):
        slots, attn = _step(slots, k, v, params)
        if keep_history:
            history.append(attn.data)
    return SlotState(slots=slots, attention=attn, iterations_run=n_iters, history=history)
