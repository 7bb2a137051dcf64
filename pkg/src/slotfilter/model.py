"""Trainable parameters and the full episode forward pass."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, UsageError
from .filtering import class_aware_add, filter_features
from .rng import RNG
from .scorer import ScorerParams, cross_entropy, init_scorer_params, score_episode
from .slot_attention import SlotAttentionParams, default_noise_scale, init_slot_params, run
from .tensor import Tensor, getitem


@dataclass
class ModelParams:
    slot: SlotAttentionParams
    scorer: ScorerParams

    def named(self):
        out = self.slot.named()
        out.update(self.scorer.named())
        return out

    def tensors(self):
        return list(self.named().values())

    @classmethod
    def from_named(cls, named):
        return cls(SlotAttentionParams.from_named(named), ScorerParams.from_named(named))

    def replace(self, **arrays):
        named = dict(self.named())
        for key, arr in arrays.items():
            named[key] = Tensor(arr, requires_grad=True)
        return ModelParams.from_named(named)

    @property
    def dim(self):
        return self.slot.dim

    @property
    def n_patches(self):
        return self.scorer.n_patches

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez(fh, **{k: t.data for k, t in self.named().items()})

    @classmethod
    def load(cls, path):
        try:
            with np.load(Path(path)) as z:
                named = {k: Tensor(z[k], requires_grad=True) for k in z.files}
            return cls.from_named(named)
        except (KeyError, ValueError, OSError) as exc:
            raise FormatError(f"cannot read parameters from {path}: {exc}") from None


def init_params(dim, n_patches, rng, scorer_hidden=64, zero_output=True):
    slot = init_slot_params(dim, rng.substream(0))
    scorer = init_scorer_params(n_patches, rng.substream(1), scorer_hidden, zero_output)
    return ModelParams(slot, scorer)


def refine_features(patches, tokens, params, cfg, rng, keep_history=False):
    """Slot attention plus filtering for a batch of images.

    Returns ``(refined, slot_state, filter_result)``; the last two are ``None``
    under the ``no_filter`` ablation, where ``refined = patches + lam * token``.
    """
    if cfg.ablation == "no_filter":
        return class_aware_add(patches, tokens, cfg.lam), None, None
    state = run(patches, tokens, cfg.n_slots, cfg.n_iters, params.slot, rng,
                noise_scale=default_noise_scale(tokens, cfg.slot_noise), keep_history=keep_history)
    result = filter_features(patches, tokens, state, cfg.filter)
    return result.refined, state, result


def forward_episode(ep, params, cfg, rng):
    """Loss and scores of one episode.

    Support and query images go through slot attention and filtering as one
    batch; ``rng`` supplies the slot-seed jitter.
    """
    if ep.n_query == 0:
        raise UsageError("episode has no queries")
    p, d = ep.support_patches.shape[1:]
    if d != params.dim or p != params.n_patches:
        raise DimensionError(f"episode features are P={p}, D={d}; parameters expect "
                             f"P={params.n_patches}, D={params.dim}")
    patches = np.concatenate([ep.support_patches, ep.query_patches])
    tokens = np.concatenate([ep.support_tokens, ep.query_tokens])
    refined, _, _ = refine_features(patches, tokens, params, cfg, rng)
    n_s = ep.n_support
    scores = score_episode(getitem(refined, slice(0, n_s)), getitem(refined, slice(n_s, None)),
                           ep.n_way, ep.k_shot, params.scorer)
    loss = cross_entropy(scores.probabilities, ep.query_labels)
    return loss, scores


def predict(scores):
    """Predicted class per query: first index of the largest probability."""
    return np.argmax(scores.probabilities.data, axis=0)


def episode_rng(seed, index):
    return RNG(seed).substream(index)
