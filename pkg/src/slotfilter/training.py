"""Episodic training, evaluation, and the finite-difference gradient check."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import SynthConfig, generate_synthetic, sample_episode
from .errors import DivergenceError, InsufficientDataError, NonFiniteError
from .model import ModelParams, episode_rng, forward_episode, init_params, predict
from .rng import RNG
from .tensor import Graph, Tensor, backward, finite_diff_grad, relative_error

log = logging.getLogger(__name__)

# substream keys under the run seed
_PARAMS_KEY = 0
_TRAIN_KEY = 1
_EVAL_KEY = 2


def _split(store, name):
    if store.split == name or not store.splits:
        return store
    if name not in store.splits:
        raise InsufficientDataError(f"store has no {name!r} split")
    return store.subset(name)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.named().items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.named().items()}
        self.t = 0

    def step(self, params, grads):
        """Return new parameters; the inputs are left untouched."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        new = {}
        for k, t in params.named().items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            upd = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            new[k] = t.data - upd
        return params.replace(**new)


def train(store, cfg, params=None, on_step=None):
    """Adam on one sampled episode per step. Returns ``(params, losses)``.

    ``on_step(step, loss)`` is called after every update.
    """
    train_store = _split(store, "train")
    root = RNG(cfg.seed)
    if params is None:
        params = init_params(train_store.dim, train_store.n_patches, root.substream(_PARAMS_KEY),
                             cfg.scorer_hidden)
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    stream = root.substream(_TRAIN_KEY)
    losses = []
    for step in range(cfg.episodes_train):
        rng = stream.substream(step)
        ep = sample_episode(train_store, cfg.n_way, cfg.k_shot, cfg.q_per_class, rng)
        named = params.named()
        try:
            with Graph() as g:
                loss, _ = forward_episode(ep, params, cfg, rng)
            grads = backward(g, loss, list(named.values()))
            value = loss.item()
            params = opt.step(params, dict(zip(named, grads)))
        except NonFiniteError as exc:
            raise DivergenceError(f"training diverged at step {step}: {exc}") from None
        if not np.isfinite(value):
            raise DivergenceError(f"training diverged at step {step}: loss {value}")
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return params, losses


@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    episode_accuracies: np.ndarray = field(repr=False)
    correct: np.ndarray = field(repr=False)
    seed: int = 0

    def records(self):
        """Line records: one per episode, then a summary carrying the correctness bitmap."""
        for i, acc in enumerate(self.episode_accuracies):
            yield {"record": "episode", "index": i, "accuracy": float(acc)}
        yield {"record": "summary", "accuracy": self.accuracy, "ci95": self.ci95,
               "episodes": int(self.episode_accuracies.size), "seed": self.seed,
               "correct": "".join("1" if c else "0" for c in self.correct)}


def evaluate(store, params, cfg):
    """Accuracy (%) over ``cfg.episodes_eval`` test episodes with a 95% interval.

    Episode ``i`` is drawn from substream ``i`` of the evaluation seed, so two
    models evaluated with the same seed see identical episodes and slot jitter.
    The interval half-width is ``1.96 * std / sqrt(episodes)`` with the
    population standard deviation of per-episode accuracies.
    """
    test_store = _split(store, "test")
    stream = RNG(cfg.evaluation_seed).substream(_EVAL_KEY)
    accs = np.empty(cfg.episodes_eval)
    bits = []
    for i in range(cfg.episodes_eval):
        rng = stream.substream(i)
        ep = sample_episode(test_store, cfg.n_way, cfg.k_shot, cfg.q_per_class, rng)
        _, scores = forward_episode(ep, params, cfg, rng)
        ok = predict(scores) == ep.query_labels
        accs[i] = ok.mean()
        bits.append(ok)
    pct = 100.0 * accs
    n = max(cfg.episodes_eval, 1)
    mean = float(pct.mean()) if accs.size else float("nan")
    ci = float(1.96 * pct.std() / np.sqrt(n)) if accs.size else float("nan")
    correct = np.concatenate(bits) if bits else np.array([], dtype=bool)
    return EvalReport(mean, ci, pct, correct, cfg.evaluation_seed)


# --------------------------------------------------------------------------
# gradient check

GRADCHECK_CFG = TrainConfig(n_way=2, k_shot=1, q_per_class=2, n_slots=3, n_iters=2,
                            scorer_hidden=16, episodes_train=0, episodes_eval=0)


@dataclass
class GradCheckResult:
    errors: dict
    max_error: float
    seconds: float

    def passed(self, tol=1e-4):
        return self.max_error < tol


def grad_check(cfg=GRADCHECK_CFG, n_patches=6, dim=8, seed=0, h=1e-5, slot_noise=None):
    """Analytic vs central-difference gradients of one episode loss, per parameter tensor.

    The error of each tensor is ``|a - n| / max(|a| + |n|, 1e-8)`` in the
    Euclidean norm; ``max_error`` is the worst tensor.
    """
    if slot_noise is not None:
        cfg = cfg.with_(slot_noise=slot_noise)
    t0 = time.perf_counter()
    synth = SynthConfig(n_classes=cfg.n_way, images_per_class=cfg.k_shot + cfg.q_per_class,
                        n_patches=n_patches, dim=dim, relevant_fraction=0.5,
                        signal_noise=0.3, background_noise=0.6, seed=seed, n_test=0)
    store = generate_synthetic(synth)
    root = RNG(seed)
    params = init_params(dim, n_patches, root.substream(_PARAMS_KEY), cfg.scorer_hidden,
                         zero_output=False)
    ep = sample_episode(store, cfg.n_way, cfg.k_shot, cfg.q_per_class, root.substream(_TRAIN_KEY))
    noise_seed = root.substream(3).seed

    def loss_of(p):
        loss, _ = forward_episode(ep, p, cfg, RNG(noise_seed))
        return loss

    named = params.named()
    with Graph() as g:
        loss = loss_of(params)
    analytic = dict(zip(named, backward(g, loss, list(named.values()))))
    errors = {}
    for name, t in named.items():
        def f(arr, name=name):
            return loss_of(params.replace(**{name: arr})).item()
        numeric = finite_diff_grad(f, t.data, h)
        errors[name] = relative_error(analytic[name], numeric)
    worst = max(errors.values())
    return GradCheckResult(errors, worst, time.perf_counter() - t0)
