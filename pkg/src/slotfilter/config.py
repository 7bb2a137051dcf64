"""Run configuration and the plain-text ``key=value`` config file format.

Lines look like ``lr = 0.001``; ``#`` starts a comment. Keys are the field
names of :class:`TrainConfig` (``lambda`` is accepted for ``lam``).
"""
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import UsageError
from .filtering import FilterConfig, MASK_MODES
from .scorer import DEFAULT_HIDDEN
from .slot_attention import DEFAULT_ITERS, DEFAULT_NOISE, DEFAULT_SLOTS

ABLATIONS = ("full", "no_filter")


@dataclass(frozen=True)
class TrainConfig:
    episodes_train: int = 2000
    episodes_eval: int = 1000
    n_way: int = 5
    k_shot: int = 5
    q_per_class: int = 15
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_seed: int = None
    threshold: float = 0.5
    mask_mode: str = "weighted"
    lam: float = 2.0
    n_slots: int = DEFAULT_SLOTS
    n_iters: int = DEFAULT_ITERS
    slot_noise: float = DEFAULT_NOISE
    scorer_hidden: int = DEFAULT_HIDDEN
    ablation: str = "full"

    def __post_init__(self):
        for name in ("n_way", "k_shot", "q_per_class", "n_slots", "n_iters", "scorer_hidden"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.episodes_train < 0 or self.episodes_eval < 0:
            raise UsageError("episode counts must be non-negative")
        if self.ablation not in ABLATIONS:
            raise UsageError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.mask_mode not in MASK_MODES:
            raise UsageError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.lr < 0 or self.slot_noise < 0:
            raise UsageError("lr and slot_noise must be non-negative")
        FilterConfig(threshold=self.threshold, mask_mode=self.mask_mode, lam=self.lam)

    @property
    def filter(self):
        return FilterConfig(threshold=self.threshold, mask_mode=self.mask_mode, lam=self.lam)

    @property
    def evaluation_seed(self):
        return self.seed if self.eval_seed is None else self.eval_seed

    def to_dict(self):
        return asdict(self)

    def with_(self, **kw):
        return replace(self, **kw)


_ALIASES = {"lambda": "lam"}


def _coerce(name, text):
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    if name not in kinds:
        raise UsageError(f"unknown config key {name!r}")
    default = getattr(TrainConfig, name)
    text = text.strip()
    if name == "eval_seed":
        return None if text.lower() in ("", "none") else int(text)
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text):
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value")
        key, value = line.split("=", 1)
        key = _ALIASES.get(key.strip(), key.strip().replace("-", "_"))
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, **overrides):
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for key, val in overrides.items():
        if val is not None:
            values[_ALIASES.get(key, key)] = val
    return TrainConfig(**values)
