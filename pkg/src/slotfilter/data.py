"""Patch-feature stores: binary file format, synthetic generation, episode sampling.

File layout (all integers little-endian)::

    magic       4 bytes   b"SAFF"
    version     u16       1
    P           u32       patches per image
    D           u32       embedding width
    n_classes   u32
    n_images    u64
    class names n_classes x (u32 byte length, UTF-8 bytes)
    records     n_images x (label u32, class token D x f32, patches P x D x f32 row-major)

Split membership lives next to the binary file in ``<path>.splits``: one line
per class, ``<split>\\t<class name>``, split being train, val or test.
"""
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, FormatError, InsufficientDataError, LabelRangeError,
                     TruncatedError, UsageError, VersionError)
from .rng import RNG

MAGIC = b"SAFF"
VERSION = 1
SPLITS = ("train", "val", "test")
_HEADER = struct.Struct("<4sHIIIQ")
VIT_PATCHES = 196
VIT_DIM = 384


@dataclass
class ImageFeatures:
    label: int
    patches: np.ndarray
    class_token: np.ndarray


@dataclass
class FeatureStore:
    """Images of one or more classes sharing a patch count and width.

    ``labels``, ``tokens`` and ``patches`` are parallel arrays over images.
    ``splits`` maps split name to the labels it owns; ``split`` tags a store
    restricted to one of them. ``relevant`` (synthetic stores only, never
    written to disk) flags the patches that carry the class prototype.
    """

    class_names: list
    labels: np.ndarray
    tokens: np.ndarray
    patches: np.ndarray
    splits: dict = field(default_factory=dict)
    split: str = None
    relevant: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        self.patches = np.asarray(self.patches, dtype=np.float64)
        n = self.labels.shape[0]
        if self.patches.ndim != 3 or self.patches.shape[0] != n or self.tokens.shape != (n, self.dim):
            raise FormatError("labels, tokens and patches disagree in shape")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise LabelRangeError("label without a declared class name")
        if not (np.isfinite(self.tokens).all() and np.isfinite(self.patches).all()):
            raise FormatError("non-finite feature values")
        seen = set()
        for name in self.splits:
            if name not in SPLITS:
                raise FormatError(f"unknown split {name!r}")
            labs = set(int(x) for x in self.splits[name])
            if labs & seen:
                raise FormatError("a class is assigned to more than one split")
            seen |= labs

    @property
    def n_patches(self):
        return self.patches.shape[1]

    @property
    def dim(self):
        return self.patches.shape[2]

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i):
        return ImageFeatures(int(self.labels[i]), self.patches[i], self.tokens[i])

    @property
    def records(self):
        return [self[i] for i in range(len(self))]

    def class_labels(self):
        return np.unique(self.labels)

    def subset(self, split):
        """View restricted to the classes of ``split``; image ids keep their meaning via ``ids``."""
        if split not in self.splits:
            raise InsufficientDataError(f"store has no {split!r} split")
        keep = np.isin(self.labels, np.asarray(self.splits[split], dtype=np.int64))
        rel = None if self.relevant is None else self.relevant[keep]
        return FeatureStore(self.class_names, self.labels[keep], self.tokens[keep],
                            self.patches[keep], {split: list(self.splits[split])}, split, rel)


# --------------------------------------------------------------------------
# binary format


def to_bytes(store):
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, store.n_patches, store.dim,
                           len(store.class_names), len(store)))
    for name in store.class_names:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    tok = store.tokens.astype("<f4")
    pat = store.patches.astype("<f4")
    for i in range(len(store)):
        buf.write(struct.pack("<I", int(store.labels[i])))
        buf.write(tok[i].tobytes())
        buf.write(pat[i].tobytes())
    return buf.getvalue()


def from_bytes(raw):
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError("not a feature store (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncatedError("header truncated")
    _, version, p, d, n_classes, n_images = _HEADER.unpack_from(raw, 0)
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}")
    off = _HEADER.size
    names = []
    for _ in range(n_classes):
        if off + 4 > len(raw):
            raise TruncatedError("class-name table truncated")
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + n > len(raw):
            raise TruncatedError("class-name table truncated")
        names.append(raw[off:off + n].decode("utf-8"))
        off += n
    rec = 4 + 4 * d + 4 * p * d
    if len(raw) - off < rec * n_images:
        raise TruncatedError(f"expected {n_images} records, file ends early")
    if len(raw) - off > rec * n_images:
        raise FormatError("trailing bytes after the last record")
    body = np.frombuffer(raw, dtype=np.uint8, count=rec * n_images, offset=off)
    body = body.reshape(n_images, rec)
    labels = body[:, :4].copy().view("<u4").reshape(-1).astype(np.int64)
    if n_images and labels.max() >= n_classes:
        raise LabelRangeError(f"label {labels.max()} outside {n_classes} classes")
    tokens = body[:, 4:4 + 4 * d].copy().view("<f4").astype(np.float64).reshape(n_images, d)
    patches = body[:, 4 + 4 * d:].copy().view("<f4").astype(np.float64).reshape(n_images, p, d)
    return FeatureStore(names, labels, tokens, patches)


def splits_path(path):
    path = Path(path)
    return path.with_name(path.name + ".splits")


def save_store(store, path):
    path = Path(path)
    path.write_bytes(to_bytes(store))
    if store.splits:
        lines = []
        for name in SPLITS:
            for lab in store.splits.get(name, ()):
                lines.append(f"{name}\t{store.class_names[int(lab)]}\n")
        splits_path(path).write_text("".join(lines), encoding="utf-8")


def load_store(path):
    path = Path(path)
    store = from_bytes(path.read_bytes())
    sp = splits_path(path)
    if sp.exists():
        index = {name: i for i, name in enumerate(store.class_names)}
        splits = {}
        for n, line in enumerate(sp.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                split, name = line.split("\t", 1)
            except ValueError:
                raise FormatError(f"{sp}:{n}: expected '<split>\\t<class>'") from None
            if name not in index:
                raise LabelRangeError(f"{sp}:{n}: unknown class {name!r}")
            splits.setdefault(split, []).append(index[name])
        store = FeatureStore(store.class_names, store.labels, store.tokens, store.patches, splits)
    return store


# --------------------------------------------------------------------------
# synthetic features


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 25
    images_per_class: int = 30
    n_patches: int = 16
    dim: int = 16
    relevant_fraction: float = 0.3
    signal_noise: float = 0.1
    background_noise: float = 0.2
    background_scale: float = 1.0
    seed: int = 0
    n_val: int = 0
    n_test: int = 5

    def n_relevant(self):
        return int(math.ceil(round(self.relevant_fraction * self.n_patches, 9)))

    def validate(self):
        if not 0.0 < self.relevant_fraction <= 1.0:
            raise UsageError(f"relevant_fraction must be in (0, 1], got {self.relevant_fraction}")
        if round(self.relevant_fraction * self.n_patches, 9) < 1:
            raise UsageError("relevant_fraction * n_patches must be at least 1")
        if min(self.n_classes, self.images_per_class, self.n_patches, self.dim) < 1:
            raise UsageError("counts must be positive")
        if self.signal_noise < 0 or self.background_noise < 0:
            raise UsageError("noise levels must be non-negative")
        if self.n_val < 0 or self.n_test < 0 or self.n_val + self.n_test > self.n_classes:
            raise UsageError("val/test class counts exceed n_classes")


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate_synthetic(cfg):
    """Class prototypes planted on a random subset of patches over a shared background.

    Per class a prototype ``mu ~ N(0, I/D)``; per image ``ceil(rho*P)`` patches at
    random positions are ``mu + signal_noise * noise`` and the rest come from one
    background Gaussian (mean shared by every class, spread ``background_noise``).
    The class token is ``mu + signal_noise * noise``. Values are rounded to
    float32 so the store survives a save/load unchanged.
    """
    cfg.validate()
    rng = RNG(cfg.seed)
    p, d = cfg.n_patches, cfg.dim
    background = cfg.background_scale * rng.normal(d) / np.sqrt(d)
    protos = rng.normal((cfg.n_classes, d)) / np.sqrt(d)
    n_rel = cfg.n_relevant()
    n_img = cfg.n_classes * cfg.images_per_class
    labels = np.repeat(np.arange(cfg.n_classes), cfg.images_per_class)
    patches = np.empty((n_img, p, d))
    tokens = np.empty((n_img, d))
    relevant = np.zeros((n_img, p), dtype=bool)
    for i, c in enumerate(labels):
        pos = rng.choice(p, n_rel)
        relevant[i, pos] = True
        img = background + cfg.background_noise * rng.normal((p, d))
        img[pos] = protos[c] + cfg.signal_noise * rng.normal((n_rel, d))
        patches[i] = img
        tokens[i] = protos[c] + cfg.signal_noise * rng.normal(d)
    names = [f"class_{c:03d}" for c in range(cfg.n_classes)]
    n_train = cfg.n_classes - cfg.n_val - cfg.n_test
    splits = {"train": list(range(n_train))}
    if cfg.n_val:
        splits["val"] = list(range(n_train, n_train + cfg.n_val))
    if cfg.n_test:
        splits["test"] = list(range(n_train + cfg.n_val, cfg.n_classes))
    return FeatureStore(names, labels, _f32(tokens), _f32(patches), splits, relevant=relevant)


# --------------------------------------------------------------------------
# episodes


@dataclass
class Episode:
    n_way: int
    k_shot: int
    q_per_class: int
    classes: np.ndarray
    support_ids: np.ndarray
    query_ids: np.ndarray
    support_patches: np.ndarray
    support_tokens: np.ndarray
    query_patches: np.ndarray
    query_tokens: np.ndarray
    query_labels: np.ndarray

    @property
    def support_labels(self):
        return np.repeat(np.arange(self.n_way), self.k_shot)

    @property
    def n_support(self):
        return self.support_ids.shape[0]

    @property
    def n_query(self):
        return self.query_ids.shape[0]


def sample_episode(store, n_way, k_shot, q_per_class, rng):
    """Draw ``n_way`` classes, then ``k_shot + q_per_class`` distinct images of each.

    Support rows are grouped by class (class-major); query labels are the
    class's position in the draw.
    """
    if min(n_way, k_shot) < 1 or q_per_class < 0:
        raise UsageError("n_way and k_shot must be positive, q_per_class non-negative")
    classes = store.class_labels()
    if classes.size < n_way:
        raise InsufficientDataError(f"{n_way}-way episode needs {n_way} classes, "
                                    f"store{' split ' + store.split if store.split else ''} "
                                    f"has {classes.size}")
    need = k_shot + q_per_class
    chosen = classes[rng.choice(classes.size, n_way)]
    sup, qry = [], []
    for c in chosen:
        members = np.flatnonzero(store.labels == c)
        if members.size < need:
            raise InsufficientDataError(f"class {store.class_names[c]!r} has {members.size} "
                                        f"images, episode needs {need}")
        pick = members[rng.choice(members.size, need)]
        sup.append(pick[:k_shot])
        qry.append(pick[k_shot:])
    sup = np.concatenate(sup)
    qry = np.concatenate(qry) if q_per_class else np.array([], dtype=np.int64)
    return Episode(n_way, k_shot, q_per_class, chosen, sup, qry,
                   store.patches[sup], store.tokens[sup], store.patches[qry], store.tokens[qry],
                   np.repeat(np.arange(n_way), q_per_class))
