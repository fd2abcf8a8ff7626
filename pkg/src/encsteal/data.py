"""Datasets: deterministic synthetic images, CIFAR binary records, subsets and shifts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, DataError, FormatError
from .nn.checkpoint import load_arrays, save_arrays

GENERATORS = ("blobs", "stripes")
SHIFTS = ("none", "template-swap", "noise-up", "class-superset")
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray | None = None
    classes: int = 0
    split: str = "all"
    ids: np.ndarray | None = None
    name: str = "dataset"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4 or len(self.images) == 0:
            raise DataError(f"images must be a non-empty [M, C, H, W] array, got {self.images.shape}")
        if self.ids is None:
            self.ids = np.arange(len(self.images))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.images),):
                raise DataError("labels must have one entry per image")
            if self.labels.min() < 0 or self.labels.max() >= self.classes:
                raise DataError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return len(self.images)

    def take(self, idx, split=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.images[idx],
            None if self.labels is None else self.labels[idx],
            self.classes,
            split or self.split,
            self.ids[idx],
            self.name,
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Class templates plus i.i.d. Gaussian pixel noise.

    ``variant`` offsets template geometry and colour by half a class step per
    unit; variant 1 is the "template-swap" surrogate domain.
    """

    classes: int = 4
    samples_per_class: int = 100
    image_size: tuple = (3, 8, 8)
    generator: str = "blobs"
    noise_sigma: float = 0.1
    seed: int = 0
    variant: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(d) for d in self.image_size))
        if self.generator not in GENERATORS:
            raise ConfigurationError(f"unknown generator {self.generator!r}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.classes < 1 or self.samples_per_class < 1:
            raise ConfigurationError("classes and samples_per_class must be >= 1")
        if len(self.image_size) != 3 or min(self.image_size) < 1:
            raise ConfigurationError(f"image_size must be (C, H, W), got {self.image_size}")

    def to_dict(self):
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _palette(phase):
    return 0.5 + 0.5 * np.cos(2 * np.pi * (phase + np.array([0.0, 1 / 3, 2 / 3])))


def class_templates(spec, class_ids=None):
    """Noise-free template image per class, shape [K, C, H, W]."""
    c, h, w = spec.image_size
    if min(h, w) < 4 or spec.classes > (h * w) // 4:
        raise ConfigurationError(
            f"{h}x{w} images are too small for {spec.classes} distinct class templates"
        )
    class_ids = range(spec.classes) if class_ids is None else class_ids
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    out = []
    for k in class_ids:
        phase = (k + 0.5 * spec.variant) / spec.classes
        colour = _palette(phase)[np.arange(c) % 3]
        if spec.generator == "blobs":
            angle = 2 * np.pi * phase
            cy = h / 2 + 0.3 * h * np.sin(angle)
            cx = w / 2 + 0.3 * w * np.cos(angle)
            width = min(h, w) / 5 * (1.0 + 0.3 * spec.variant)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
            img = 0.15 + 0.7 * blob[None] * colour[:, None, None]
        else:
            freq = 1 + k // 2
            coord = yy / h if k % 2 == 0 else xx / w
            wave = np.sin(2 * np.pi * (freq * coord + 0.25 * spec.variant))
            img = 0.5 + 0.35 * wave[None] * (2 * colour[:, None, None] - 1)
        out.append(img)
    return np.clip(np.stack(out), 0.0, 1.0)


def gen_synthetic(spec):
    """All ``classes * samples_per_class`` samples, class-major, split tag ``all``."""
    templates = class_templates(spec)
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.noise_sigma, size=(len(labels),) + spec.image_size)
    images = np.clip(templates[labels] + noise, 0.0, 1.0)
    return Dataset(images, labels, spec.classes, "all", name=f"synthetic-{spec.generator}-v{spec.variant}")


def shifted_variant(spec, shift):
    """A surrogate dataset whose distribution differs from ``gen_synthetic(spec)``."""
    if shift == "none":
        return gen_synthetic(spec)
    if shift == "template-swap":
        return gen_synthetic(replace(spec, variant=spec.variant + 1, seed=spec.seed + 1))
    if shift == "noise-up":
        sigma = 2 * spec.noise_sigma if spec.noise_sigma > 0 else 0.1
        return gen_synthetic(replace(spec, noise_sigma=sigma, seed=spec.seed + 1))
    if shift == "class-superset":
        base = gen_synthetic(replace(spec, seed=spec.seed + 1))
        extra = gen_synthetic(replace(spec, variant=spec.variant + 1, seed=spec.seed + 2))
        return Dataset(
            np.concatenate([base.images, extra.images]),
            np.concatenate([base.labels, extra.labels + spec.classes]),
            2 * spec.classes,
            "all",
            name=f"{base.name}+superset",
        )
    raise ConfigurationError(f"unknown shift {shift!r}; expected one of {SHIFTS}")


def train_test_split(ds, test_fraction=0.2, seed=0):
    """Seeded random split; sample ids are carried over so leakage can be audited."""
    if not 0 < test_fraction < 1:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    if n_test == 0 or n_test == len(ds):
        raise ConfigurationError(f"cannot split {len(ds)} samples with test_fraction={test_fraction}")
    return ds.take(np.sort(perm[n_test:]), "train"), ds.take(np.sort(perm[:n_test]), "test")


def subsample(ds, fraction, seed=0):
    """Uniform sample of ceil(fraction * M) items without replacement."""
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    k = math.ceil(fraction * len(ds))
    return ds.take(np.random.default_rng(seed).permutation(len(ds))[:k])


def load_cifar_binary(path, classes=10, split="train"):
    """Parse CIFAR-10 style records: 1 label byte then 3072 channel-planar pixel bytes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        raise FormatError(f"{path}: empty file, no CIFAR records")
    whole = len(raw) // CIFAR_RECORD
    if len(raw) % CIFAR_RECORD:
        raise FormatError(
            f"{path}: truncated record at byte offset {whole * CIFAR_RECORD} "
            f"({len(raw) % CIFAR_RECORD} of {CIFAR_RECORD} bytes)"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= classes:
        raise FormatError(f"{path}: label {labels.max()} outside [0, {classes})")
    images = records[:, 1:].reshape(whole, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return Dataset(images, labels, classes, split, name="cifar")


# the container stores float32 only, which is exact for integers below 2**24;
# ids are split into two 20-bit halves so any id below 2**40 survives
_ID_SPLIT = 2**20


def save_dataset(ds, path):
    if ds.ids.min() < 0 or ds.ids.max() >= _ID_SPLIT**2:
        raise DataError("sample ids must lie in [0, 2**40) to be stored")
    arrays = {
        "images": ds.images,
        "ids_hi": (ds.ids // _ID_SPLIT).astype(np.float32),
        "ids_lo": (ds.ids % _ID_SPLIT).astype(np.float32),
    }
    if ds.labels is not None:
        arrays["labels"] = ds.labels.astype(np.float32)
    return save_arrays(path, arrays, "dataset", {"classes": ds.classes, "split": ds.split, "name": ds.name})


def load_dataset(path):
    arrays, manifest = load_arrays(path)
    meta = manifest["meta"]
    labels = arrays.get("labels")
    return Dataset(
        arrays["images"],
        None if labels is None else labels.astype(np.int64),
        meta["classes"],
        meta["split"],
        arrays["ids_hi"].astype(np.int64) * _ID_SPLIT + arrays["ids_lo"].astype(np.int64),
        meta["name"],
    )
