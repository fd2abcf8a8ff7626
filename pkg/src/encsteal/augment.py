"""RandAugment-style view generation for tiny images.

Each image gets ``n`` ops drawn uniformly with replacement from ``op_set``,
every op applied at strength ``s = m / 30``. Magnitude mapping per op:

=================  =========================================================
identity           no-op
hflip              mirror along the width axis (strength ignored)
crop               random-resized crop; area fraction ~ U(1 - 0.75 s, 1),
                   nearest-neighbour resize back to H x W
brightness         multiply by 1 + U(-0.9, 0.9) s
contrast           scale deviations from the image mean by 1 + U(-0.9, 0.9) s
channel_drop       attenuate one random channel by the factor (1 - s)
cutout             zero a square of side round(s * H / 2) at a random centre
gaussian_noise     add N(0, (0.2 s)^2) per pixel
=================  =========================================================

Outputs are clipped to [0, 1]. Randomness per image comes from a stream
seeded by ``(rng_seed, epoch, sample index, branch)`` so batch order never
changes the augmentation a sample receives.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DimensionError

OPS = (
    "identity",
    "hflip",
    "crop",
    "brightness",
    "contrast",
    "channel_drop",
    "cutout",
    "gaussian_noise",
)
BRANCH_T, BRANCH_S = 0, 1


@dataclass(frozen=True)
class AugmentPolicy:
    n: int = 2
    m: int = 14
    op_set: tuple = OPS
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "op_set", tuple(self.op_set))
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.m <= 30:
            raise ConfigurationError(f"m must lie in [0, 30], got {self.m}")
        if not self.op_set:
            raise ConfigurationError("op_set must be non-empty")
        unknown = [op for op in self.op_set if op not in OPS]
        if unknown:
            raise ConfigurationError(f"unknown augmentation ops {unknown}")

    def to_dict(self):
        return {"n": self.n, "m": self.m, "op_set": list(self.op_set), "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sample_rng(seed, epoch, index, branch):
    return np.random.default_rng([int(seed), int(epoch), int(index), int(branch)])


def _crop(img, s, rng):
    _, h, w = img.shape
    area = rng.uniform(1.0 - 0.75 * s, 1.0)
    ch = max(1, int(round(h * np.sqrt(area))))
    cw = max(1, int(round(w * np.sqrt(area))))
    top = rng.integers(0, h - ch + 1)
    left = rng.integers(0, w - cw + 1)
    rows = top + (np.arange(h) * ch) // h
    cols = left + (np.arange(w) * cw) // w
    return img[:, rows][:, :, cols]


def _cutout(img, s, rng):
    _, h, w = img.shape
    side = int(round(s * h / 2))
    if side == 0:
        return img
    cy, cx = rng.integers(0, h), rng.integers(0, w)
    y0, x0 = max(0, cy - side // 2), max(0, cx - side // 2)
    out = img.copy()
    out[:, y0 : y0 + side, x0 : x0 + side] = 0.0
    return out


def _channel_drop(img, s, rng):
    out = img.copy()
    out[rng.integers(0, img.shape[0])] *= 1.0 - s
    return out


def apply_op(op, img, s, rng):
    if op == "identity":
        return img
    if op == "hflip":
        return img[:, :, ::-1]
    if op == "crop":
        return _crop(img, s, rng)
    if op == "brightness":
        return img * (1.0 + rng.uniform(-0.9, 0.9) * s)
    if op == "contrast":
        mean = img.mean()
        return (img - mean) * (1.0 + rng.uniform(-0.9, 0.9) * s) + mean
    if op == "channel_drop":
        return _channel_drop(img, s, rng)
    if op == "cutout":
        return _cutout(img, s, rng)
    if op == "gaussian_noise":
        return img + rng.normal(0.0, 0.2 * s, size=img.shape)
    raise ConfigurationError(f"unknown augmentation op {op!r}")


def rand_augment(image, policy, rng):
    """Apply ``policy.n`` randomly chosen ops to one [C, H, W] image in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"expected [C, H, W], got {image.shape}")
    s = policy.m / 30.0
    out = image
    for k in rng.integers(0, len(policy.op_set), size=policy.n):
        out = apply_op(policy.op_set[k], out, s, rng)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def augment_batch(batch, policy, epoch, indices, branch):
    batch = np.asarray(batch)
    out = np.empty_like(batch)
    for row, (img, idx) in enumerate(zip(batch, indices)):
        out[row] = rand_augment(img, policy, sample_rng(policy.rng_seed, epoch, idx, branch))
    return out


def make_views(batch, policy, epoch=0, indices=None):
    """Two independent augmentations of every image; row i of both outputs is sample i.

    ``indices`` identify samples for stream derivation (default ``0..B-1``);
    pass dataset sample ids so a sample's views do not depend on batch order.
    """
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise DimensionError(f"expected a non-empty [B, C, H, W] batch, got {batch.shape}")
    if indices is None:
        indices = np.arange(batch.shape[0])
    elif len(indices) != batch.shape[0]:
        raise DimensionError("indices must match the batch length")
    return (
        augment_batch(batch, policy, epoch, indices, BRANCH_T),
        augment_batch(batch, policy, epoch, indices, BRANCH_S),
    )
