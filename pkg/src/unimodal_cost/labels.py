"""Target label distributions over the disparity bins ``0..d_max``.

Four flavours are supported: one-hot, 3-pixel-hot with ordered weights, and
the Gaussian and Laplacian noise-sampling targets obtained by discretising the
observation-noise density around the ground-truth disparity.

One-hot and 3-pixel targets snap ``d_gt`` to the nearest integer (half to
even). Gaussian and Laplacian targets keep the sub-pixel value. All targets
are renormalised over the valid bin range, so a peak near a volume edge keeps
total mass 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import DomainError

DEFAULT_SIGMA = 1.0
DEFAULT_SCALE = 1.0
DEFAULT_THREE_PIXEL_WEIGHTS = (0.5, 0.2, 0.05)


@dataclass(frozen=True)
class OneHot:
    name = "one_hot"


@dataclass(frozen=True)
class ThreePixel:
    weights: Tuple[float, float, float] = DEFAULT_THREE_PIXEL_WEIGHTS
    name = "three_pixel"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3:
            raise DomainError("three-pixel weights must be a triple")
        if not (w[0] >= w[1] >= w[2] >= 0.0 and w[0] > 0.0):
            raise DomainError(f"three-pixel weights must satisfy w0 >= w1 >= w2 >= 0, w0 > 0; got {w}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class Gaussian:
    sigma: float = DEFAULT_SIGMA
    name = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"Gaussian sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class Laplacian:
    scale: float = DEFAULT_SCALE
    name = "laplacian"

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"Laplacian scale must be > 0, got {self.scale}")


LabelKind = Union[OneHot, ThreePixel, Gaussian, Laplacian]


@dataclass(frozen=True)
class LabelDistribution:
    d_max: int
    phi: np.ndarray

    @property
    def peak(self) -> int:
        return int(np.argmax(self.phi))

    def mean(self) -> float:
        return float(self.phi @ np.arange(self.d_max + 1))


def _check_targets(d_gt, d_max):
    d = np.asarray(d_gt, dtype=np.float64)
    if d_max < 1 or int(d_max) != d_max:
        raise DomainError(f"d_max must be an integer >= 1, got {d_max}")
    if d.size and (not np.all(np.isfinite(d)) or d.min() < 0 or d.max() > d_max):
        raise DomainError(f"ground-truth disparity must lie in [0, {d_max}]")
    return d


def _softmax_last(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def label_rows(kind: LabelKind, d_gt, d_max: int) -> np.ndarray:
    """Target rows for an array of ground-truth disparities.

    Returns an array of shape ``d_gt.shape + (d_max + 1,)``.
    """
    d = _check_targets(d_gt, d_max)[..., None]
    idx = np.arange(d_max + 1, dtype=np.float64)
    if isinstance(kind, OneHot):
        return (idx == np.rint(d)).astype(np.float64)
    if isinstance(kind, ThreePixel):
        offset = np.abs(idx - np.rint(d))
        w = np.zeros(offset.shape)
        for j, lam in enumerate(kind.weights):
            w[offset == j] = lam
        return w / w.sum(axis=-1, keepdims=True)
    if isinstance(kind, Gaussian):
        return _softmax_last(-((idx - d) ** 2) / (2.0 * kind.sigma**2))
    if isinstance(kind, Laplacian):
        return _softmax_last(-np.abs(idx - d) / kind.scale)
    raise DomainError(f"unknown label kind {kind!r}")


def label_distribution(kind: LabelKind, d_gt: float, d_max: int) -> LabelDistribution:
    return LabelDistribution(int(d_max), label_rows(kind, float(d_gt), d_max))


def one_hot(d_gt, d_max):
    return label_distribution(OneHot(), d_gt, d_max)


def three_pixel(d_gt, d_max, weights=DEFAULT_THREE_PIXEL_WEIGHTS):
    return label_distribution(ThreePixel(tuple(weights)), d_gt, d_max)


def gaussian_label(d_gt, d_max, sigma=DEFAULT_SIGMA):
    return label_distribution(Gaussian(sigma), d_gt, d_max)


def laplacian_label(d_gt, d_max, scale=DEFAULT_SCALE):
    return label_distribution(Laplacian(scale), d_gt, d_max)


def label_volume(kind: LabelKind, gt, d_max: int) -> np.ndarray:
    """Target rows for every pixel of a disparity map; zero rows where invalid."""
    out = np.zeros(gt.values.shape + (d_max + 1,))
    out[gt.valid] = label_rows(kind, gt.values[gt.valid], d_max)
    return out


def parse_label_kind(name, sigma=DEFAULT_SIGMA, scale=DEFAULT_SCALE,
                     weights=DEFAULT_THREE_PIXEL_WEIGHTS):
    """Build a label kind from its short name; ``None``/``"none"`` gives ``None``."""
    if name is None:
        return None
    key = str(name).strip().lower().replace("-", "_")
    if key in ("none", ""):
        return None
    if key in ("one_hot", "onehot"):
        return OneHot()
    if key in ("three_pixel", "neighbor", "3px"):
        return ThreePixel(tuple(weights))
    if key == "gaussian":
        return Gaussian(float(sigma))
    if key == "laplacian":
        return Laplacian(float(scale))
    raise DomainError(f"unknown label kind {name!r}")
