"""Dense cost volumes, softmax over negated costs, softargmin and WTA.

Volumes are stored pixel-major as ``(height, width, d_max + 1)`` arrays so
the disparity axis is contiguous and per-pixel reductions are linear scans.
Disparity candidates are the integers ``0..d_max`` inclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def _first_bad_pixel(costs):
    bad = np.argwhere(~np.isfinite(costs))[0]
    return tuple(int(v) for v in bad)


@dataclass(frozen=True)
class CostVolume:
    """Matching costs ``c_i(m, n)``; lower means a better match.

    ``costs`` has shape ``(height, width, d_max + 1)``. Double precision is the
    default; pass a float32 array and ``allow_float32=True`` to keep single
    precision for bulk experiments.
    """

    costs: np.ndarray

    def __init__(self, costs, allow_float32=False):
        arr = np.asarray(costs)
        dtype = np.float32 if (allow_float32 and arr.dtype == np.float32) else np.float64
        arr = np.array(arr, dtype=dtype, order="C", copy=True)
        if arr.ndim != 3:
            raise DomainError(f"cost volume must be 3-D (H, W, D+1), got shape {arr.shape}")
        if arr.shape[2] < 2:
            raise DomainError("cost volume needs d_max >= 1 (at least two disparity bins)")
        if not np.all(np.isfinite(arr)):
            m, n, i = _first_bad_pixel(arr)
            raise DomainError(f"non-finite cost at pixel (m={m}, n={n}), disparity {i}")
        arr.setflags(write=False)
        object.__setattr__(self, "costs", arr)

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def d_max(self) -> int:
        return self.costs.shape[2] - 1

    @property
    def shape(self):
        return self.costs.shape

    def pixel(self, m, n) -> np.ndarray:
        return self.costs[m, n]


@dataclass(frozen=True)
class ProbabilityVolume:
    """Per-pixel distribution over disparities, ``probs.sum(-1) == 1``."""

    probs: np.ndarray

    @property
    def d_max(self) -> int:
        return self.probs.shape[2] - 1

    @property
    def shape(self):
        return self.probs.shape


@dataclass(frozen=True)
class DisparityMap:
    """Real-valued disparity per pixel plus a validity mask.

    Invalid entries carry no supervision; their values are ignored.
    """

    values: np.ndarray
    valid: np.ndarray

    def __init__(self, values, valid=None):
        vals = np.array(values, dtype=np.float64)
        if vals.ndim != 2:
            raise DomainError(f"disparity map must be 2-D, got shape {vals.shape}")
        if valid is None:
            mask = np.isfinite(vals)
        else:
            mask = np.array(valid, dtype=bool)
            if mask.shape != vals.shape:
                raise DomainError(
                    f"validity mask shape {mask.shape} does not match map shape {vals.shape}"
                )
            mask &= np.isfinite(vals)
        vals[~mask] = 0.0
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", mask)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def check_range(self, d_max):
        """Raise if a valid entry falls outside ``[0, d_max]``."""
        v = self.values[self.valid]
        if v.size and (v.min() < 0 or v.max() > d_max):
            raise DomainError(f"valid disparities must lie in [0, {d_max}]")


def as_volume(volume) -> CostVolume:
    if isinstance(volume, CostVolume):
        return volume
    return CostVolume(volume)


def log_softmax_neg_cost(costs: np.ndarray) -> np.ndarray:
    """``log softmax(-c)`` along the last axis, computed with a max shift."""
    shifted = -(costs - costs.min(axis=-1, keepdims=True))
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_neg_cost(volume) -> ProbabilityVolume:
    """Per-pixel softmax of the negated costs.

    The per-pixel minimum cost is subtracted before exponentiating, which
    leaves the result unchanged mathematically and keeps ``exp`` in range.
    """
    vol = as_volume(volume)
    e = np.exp(-(vol.costs - vol.costs.min(axis=-1, keepdims=True)))
    return ProbabilityVolume(e / e.sum(axis=-1, keepdims=True))


def disparity_indices(d_max, dtype=np.float64) -> np.ndarray:
    return np.arange(d_max + 1, dtype=dtype)


def expected_disparity(probs: np.ndarray) -> np.ndarray:
    """``sum_i i * p_i`` over the last axis, clipped into ``[0, d_max]``."""
    d_max = probs.shape[-1] - 1
    d = probs @ disparity_indices(d_max, probs.dtype)
    # rounding can leave the sum a few ulps outside the bin range
    return np.clip(d, 0.0, d_max)


def softargmin(volume) -> DisparityMap:
    """Differentiable disparity estimate ``sum_i i * softmax(-c)_i``."""
    p = softmax_neg_cost(volume).probs
    d = expected_disparity(p)
    return DisparityMap(d, np.ones(d.shape, dtype=bool))


def wta_argmin(volume) -> DisparityMap:
    """Winner-take-all: index of the minimum cost per pixel.

    Ties go to the smallest disparity index.
    """
    vol = as_volume(volume)
    d = np.argmin(vol.costs, axis=-1).astype(np.float64)
    return DisparityMap(d, np.ones(d.shape, dtype=bool))
