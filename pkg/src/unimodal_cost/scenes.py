"""Seeded synthetic stereo scenes with exact ground truth.

The left image is random texture. The right image is obtained by forward
warping every left pixel ``(m, n)`` to column ``n - d(m, n)``; between two
neighbouring pixels of the same surface intensities are interpolated
linearly, and where surfaces overlap the larger disparity (the nearer one)
wins. Right-image pixels that no surface reaches are filled with fresh
texture. A left pixel keeps its ground truth only if the right pixels
bracketing its match both come from its own surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DomainError
from .volume import DisparityMap

SCENE_KINDS = ("constant", "step", "ramp", "box")


@dataclass(frozen=True)
class StereoPair:
    """Rectified grayscale pair with intensities in ``[0, 1]``."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64)
        right = np.asarray(self.right, dtype=np.float64)
        if left.ndim != 2 or left.shape != right.shape:
            raise DomainError(f"stereo images must be 2-D and equal in size, got {left.shape}, {right.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def shape(self):
        return self.left.shape


@dataclass(frozen=True)
class SceneSpec:
    """Layout of a synthetic scene.

    ``kind`` selects the disparity field:

    * ``constant``: ``d_bg`` everywhere.
    * ``step``: ``d_bg`` on the left half, ``d_fg`` on the right half.
    * ``ramp``: linear in the column, from ``d_bg`` at column 0 to ``d_fg``
      at the last column. The slope must stay below 1 px per column.
    * ``box``: ``d_bg`` background with a centred rectangle at ``d_fg``
      covering the middle half of both axes.
    """

    width: int = 64
    height: int = 48
    d_max: int = 16
    kind: str = "box"
    d_bg: float = 4.0
    d_fg: float = 10.0
    noise: float = 0.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise DomainError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if self.width < 2 or self.height < 1:
            raise DomainError("scene needs width >= 2 and height >= 1")
        if not 1 <= self.d_max < self.width:
            raise DomainError(f"d_max must satisfy 1 <= d_max < width, got {self.d_max}")
        for name in ("d_bg", "d_fg"):
            v = getattr(self, name)
            if not 0 <= v <= self.d_max:
                raise DomainError(f"{name}={v} outside [0, d_max={self.d_max}]")
        if self.kind == "ramp" and abs(self.d_fg - self.d_bg) >= self.width - 1:
            raise DomainError("ramp slope must stay below 1 px per column")
        if self.noise < 0:
            raise DomainError("noise must be >= 0")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def texture(shape, rng: np.random.Generator) -> np.ndarray:
    """Value noise smoothed once with a 3x3 box, rescaled to ``[0, 1]``."""
    t = uniform_filter(rng.random(shape), size=3, mode="reflect")
    lo, hi = t.min(), t.max()
    return (t - lo) / (hi - lo) if hi > lo else np.zeros(shape)


def disparity_field(spec: SceneSpec):
    """Disparity and surface-label maps for the left view."""
    h, w = spec.height, spec.width
    d = np.full((h, w), float(spec.d_bg))
    labels = np.zeros((h, w), dtype=np.int64)
    if spec.kind == "step":
        d[:, w // 2:] = spec.d_fg
        labels[:, w // 2:] = 1
    elif spec.kind == "ramp":
        d[:] = spec.d_bg + (spec.d_fg - spec.d_bg) * np.arange(w) / (w - 1)
    elif spec.kind == "box":
        top, bottom = h // 4, h - h // 4
        left, right = w // 4, w - w // 4
        d[top:bottom, left:right] = spec.d_fg
        labels[top:bottom, left:right] = 1
    return d, labels


def foreground_mask(spec: SceneSpec) -> np.ndarray:
    """Pixels of the nearer surface for ``step`` and ``box``; empty otherwise."""
    d, labels = disparity_field(spec)
    if spec.kind in ("step", "box") and spec.d_fg > spec.d_bg:
        return labels == 1
    if spec.kind in ("step", "box") and spec.d_fg < spec.d_bg:
        return labels == 0
    return np.zeros(d.shape, dtype=bool)


@dataclass(frozen=True)
class RenderedScene:
    pair: StereoPair
    gt: DisparityMap
    disparity: np.ndarray
    labels: np.ndarray
    right_label: np.ndarray
    right_disparity: np.ndarray


def _splat_row(left_row, d_row, lab_row, width):
    value = np.zeros(width)
    zbuf = np.full(width, -np.inf)
    src = np.full(width, -1, dtype=np.int64)
    u = np.arange(width) - d_row

    def put(x, v, dv, lab):
        if 0 <= x < width and dv > zbuf[x]:
            value[x], zbuf[x], src[x] = v, dv, lab

    for n in range(width):
        joined_left = n > 0 and lab_row[n - 1] == lab_row[n]
        joined_right = n + 1 < width and lab_row[n + 1] == lab_row[n]
        if not (joined_left or joined_right) and float(u[n]).is_integer():
            put(int(u[n]), left_row[n], d_row[n], lab_row[n])
        if not joined_right:
            continue
        u0, u1 = u[n], u[n + 1]
        for x in range(math.ceil(u0), math.floor(u1) + 1):
            t = (x - u0) / (u1 - u0)
            put(x, (1 - t) * left_row[n] + t * left_row[n + 1],
                (1 - t) * d_row[n] + t * d_row[n + 1], lab_row[n])
    return value, src, zbuf


def render_scene(spec: SceneSpec, seed: int) -> RenderedScene:
    """Generate a scene with the bookkeeping needed to audit the warp."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    left = texture((h, w), rng)
    fill = texture((h, w), rng)
    d, labels = disparity_field(spec)
    right = np.empty((h, w))
    right_label = np.empty((h, w), dtype=np.int64)
    right_disp = np.empty((h, w))
    for m in range(h):
        value, src, zbuf = _splat_row(left[m], d[m], labels[m], w)
        hole = src < 0
        value[hole] = fill[m, hole]
        right[m], right_label[m], right_disp[m] = value, src, np.where(hole, np.nan, zbuf)
    if spec.noise > 0:
        right = np.clip(right + rng.normal(0.0, spec.noise, right.shape), 0.0, 1.0)

    u = np.arange(w)[None, :] - d
    x0 = np.floor(u).astype(np.int64)
    x1 = np.ceil(u).astype(np.int64)
    inside = (x0 >= 0) & (x1 <= w - 1)
    rows = np.arange(h)[:, None].repeat(w, axis=1)
    x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
    same = (right_label[rows, x0c] == labels) & (right_label[rows, x1c] == labels)
    close = (np.abs(right_disp[rows, x0c] - d) <= 1.0) & (np.abs(right_disp[rows, x1c] - d) <= 1.0)
    valid = inside & same & close
    gt = DisparityMap(d, valid)
    return RenderedScene(StereoPair(left, right), gt, d, labels, right_label, right_disp)


def generate_scene(spec: SceneSpec, seed: int):
    """Return ``(StereoPair, DisparityMap)`` for a spec; deterministic in ``seed``."""
    scene = render_scene(spec, seed)
    return scene.pair, scene.gt
