"""Disparity error metrics and cost-volume shape diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, EmptySupervisionError
from .volume import DisparityMap, as_volume, softmax_neg_cost

THREE_PX = 3.0
D1_RELATIVE = 0.05
MASS_FLOOR = 0.05


@dataclass(frozen=True)
class MetricsReport:
    three_px_error: float
    d1_all: float
    d1_bg: Optional[float]
    d1_fg: Optional[float]
    epe: float
    evaluated_pixels: int

    def to_text(self) -> str:
        """Flat ``key = value`` block; absent fields are written as ``absent``."""
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key} = {'absent' if value is None else repr(value)}")
        return "\n".join(lines) + "\n"

    def csv_row(self, **extra) -> dict:
        row = dict(extra)
        for key, value in asdict(self).items():
            row[key] = "" if value is None else repr(value)
        return row


def write_metrics_csv(path, rows):
    """One row per evaluated map; ``rows`` are ``MetricsReport.csv_row`` dicts."""
    rows = list(rows)
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def metrics_csv_text(rows) -> str:
    buf = io.StringIO()
    rows = list(rows)
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _errors(pred: DisparityMap, gt: DisparityMap, region=None):
    if pred.shape != gt.shape:
        raise DomainError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    mask = np.array(gt.valid)
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != gt.shape:
            raise DomainError(f"region mask shape {region.shape} does not match {gt.shape}")
        mask &= region
    if not mask.any():
        raise EmptySupervisionError("no valid ground-truth pixels to evaluate")
    return np.abs(pred.values - gt.values), mask


def three_px_error(pred: DisparityMap, gt: DisparityMap) -> float:
    """Fraction of valid pixels whose error exceeds 3 px (strictly)."""
    err, mask = _errors(pred, gt)
    return int((err[mask] > THREE_PX).sum()) / int(mask.sum())


def d1_outliers(err, gt_values):
    """KITTI outlier rule: error above 3 px *and* above 5% of the true disparity."""
    return (err > THREE_PX) & (err > D1_RELATIVE * np.abs(gt_values))


def d1_metrics(pred: DisparityMap, gt: DisparityMap, fg_mask=None, region=None) -> MetricsReport:
    """D1 outlier fractions, >3 px error and end-point error.

    ``fg_mask`` splits the valid pixels into foreground and background; when
    it is omitted ``d1_bg`` and ``d1_fg`` are ``None``. ``region`` restricts
    evaluation further, e.g. to non-occluded pixels. A split with no valid
    pixels reports ``None`` for that side.
    """
    err, mask = _errors(pred, gt, region)
    out = d1_outliers(err, gt.values)
    total = int(mask.sum())
    d1_bg = d1_fg = None
    if fg_mask is not None:
        fg = np.asarray(fg_mask, dtype=bool)
        if fg.shape != gt.shape:
            raise DomainError(f"foreground mask shape {fg.shape} does not match {gt.shape}")
        fg_sel, bg_sel = mask & fg, mask & ~fg
        if fg_sel.any():
            d1_fg = int(out[fg_sel].sum()) / int(fg_sel.sum())
        if bg_sel.any():
            d1_bg = int(out[bg_sel].sum()) / int(bg_sel.sum())
    return MetricsReport(
        three_px_error=int((err[mask] > THREE_PX).sum()) / total,
        d1_all=int(out[mask].sum()) / total,
        d1_bg=d1_bg,
        d1_fg=d1_fg,
        epe=float(err[mask].mean()),
        evaluated_pixels=total,
    )


@dataclass(frozen=True)
class ShapeDiagnostics:
    unimodal_fraction: float
    peak_mass: float
    coherence: float
    evaluated_pixels: int

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())


def local_maxima(probs: np.ndarray, floor=MASS_FLOOR) -> np.ndarray:
    """Boolean mask of strict local maxima with mass above ``floor``.

    An interior bin must exceed both neighbours; an end bin only its one
    neighbour. Plateaus therefore produce no maximum.
    """
    p = np.asarray(probs)
    left = np.full(p.shape, -np.inf)
    right = np.full(p.shape, -np.inf)
    left[..., 1:] = p[..., :-1]
    right[..., :-1] = p[..., 1:]
    return (p > left) & (p > right) & (p > floor)


def count_local_maxima(probs, floor=MASS_FLOOR):
    return local_maxima(probs, floor).sum(axis=-1)


def shape_diagnostics(volume, gt: DisparityMap, floor=MASS_FLOOR) -> ShapeDiagnostics:
    """Unimodality, peak mass and total variation of ``softmax(-c)`` rows.

    Evaluated over the valid pixels of ``gt``. A row is unimodal when it has
    exactly one local maximum above the mass floor, so a flat row (no
    maximum) is not unimodal.
    """
    vol = as_volume(volume)
    if gt.shape != vol.shape[:2]:
        raise DomainError(f"ground truth shape {gt.shape} does not match volume {vol.shape[:2]}")
    p = softmax_neg_cost(vol).probs[gt.valid]
    if p.shape[0] == 0:
        raise EmptySupervisionError("no valid ground-truth pixels to diagnose")
    maxima = count_local_maxima(p, floor)
    return ShapeDiagnostics(
        unimodal_fraction=float(np.mean(maxima == 1)),
        peak_mass=float(p.max(axis=-1).mean()),
        coherence=float(np.abs(np.diff(p, axis=-1)).sum(axis=-1).mean()),
        evaluated_pixels=int(p.shape[0]),
    )
