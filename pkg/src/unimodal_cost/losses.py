"""Regression, cross-entropy and combined losses with closed-form gradients.

Write ``p = softmax(-c)`` for one pixel and ``d = sum_i i p_i`` for its
softargmin. Two identities give the whole backward pass:

* ``log p_i = -c_i - logsumexp(-c)`` so ``d log p_i / d c_j = p_j - [i == j]``.
  For a cross entropy ``-sum_i phi_i log p_i`` this yields
  ``d CE / d c_j = phi_j - p_j`` whenever ``sum_i phi_i = 1``.
* ``d p_i / d c_j = p_i p_j - p_i [i == j]``, hence
  ``d d / d c_j = sum_i i (p_i p_j - p_i [i == j]) = -p_j (j - d)``.

Both per-pixel gradients sum to zero along the disparity axis, reflecting the
invariance of the softmax to a constant cost shift.

Losses average over the valid pixels of the ground truth only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, EmptySupervisionError
from .labels import Gaussian, LabelDistribution, LabelKind, Laplacian, label_volume
from .volume import (
    CostVolume,
    DisparityMap,
    as_volume,
    disparity_indices,
    expected_disparity,
    log_softmax_neg_cost,
    softargmin,
)

LOG_CLAMP = 1e-12
DEFAULT_MU = 0.05

_REGRESSION_ALIASES = {"mse": "mse", "l2": "mse", "mae": "mae", "l1": "mae"}


def normalize_regression(kind) -> str:
    try:
        return _REGRESSION_ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise DomainError(f"unknown regression loss {kind!r}; use mse/l2 or mae/l1") from None


@dataclass(frozen=True)
class LossConfig:
    """Regression loss plus an optional weighted cross-entropy regularizer."""

    regression: str = "mae"
    noise: Optional[LabelKind] = None
    mu: float = DEFAULT_MU

    def __post_init__(self):
        object.__setattr__(self, "regression", normalize_regression(self.regression))
        if self.noise is not None and not 0.0 < self.mu < 1.0:
            raise DomainError(f"mu must lie in (0, 1) when a noise term is present, got {self.mu}")
        if isinstance(self.noise, Gaussian) and self.regression == "mae":
            warnings.warn("Gaussian noise-sampling is conventionally paired with MSE", stacklevel=3)
        if isinstance(self.noise, Laplacian) and self.regression == "mse":
            warnings.warn("Laplacian noise-sampling is conventionally paired with MAE", stacklevel=3)

    @property
    def noise_weight(self) -> float:
        return self.mu if self.noise is not None else 0.0


@dataclass(frozen=True)
class LossReport:
    total: float
    regression_part: float
    noise_part: float
    pixel_count: int
    mu: float = field(default=0.0, repr=False)


def _check_pair(volume: CostVolume, gt: DisparityMap):
    if gt.shape != volume.shape[:2]:
        raise DomainError(f"ground truth shape {gt.shape} does not match volume {volume.shape[:2]}")
    n = gt.valid_count
    if n == 0:
        raise EmptySupervisionError("ground truth has no valid pixels")
    gt.check_range(volume.d_max)
    return n


def regression_loss(pred: DisparityMap, gt: DisparityMap, kind="mse") -> float:
    """Mean squared or absolute disparity error over ground-truth-valid pixels."""
    kind = normalize_regression(kind)
    if pred.shape != gt.shape:
        raise DomainError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if gt.valid_count == 0:
        raise EmptySupervisionError("ground truth has no valid pixels")
    r = pred.values[gt.valid] - gt.values[gt.valid]
    return float(np.mean(r * r) if kind == "mse" else np.mean(np.abs(r)))


def cross_entropy(target, probs) -> float:
    """``-sum_i phi_i log max(p_i, 1e-12)`` for one pixel."""
    phi = target.phi if isinstance(target, LabelDistribution) else np.asarray(target, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if phi.shape != p.shape or phi.ndim != 1:
        raise DomainError(f"target shape {phi.shape} and probability shape {p.shape} differ")
    return float(-(phi * np.log(np.maximum(p, LOG_CLAMP))).sum())


def _clamped_log_probs(costs):
    logp = log_softmax_neg_cost(costs)
    active = logp > np.log(LOG_CLAMP)
    return np.where(active, logp, np.log(LOG_CLAMP)), active


def noise_sampling_loss(volume, gt: DisparityMap, kind: LabelKind) -> float:
    """Mean cross entropy between label targets and ``softmax(-c)``.

    Works for every label kind: Gaussian and Laplacian noise-sampling
    targets as well as one-hot and 3-pixel-hot.
    """
    vol = as_volume(volume)
    _check_pair(vol, gt)
    phi = label_volume(kind, gt, vol.d_max)[gt.valid]
    logp, _ = _clamped_log_probs(vol.costs[gt.valid])
    return float(np.mean(-(phi * logp).sum(axis=-1)))


def combined_loss(volume, gt: DisparityMap, config: LossConfig) -> LossReport:
    """``regression(softargmin(c), gt) + mu * noise_sampling(c, gt)``."""
    vol = as_volume(volume)
    n = _check_pair(vol, gt)
    reg = regression_loss(softargmin(vol), gt, config.regression)
    noise = noise_sampling_loss(vol, gt, config.noise) if config.noise is not None else 0.0
    mu = config.noise_weight
    return LossReport(reg + mu * noise, reg, noise, n, mu)


def combined_loss_gradient(volume, gt: DisparityMap, config: LossConfig) -> np.ndarray:
    """Gradient of :func:`combined_loss` with respect to every cost entry.

    Returns an array shaped like the volume; rows of invalid pixels are zero.
    The MAE subgradient at zero residual is taken as zero.
    """
    vol = as_volume(volume)
    n = _check_pair(vol, gt)
    grad = np.zeros(vol.shape)
    c = vol.costs[gt.valid]
    logp, active = _clamped_log_probs(c)
    p = np.where(active, np.exp(logp), np.exp(log_softmax_neg_cost(c)))
    d_hat = expected_disparity(p)
    r = d_hat - gt.values[gt.valid]
    if config.regression == "mse":
        dl_dd = 2.0 * r / n
    else:
        dl_dd = np.sign(r) / n
    idx = disparity_indices(vol.d_max)
    g = dl_dd[:, None] * (-p * (idx[None, :] - d_hat[:, None]))
    if config.noise is not None:
        phi = label_volume(config.noise, gt, vol.d_max)[gt.valid]
        # clamped bins contribute a constant, so they drop out of the gradient
        phi_active = np.where(active, phi, 0.0)
        g += (config.mu / n) * (phi_active - p * phi_active.sum(axis=-1, keepdims=True))
    grad[gt.valid] = g
    return grad


def _relative_errors(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def reference_pixel_loss(costs, d_gt, config: LossConfig, dtype=np.longdouble):
    """Combined loss of a single supervised pixel, written out term by term.

    An independent scalar evaluation used by the finite-difference oracle;
    ``dtype=np.longdouble`` evaluates it in extended precision.
    """
    c = np.asarray(costs, dtype=dtype)
    e = np.exp(-(c - c.min()))
    p = e / e.sum()
    d_hat = (np.arange(c.size, dtype=dtype) * p).sum()
    r = d_hat - dtype(d_gt)
    loss = r * r if config.regression == "mse" else abs(r)
    if config.noise is not None:
        from .labels import label_rows

        phi = label_rows(config.noise, float(d_gt), c.size - 1).astype(dtype)
        loss = loss + dtype(config.mu) * -(phi * np.log(np.maximum(p, dtype(LOG_CLAMP)))).sum()
    return loss


def finite_difference_gradient(volume, gt: DisparityMap, config: LossConfig, step=1e-5,
                               precision="extended") -> np.ndarray:
    """Central-difference gradient of :func:`combined_loss`.

    The loss is a mean of independent per-pixel terms, so a perturbation of
    pixel ``(m, n)`` is evaluated on that pixel alone and divided by the
    number of valid pixels. Costs of invalid pixels do not enter the loss and
    get a zero difference.

    ``precision="extended"`` (the default) differentiates
    :func:`reference_pixel_loss` in long double. ``precision="double"``
    differentiates :func:`combined_loss` itself; its round-off, about
    ``1e-16 * loss / step``, swamps gradient entries below roughly ``1e-5``
    when judged at a relative tolerance of ``1e-6``.
    """
    if not step > 0:
        raise DomainError("finite-difference step must be > 0")
    if precision not in ("double", "extended"):
        raise DomainError(f"precision must be 'double' or 'extended', got {precision!r}")
    vol = as_volume(volume)
    n_valid = _check_pair(vol, gt)
    fd = np.zeros(vol.shape)
    for m, n in np.argwhere(gt.valid):
        d_gt = gt.values[m, n]
        if precision == "double":
            local_gt = DisparityMap([[d_gt]])
            row = np.array(vol.costs[m, n], dtype=np.float64)

            def f(x):
                return combined_loss(CostVolume(x[None, None, :]), local_gt, config).total
            h = step
        else:
            row = np.array(vol.costs[m, n], dtype=np.longdouble)

            def f(x):
                return reference_pixel_loss(x, d_gt, config)
            h = np.longdouble(step)
        for j in range(vol.d_max + 1):
            base = row[j]
            row[j] = base + h
            f_plus = f(row)
            row[j] = base - h
            f_minus = f(row)
            row[j] = base
            fd[m, n, j] = float((f_plus - f_minus) / (2 * h) / n_valid)
    return fd


def finite_difference_check(volume, gt: DisparityMap, config: LossConfig, step=1e-5,
                            gradient=None, precision="extended") -> float:
    """Worst relative error between an analytic gradient and central differences.

    ``gradient`` defaults to :func:`combined_loss_gradient`; pass another array
    to audit it instead. The relative error of one entry is
    ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if gradient is None:
        gradient = combined_loss_gradient(volume, gt, config)
    fd = finite_difference_gradient(volume, gt, config, step, precision)
    return float(_relative_errors(np.asarray(gradient), fd).max())
