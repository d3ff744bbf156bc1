"""Classic matching costs and the desk-scale learning experiments.

Matches for left pixel ``(m, n)`` at disparity ``i`` sit at right pixel
``(m, n - i)`` (rectified pair). Right samples left of column 0 cost the
maximum intensity difference, 1.0.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from .errors import DomainError, NumericalAbort
from .losses import LossConfig, LossReport, combined_loss, combined_loss_gradient
from .scenes import StereoPair
from .volume import CostVolume, DisparityMap, wta_argmin

OUT_OF_BOUNDS_COST = 1.0
THREADS_ENV = "UNIMODAL_COST_THREADS"


def thread_count() -> int:
    """Worker cap from ``UNIMODAL_COST_THREADS``; 0 or unset means auto."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise DomainError(f"{THREADS_ENV} must be >= 0")
    return n if n > 0 else min(8, os.cpu_count() or 1)


def _fill_slices(shape, d_max, fn):
    """Fill ``out[..., i] = fn(i)`` for every disparity, slices in parallel."""
    out = np.empty(shape + (d_max + 1,))

    def work(i):
        out[..., i] = fn(i)

    workers = thread_count()
    if workers == 1:
        for i in range(d_max + 1):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(d_max + 1)))
    return out


def _check_matching_args(pair: StereoPair, d_max, window):
    if window < 1 or window % 2 == 0:
        raise DomainError(f"window must be an odd integer >= 1, got {window}")
    if d_max < 1:
        raise DomainError("d_max must be >= 1")
    if d_max >= pair.shape[1]:
        raise DomainError(f"d_max={d_max} must be smaller than the image width {pair.shape[1]}")


def sad_cost_volume(pair: StereoPair, d_max: int, window: int = 5) -> CostVolume:
    """Mean absolute difference over a ``window x window`` block.

    Per-sample absolute differences are averaged with edge replication at the
    image border; samples whose right column falls left of the image count
    as 1.0.
    """
    _check_matching_args(pair, d_max, window)
    left, right = pair.left, pair.right

    def slice_cost(i):
        ad = np.full(left.shape, OUT_OF_BOUNDS_COST)
        ad[:, i:] = np.abs(left[:, i:] - right[:, :right.shape[1] - i])
        if window == 1:
            return ad
        return uniform_filter(ad, size=window, mode="nearest")

    return CostVolume(_fill_slices(left.shape, d_max, slice_cost))


def census_transform(image, window: int) -> np.ndarray:
    """Bit per neighbour (row-major, centre skipped): 1 where neighbour < centre.

    Neighbours outside the image replicate the border.
    """
    r = window // 2
    padded = np.pad(np.asarray(image, dtype=np.float64), r, mode="edge")
    patches = sliding_window_view(padded, (window, window)).reshape(image.shape + (window * window,))
    centre = (window * window) // 2
    neighbours = np.delete(patches, centre, axis=-1)
    return neighbours < patches[..., centre:centre + 1]


def census_cost_volume(pair: StereoPair, d_max: int, window: int = 5) -> CostVolume:
    """Hamming distance between census descriptors, divided by the bit count."""
    _check_matching_args(pair, d_max, window)
    if window < 3:
        raise DomainError("census needs a window of at least 3")
    bits_l = census_transform(pair.left, window)
    bits_r = census_transform(pair.right, window)
    nbits = bits_l.shape[-1]
    w = pair.shape[1]

    def slice_cost(i):
        cost = np.full(pair.shape, OUT_OF_BOUNDS_COST)
        cost[:, i:] = (bits_l[:, i:] != bits_r[:, :w - i]).sum(axis=-1) / nbits
        return cost

    return CostVolume(_fill_slices(pair.shape, d_max, slice_cost))


# training -------------------------------------------------------------------

@dataclass
class TrainState:
    """Mutable optimizer state; ``parameters`` is whatever is being learned."""

    parameters: np.ndarray
    lr: float
    steps: int
    seed: int = 0
    step_count: int = 0
    halve_at: float = 0.4

    def current_lr(self) -> float:
        """Constant rate, halved after the first ``halve_at`` fraction of steps."""
        return self.lr if self.step_count < self.halve_at * self.steps else 0.5 * self.lr

    def apply(self, grad):
        self.parameters = self.parameters - self.current_lr() * grad
        self.step_count += 1
        if not np.all(np.isfinite(self.parameters)):
            raise NumericalAbort(self.step_count)


def _check_schedule(steps, lr):
    if steps < 0:
        raise DomainError("steps must be >= 0")
    if not lr > 0:
        raise DomainError("learning rate must be > 0")


def random_volume(shape, d_max, scale=1.0, seed=0) -> CostVolume:
    """Seeded i.i.d. normal costs, the usual starting point for free volumes."""
    rng = np.random.default_rng(seed)
    return CostVolume(scale * rng.standard_normal(tuple(shape) + (d_max + 1,)))


def optimize_free_volume(init, gt: DisparityMap, config: LossConfig, steps: int, lr: float,
                         halve_at: float = 0.4):
    """Plain gradient descent directly on the cost entries.

    ``lr`` is per supervised pixel: the step multiplies the gradient of the
    mean loss by the number of valid pixels, so its meaning does not depend
    on the image size. Returns the final volume and the trace of
    ``LossReport`` values, one before each step plus the final one.
    """
    _check_schedule(steps, lr)
    vol = init if isinstance(init, CostVolume) else CostVolume(init)
    state = TrainState(vol.costs.copy(), lr, steps, halve_at=halve_at)
    n_valid = gt.valid_count
    trace: List[LossReport] = []
    for _ in range(steps):
        current = CostVolume(state.parameters)
        trace.append(combined_loss(current, gt, config))
        state.apply(n_valid * combined_loss_gradient(current, gt, config))
    final = CostVolume(state.parameters)
    trace.append(combined_loss(final, gt, config))
    return final, trace


# toy patch matcher ----------------------------------------------------------

def extract_patches(image, patch: int) -> np.ndarray:
    """Raw ``patch x patch`` neighbourhoods, flattened: ``(H, W, patch**2)``.

    Border pixels use edge replication. Patches are not mean-centred; the
    embedding has to learn to suppress the brightness component itself.
    """
    r = patch // 2
    padded = np.pad(np.asarray(image, dtype=np.float64), r, mode="edge")
    return sliding_window_view(padded, (patch, patch)).reshape(np.shape(image) + (patch * patch,))


def interior_mask(shape, d_max, patch) -> np.ndarray:
    """Pixels whose patch and every candidate match lie fully inside the images."""
    h, w = shape
    r = patch // 2
    mask = np.zeros(shape, dtype=bool)
    mask[r:h - r, d_max + r:w - r] = True
    return mask


def _patch_costs(emb_l, emb_r, d_max):
    h, w, _ = emb_l.shape
    costs = np.zeros((h, w, d_max + 1))
    for i in range(d_max + 1):
        costs[:, i:, i] = -(emb_l[:, i:] * emb_r[:, :w - i]).sum(axis=-1)
    return costs


def patch_cost_volume(pair: StereoPair, weights, d_max: int, patch: int = 5) -> CostVolume:
    """Cost ``-<W a, W b>`` between embedded left and right patches.

    Candidates whose right pixel is left of the image get cost 0 (the inner
    product with a zero embedding).
    """
    _check_matching_args(pair, d_max, patch)
    weights = np.asarray(weights, dtype=np.float64)
    a = extract_patches(pair.left, patch)
    b = extract_patches(pair.right, patch)
    return CostVolume(_patch_costs(a @ weights.T, b @ weights.T, d_max))


def patch_weight_gradient(pair: StereoPair, weights, volume_grad, d_max, patch):
    """Chain rule from ``dL/dc`` to ``dL/dW`` for the dot-product cost.

    With ``c = -a^T W^T W b`` we get ``dc/dW = -W (a b^T + b a^T)``, hence
    ``dL/dW = -W (S + S^T)`` with ``S = sum dL/dc * a b^T``.
    """
    a = extract_patches(pair.left, patch)
    b = extract_patches(pair.right, patch)
    w = a.shape[1]
    s = np.zeros((a.shape[-1], a.shape[-1]))
    for i in range(d_max + 1):
        g = volume_grad[:, i:, i]
        s += np.einsum("hw,hwp,hwq->pq", g, a[:, i:], b[:, :w - i], optimize=True)
    return -np.asarray(weights) @ (s + s.T)


@dataclass
class PatchMatcherResult:
    weights: np.ndarray
    trace: List[LossReport] = field(default_factory=list)


def identity_weights(patch: int) -> np.ndarray:
    return np.eye(patch * patch)


def train_patch_matcher(pairs: Sequence[StereoPair], gts: Sequence[DisparityMap], config: LossConfig,
                        d_max: int, steps: int = 200, lr: float = 0.05, seed: int = 0, patch: int = 5,
                        batch_pixels=None, halve_at: float = 0.4):
    """Learn a linear patch embedding by gradient descent on the combined loss.

    Training starts from the identity embedding. Only pixels that are valid
    in the ground truth and inside :func:`interior_mask` are supervised.
    With ``batch_pixels`` set, each step supervises a seeded random subset of
    that many pixels per pair. Returns ``(weights, trace)``; the trace holds
    the full-data loss before every step plus the final loss.
    """
    if len(pairs) == 0 or len(pairs) != len(gts):
        raise DomainError("need at least one training pair and one ground truth per pair")
    _check_schedule(steps, lr)
    rng = np.random.default_rng(seed)
    masks = []
    for pair, gt in zip(pairs, gts):
        sup = gt.valid & interior_mask(pair.shape, d_max, patch)
        if not sup.any():
            raise DomainError("a training pair has no supervised interior pixels")
        masks.append(DisparityMap(gt.values, sup))
    state = TrainState(identity_weights(patch), lr, steps, seed, halve_at=halve_at)

    def total_loss(weights):
        parts = [combined_loss(patch_cost_volume(p, weights, d_max, patch), g, config)
                 for p, g in zip(pairs, masks)]
        return _mean_report(parts)

    trace = []
    for _ in range(steps):
        trace.append(total_loss(state.parameters))
        grad = np.zeros_like(state.parameters)
        for pair, gt in zip(pairs, masks):
            if batch_pixels is not None:
                gt = _subsample(gt, batch_pixels, rng)
            vol = patch_cost_volume(pair, state.parameters, d_max, patch)
            vgrad = combined_loss_gradient(vol, gt, config)
            grad += patch_weight_gradient(pair, state.parameters, vgrad, d_max, patch)
        state.apply(grad / len(pairs))
    trace.append(total_loss(state.parameters))
    return state.parameters, trace


def _subsample(gt: DisparityMap, count, rng):
    idx = np.flatnonzero(gt.valid)
    if count >= idx.size:
        return gt
    keep = np.zeros(gt.valid.size, dtype=bool)
    keep[rng.choice(idx, size=count, replace=False)] = True
    return DisparityMap(gt.values, keep.reshape(gt.shape))


def _mean_report(parts):
    k = len(parts)
    return LossReport(
        total=sum(p.total for p in parts) / k,
        regression_part=sum(p.regression_part for p in parts) / k,
        noise_part=sum(p.noise_part for p in parts) / k,
        pixel_count=sum(p.pixel_count for p in parts),
        mu=parts[0].mu,
    )


def evaluate_patch_matcher(weights, pair: StereoPair, gt: DisparityMap, d_max, patch=5) -> float:
    """WTA >3 px error of an embedding on the interior valid pixels of one pair."""
    from .metrics import three_px_error

    vol = patch_cost_volume(pair, weights, d_max, patch)
    mask = gt.valid & interior_mask(pair.shape, d_max, patch)
    return three_px_error(wta_argmin(vol), DisparityMap(gt.values, mask))
