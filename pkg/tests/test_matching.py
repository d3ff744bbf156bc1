import numpy as np
import pytest

from unimodal_cost import CostVolume, DisparityMap, DomainError, LossConfig, NumericalAbort
from unimodal_cost.labels import Laplacian, OneHot
from unimodal_cost.matching import (
    THREADS_ENV,
    TrainState,
    census_cost_volume,
    census_transform,
    evaluate_patch_matcher,
    extract_patches,
    identity_weights,
    interior_mask,
    optimize_free_volume,
    patch_cost_volume,
    patch_weight_gradient,
    random_volume,
    sad_cost_volume,
    thread_count,
    train_patch_matcher,
)
from unimodal_cost.losses import combined_loss, combined_loss_gradient
from unimodal_cost.metrics import shape_diagnostics
from unimodal_cost.scenes import SceneSpec, StereoPair, generate_scene, texture
from unimodal_cost.volume import wta_argmin


def shifted_pair(k, shape=(20, 40), seed=0):
    left = texture(shape, np.random.default_rng(seed))
    right = np.zeros(shape)
    right[:, : shape[1] - k] = left[:, k:]
    right[:, shape[1] - k:] = left[:, -1:]
    return StereoPair(left, right)


# classic costs ---------------------------------------------------------------

def test_sad_identical_images():
    img = texture((12, 20), np.random.default_rng(1))
    vol = sad_cost_volume(StereoPair(img, img), 6, window=3)
    assert np.all(vol.costs[..., 0] == 0)
    assert np.all(wta_argmin(vol).values == 0)


@pytest.mark.parametrize("k", [2, 5])
def test_sad_recovers_shift(k):
    vol = sad_cost_volume(shifted_pair(k), 8, window=5)
    wta = wta_argmin(vol).values
    interior = interior_mask((20, 40), 8, 5)
    interior[:, 40 - k - 2:] = False
    assert np.mean(wta[interior] == k) >= 0.99


def test_sad_1x1_matches_pixel_loop(rng):
    left, right = rng.random((5, 9)), rng.random((5, 9))
    d_max = 4
    vol = sad_cost_volume(StereoPair(left, right), d_max, window=1)
    for m in range(5):
        for n in range(9):
            for i in range(d_max + 1):
                expected = abs(left[m, n] - right[m, n - i]) if n - i >= 0 else 1.0
                assert vol.costs[m, n, i] == expected


def test_sad_window_is_block_mean(rng):
    left, right = rng.random((7, 10)), rng.random((7, 10))
    vol = sad_cost_volume(StereoPair(left, right), 3, window=3)
    # an interior pixel whose whole window is in bounds, checked by hand
    m, n, i = 3, 6, 2
    block = [abs(left[m + a, n + b] - right[m + a, n + b - i]) for a in (-1, 0, 1) for b in (-1, 0, 1)]
    assert vol.costs[m, n, i] == pytest.approx(np.mean(block), abs=1e-14)


def test_census_constant_image_costs_zero():
    img = np.full((8, 12), 0.3)
    vol = census_cost_volume(StereoPair(img, img), 5, window=3)
    assert not census_transform(img, 3).any()
    for i in range(6):
        assert np.all(vol.costs[:, i:, i] == 0)
        # entries whose match falls off the image keep the border penalty
        assert np.all(vol.costs[:, :i, i] == 1.0)


def test_census_recovers_shift():
    vol = census_cost_volume(shifted_pair(3), 8, window=5)
    wta = wta_argmin(vol).values
    interior = interior_mask((20, 40), 8, 5)
    interior[:, 40 - 3 - 2:] = False
    assert np.mean(wta[interior] == 3) >= 0.99


def _naive_census(img, window):
    h, w = img.shape
    r = window // 2
    out = []
    for m in range(h):
        row = []
        for n in range(w):
            bits = []
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    if a == 0 and b == 0:
                        continue
                    mm = min(max(m + a, 0), h - 1)
                    nn = min(max(n + b, 0), w - 1)
                    bits.append(1 if img[mm, nn] < img[m, n] else 0)
            row.append(bits)
        out.append(row)
    return out


def test_census_matches_bitwise_brute_force(rng):
    left, right = rng.random((6, 10)), rng.random((6, 10))
    d_max, window = 4, 3
    vol = census_cost_volume(StereoPair(left, right), d_max, window)
    bl, br = _naive_census(left, window), _naive_census(right, window)
    nbits = window * window - 1
    for m in range(6):
        for n in range(10):
            for i in range(d_max + 1):
                if n - i < 0:
                    expected = 1.0
                else:
                    expected = sum(x != y for x, y in zip(bl[m][n], br[m][n - i])) / nbits
                assert vol.costs[m, n, i] == expected


def test_matching_argument_errors():
    pair = StereoPair(np.zeros((4, 6)), np.zeros((4, 6)))
    with pytest.raises(DomainError):
        sad_cost_volume(pair, 6)
    with pytest.raises(DomainError):
        sad_cost_volume(pair, 3, window=4)
    with pytest.raises(DomainError):
        census_cost_volume(pair, 3, window=1)


def test_thread_setting_does_not_change_results(monkeypatch, rng):
    pair = StereoPair(rng.random((9, 16)), rng.random((9, 16)))
    monkeypatch.setenv(THREADS_ENV, "1")
    assert thread_count() == 1
    one = sad_cost_volume(pair, 7).costs
    monkeypatch.setenv(THREADS_ENV, "4")
    four = sad_cost_volume(pair, 7).costs
    assert one.tobytes() == four.tobytes()
    monkeypatch.setenv(THREADS_ENV, "0")
    assert thread_count() >= 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(DomainError):
        thread_count()


# free-volume optimization ----------------------------------------------------

@pytest.fixture(scope="module")
def small_scene():
    return generate_scene(SceneSpec(16, 16, 12, "box", 4.3, 9.6), 0)


def test_one_hot_drives_wta_to_rounded_gt(small_scene):
    _, gt = small_scene
    init = random_volume((16, 16), 12, 1.0, 0)
    vol, trace = optimize_free_volume(init, gt, LossConfig("mae", OneHot(), 0.05), 300, 1.0)
    wta = wta_argmin(vol).values
    assert np.array_equal(wta[gt.valid], np.rint(gt.values[gt.valid]))
    assert trace[-1].total < trace[0].total
    assert len(trace) == 301


def test_l1_only_leaves_shape_unconstrained(small_scene):
    _, gt = small_scene
    init = random_volume((16, 16), 12, 1.0, 0)
    vol, trace = optimize_free_volume(init, gt, LossConfig("mae"), 600, 1.0)
    diag = shape_diagnostics(vol, gt)
    # the regression target is met, the distribution shape is not
    assert trace[-1].regression_part < 0.05
    assert diag.unimodal_fraction < 0.9


def test_laplacian_makes_rows_unimodal(small_scene):
    _, gt = small_scene
    init = random_volume((16, 16), 12, 1.0, 0)
    vol, _ = optimize_free_volume(init, gt, LossConfig("mae", Laplacian(1.0), 0.05), 600, 1.0)
    assert shape_diagnostics(vol, gt).unimodal_fraction >= 0.95


def test_free_volume_is_deterministic(small_scene):
    _, gt = small_scene
    cfg = LossConfig("mae", Laplacian(1.0), 0.05)
    runs = [optimize_free_volume(random_volume((16, 16), 12, 1.0, 3), gt, cfg, 50, 1.0) for _ in range(2)]
    assert [r.total for r in runs[0][1]] == [r.total for r in runs[1][1]]
    assert runs[0][0].costs.tobytes() == runs[1][0].costs.tobytes()


def test_zero_steps_returns_init(small_scene):
    _, gt = small_scene
    init = random_volume((16, 16), 12, 1.0, 0)
    vol, trace = optimize_free_volume(init, gt, LossConfig("mae"), 0, 1.0)
    assert np.array_equal(vol.costs, init.costs) and len(trace) == 1


def test_divergence_aborts_with_step(small_scene):
    _, gt = small_scene
    init = random_volume((16, 16), 12, 1.0, 0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalAbort) as info:
        optimize_free_volume(init, gt, LossConfig("mse"), 50, 1e308)
    assert info.value.step == 1


def test_schedule_halves_learning_rate():
    state = TrainState(np.zeros(1), lr=1.0, steps=10, halve_at=0.4)
    rates = []
    for _ in range(10):
        rates.append(state.current_lr())
        state.apply(np.zeros(1))
    assert rates == [1.0] * 4 + [0.5] * 6
    with pytest.raises(DomainError):
        optimize_free_volume(CostVolume(np.zeros((1, 1, 2))), DisparityMap([[0.0]]), LossConfig(), 1, 0.0)


# patch matcher ---------------------------------------------------------------

def test_patch_cost_is_negative_inner_product(rng):
    pair = StereoPair(rng.random((6, 9)), rng.random((6, 9)))
    weights = rng.normal(size=(4, 9))
    vol = patch_cost_volume(pair, weights, 3, patch=3)
    a = extract_patches(pair.left, 3)
    b = extract_patches(pair.right, 3)
    m, n, i = 2, 5, 2
    assert vol.costs[m, n, i] == pytest.approx(-(weights @ a[m, n]) @ (weights @ b[m, n - i]), abs=1e-12)
    assert np.all(vol.costs[:, 0, 1:] == 0)


def test_patch_weight_gradient_matches_finite_differences(rng):
    pair = StereoPair(rng.random((6, 10)), rng.random((6, 10)))
    d_max, patch = 3, 3
    gt = DisparityMap(rng.uniform(0, d_max, (6, 10)), interior_mask((6, 10), d_max, patch))
    cfg = LossConfig("mae", Laplacian(1.0), 0.05)
    weights = identity_weights(patch) + 0.1 * rng.normal(size=(9, 9))

    def loss(w):
        return combined_loss(patch_cost_volume(pair, w, d_max, patch), gt, cfg).total

    vol = patch_cost_volume(pair, weights, d_max, patch)
    analytic = patch_weight_gradient(pair, weights, combined_loss_gradient(vol, gt, cfg), d_max, patch)
    h = 1e-6
    for _ in range(15):
        p, q = rng.integers(0, 9, size=2)
        wp, wm = weights.copy(), weights.copy()
        wp[p, q] += h
        wm[p, q] -= h
        numeric = (loss(wp) - loss(wm)) / (2 * h)
        assert analytic[p, q] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_zero_training_steps_keep_identity():
    pair, gt = generate_scene(SceneSpec(24, 12, 6, "constant", 3.0, 3.0), 1)
    weights, trace = train_patch_matcher([pair], [gt], LossConfig(), 6, steps=0)
    assert np.array_equal(weights, identity_weights(5))
    assert len(trace) == 1


@pytest.fixture(scope="module")
def trained_matcher():
    spec = SceneSpec(48, 32, 12, "constant", 5.0, 5.0)
    pair, gt = generate_scene(spec, 1)
    cfg = LossConfig("mae", Laplacian(1.0), 0.05)
    weights, trace = train_patch_matcher([pair], [gt], cfg, 12, steps=300, lr=0.1, seed=0, patch=5)
    held_pair, held_gt = generate_scene(spec, 2)
    return weights, trace, held_pair, held_gt


def test_patch_matcher_generalizes(trained_matcher):
    weights, trace, pair, gt = trained_matcher
    learned = evaluate_patch_matcher(weights, pair, gt, 12, 5)
    untrained = evaluate_patch_matcher(identity_weights(5), pair, gt, 12, 5)
    assert learned < 0.10
    assert learned < untrained
    assert trace[-1].total < trace[0].total


def test_patch_matcher_is_deterministic(trained_matcher):
    spec = SceneSpec(48, 32, 12, "constant", 5.0, 5.0)
    pair, gt = generate_scene(spec, 1)
    cfg = LossConfig("mae", Laplacian(1.0), 0.05)
    a = train_patch_matcher([pair], [gt], cfg, 12, steps=5, lr=0.1, seed=4, batch_pixels=100)
    b = train_patch_matcher([pair], [gt], cfg, 12, steps=5, lr=0.1, seed=4, batch_pixels=100)
    assert a[0].tobytes() == b[0].tobytes()
    assert [r.total for r in a[1]] == [r.total for r in b[1]]


def test_patch_matcher_errors():
    pair = StereoPair(np.zeros((8, 12)), np.zeros((8, 12)))
    with pytest.raises(DomainError):
        train_patch_matcher([], [], LossConfig(), 4)
    empty = DisparityMap(np.zeros((8, 12)), np.zeros((8, 12), dtype=bool))
    with pytest.raises(DomainError):
        train_patch_matcher([pair], [empty], LossConfig(), 4, steps=1)
