import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecnet.datapipe import textured_canvas
from vecnet.metrics import alv, loe, luma, mean_flow, metric_report, psnr, ssim


def test_psnr_cases(rng):
    x = rng.random((16, 16, 3)) * 0.8
    assert psnr(x, x) == math.inf
    assert psnr(x, x + 0.1) == 20.0
    y = rng.random((16, 16, 3))
    assert psnr(x, y) == psnr(y, x)
    with pytest.raises(ValueError, match="shape mismatch"):
        psnr(x, y[:8])


def test_psnr_uniform_01_exact():
    a = np.zeros((12, 12, 3))
    assert psnr(a, np.full_like(a, 0.1)) == 20.0


def test_psnr_strictly_decreasing():
    a = np.full((8, 8, 3), 0.2)
    values = [psnr(a, a + d) for d in np.linspace(0.01, 0.7, 30)]
    assert all(u > v for u, v in zip(values, values[1:]))


def _ssim_oracle(a, b, win=11, sigma=1.5):
    # every window computed independently as a weighted scalar sum
    a, b = luma(a), luma(b)
    r = np.arange(win) - win // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for y in range(a.shape[0] - win + 1):
        for x in range(a.shape[1] - win + 1):
            pa, pb = a[y:y + win, x:x + win], b[y:y + win, x:x + win]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va, vb = (g * (pa - ma) ** 2).sum(), (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_self_is_one(rng):
    x = rng.random((20, 24, 3))
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_ssim_matches_window_oracle(rng):
    a = rng.random((16, 18, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-10)


def test_ssim_constant_shift_matches_oracle(rng):
    a = rng.random((16, 16, 3)) * 0.6
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 0.6)
    shifted = ssim(a + 0.3, b + 0.3)
    assert shifted == pytest.approx(_ssim_oracle(a + 0.3, b + 0.3), abs=1e-10)
    # contrast/structure terms are unchanged; only the luminance term moves
    assert abs(shifted - ssim(a, b)) < 0.05


def test_ssim_checkerboard_inverse_negative():
    yy, xx = np.mgrid[:16, :16]
    board = np.repeat(((yy + xx) % 2).astype(float)[..., None], 3, axis=2)
    value = ssim(board, 1 - board)
    assert value < 0
    assert value == pytest.approx(_ssim_oracle(board, 1 - board), abs=1e-10)


def test_ssim_matches_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    a = rng.random((32, 40, 3))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    ref = metrics.structural_similarity(luma(a), luma(b), data_range=1.0, gaussian_weights=True,
                                        sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_ssim_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert -1 <= ssim(a, b) <= 1


def test_ssim_too_small():
    with pytest.raises(ValueError, match="11"):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


def _luma_frame(value, shape=(8, 8)):
    return np.full(shape + (3,), value / 255.0)


def test_alv_cases():
    assert alv([_luma_frame(100)] * 5) == 0.0
    assert alv([_luma_frame(100), _luma_frame(110)]) == pytest.approx(25.0, abs=1e-9)
    with pytest.raises(ValueError):
        alv([_luma_frame(1)])


def test_alv_duplicate_frame_bound(rng):
    means = rng.uniform(40, 200, size=6)
    clip = [_luma_frame(m) for m in means]
    base = alv(clip)
    assert base == pytest.approx(np.mean((means - means.mean()) ** 2), rel=1e-9)
    max_pair = max((a - b) ** 2 / 4 for a, b in itertools.combinations(means, 2))
    for i in range(len(clip)):
        assert alv(clip + [clip[i]]) <= max_pair + 1e-9


def test_alv_spatial_permutation(rng):
    clip = [rng.random((8, 8, 3)) for _ in range(4)]
    perm = rng.permutation(64)
    shuffled = [f.reshape(64, 3)[perm].reshape(8, 8, 3) for f in clip]
    assert alv(shuffled) == pytest.approx(alv(clip), rel=1e-12)


def _loe_oracle(a, b):
    la, lb = a.max(axis=2).ravel(), b.max(axis=2).ravel()
    n = la.size
    bad = sum((la[p] >= la[q]) != (lb[p] >= lb[q]) for p in range(n) for q in range(n) if p != q)
    return bad / (n * (n - 1))


def test_loe_matches_pair_oracle(rng):
    a, b = rng.random((8, 9, 3)), rng.random((8, 9, 3))
    assert loe(a, b) == pytest.approx(_loe_oracle(a, b), abs=1e-15)


def test_loe_identity_and_monotone(rng):
    x = rng.random((20, 20, 3))
    assert loe(x, x) == 0.0
    assert loe(0.5 * x + 0.2, x) == 0.0
    assert loe(x ** 3, np.sqrt(x)) == 0.0


def test_loe_reversal_is_maximal():
    light = np.random.default_rng(0).permutation(64).reshape(8, 8) / 64.0 + 0.01
    x = np.repeat(light[..., None], 3, axis=2)
    assert loe(1 - x, x) == 1.0


def test_loe_sampled_mode_close_to_exact(rng):
    a = rng.random((60, 60, 3))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    exact = loe(a, b)
    sampled = loe(a, b, exact_limit=100)
    assert abs(exact - sampled) < 0.01


def test_loe_downsampling_large_frame(rng):
    a = rng.random((250, 180, 3))
    assert loe(a, a) == 0.0


def test_mean_flow_static_and_shift():
    canvas = textured_canvas(80, 100, seed=3)
    assert mean_flow([canvas, canvas.copy()]) < 1e-3
    a, b = canvas[:, 10:74], canvas[:, 7:71]
    assert mean_flow([a, b]) == pytest.approx(3.0, abs=0.5)
    with pytest.raises(ValueError):
        mean_flow([a])


def test_metric_report_keys(rng):
    clip = [rng.random((16, 16, 3)) for _ in range(3)]
    report = metric_report(clip, clip)
    assert set(report) == {"alv", "mean_flow", "psnr", "ssim", "loe"}
    assert report["psnr"] == math.inf and report["ssim"] == pytest.approx(1.0) and report["loe"] == 0.0
    assert set(metric_report(clip)) == {"alv", "mean_flow"}
    for v in report.values():
        assert v >= 0
