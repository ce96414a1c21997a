"""Frame and clip quality metrics: PSNR, SSIM, ALV, LOE and mean optical-flow magnitude."""
from __future__ import annotations

import math

import cv2
import numpy as np

from .validation import check_same_shape

LUMA = np.array([0.299, 0.587, 0.114])


def luma(frame):
    frame = np.asarray(frame, dtype=np.float64)
    return frame if frame.ndim == 2 else frame @ LUMA


def psnr(a, b):
    """PSNR in dB with peak 1.0; identical inputs give ``math.inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    sq = ((a - b) ** 2).ravel()
    mse = math.fsum(sq) / max(sq.size, 1)  # correctly rounded sum
    if mse == 0:
        return math.inf
    # 20 log10(1/rmse) is exact for round differences where 10 log10(1/mse) is not
    return float(-20.0 * np.log10(np.sqrt(mse)))


def _gaussian_window(size=11, sigma=1.5):
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable 'valid' correlation
    k = len(g)
    rows = sum(g[i] * x[i:x.shape[0] - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j:rows.shape[1] - k + 1 + j] for j in range(k))


def ssim(a, b, k1=0.01, k2=0.03, win=11, sigma=1.5):
    """Mean SSIM over all full 11x11 Gaussian windows of the luma channel."""
    a, b = luma(a), luma(b)
    check_same_shape(a, b)
    if min(a.shape) < win:
        raise ValueError(f"ssim needs both sides >= {win}, got {a.shape}")
    g = _gaussian_window(win, sigma)
    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def alv(clip):
    """Population variance of per-frame mean luma, in 8-bit units (0..255)."""
    frames = list(clip)
    if len(frames) < 2:
        raise ValueError("alv needs at least 2 frames")
    means = np.array([luma(f).mean() * 255.0 for f in frames])
    return float(np.var(means))


def _lightness_grid(frame, max_side):
    light = np.asarray(frame, dtype=np.float64)
    if light.ndim == 3:
        light = light.max(axis=2)
    step = max(1, math.ceil(max(light.shape) / max_side))
    return light[::step, ::step].ravel()


def loe(enhanced, reference, max_side=100, exact_limit=10_000, pairs_per_pixel=1000, seed=0):
    """Lightness order error: fraction of pixel pairs whose lightness order differs.

    Lightness is the max over RGB, subsampled (strided, no averaging) to at most
    ``max_side`` per side.  Grids with up to ``exact_limit`` pixels compare every
    ordered pair p != q; larger grids compare each pixel against
    ``pairs_per_pixel`` random partners.
    """
    enhanced = np.asarray(enhanced, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    check_same_shape(enhanced, reference, ("enhanced", "reference"))
    le = _lightness_grid(enhanced, max_side)
    lr = _lightness_grid(reference, max_side)
    n = le.size
    if n < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    total = count = 0
    for start in range(0, n, 500):
        p = np.arange(start, min(start + 500, n))
        if n <= exact_limit:
            flips = (le[p, None] >= le[None, :]) != (lr[p, None] >= lr[None, :])
            count += p.size * (n - 1)  # p == q never flips
        else:
            q = rng.integers(0, n - 1, size=(p.size, pairs_per_pixel))
            q = q + (q >= p[:, None])
            flips = (le[p, None] >= le[q]) != (lr[p, None] >= lr[q])
            count += flips.size
        total += int(flips.sum())
    return float(total / count)


FARNEBACK = dict(pyr_scale=0.5, levels=4, winsize=15, iterations=5, poly_n=5,
                 poly_sigma=1.1, flags=cv2.OPTFLOW_FARNEBACK_GAUSSIAN)


def _to_gray32(gray):
    return (np.asarray(gray, dtype=np.float64) * 255.0).astype(np.float32)


FLOW_PAD = 8


def farneback(gray_a, gray_b, **params):
    """Farneback flow between two single-channel float32 images (0..255 scale)."""
    opts = {**FARNEBACK, **params}
    # OpenCV's estimate is biased along the top/left edges even for identical frames;
    # compute on a mirrored border and crop it away
    a, b = (cv2.copyMakeBorder(np.asarray(g, dtype=np.float32), *(FLOW_PAD,) * 4, cv2.BORDER_REFLECT_101)
            for g in (gray_a, gray_b))
    flow = cv2.calcOpticalFlowFarneback(a, b, None, **opts)
    return flow[FLOW_PAD:-FLOW_PAD, FLOW_PAD:-FLOW_PAD]


def dense_flow(prev, nxt, **params):
    """Polynomial-expansion (Farneback) flow [H, W, 2] (dx, dy) with prev(y, x) ~ nxt(y+dy, x+dx)."""
    return farneback(_to_gray32(luma(prev)), _to_gray32(luma(nxt)), **params)


def mean_flow(clip):
    """Mean end-point magnitude of flow between consecutive frames, pixels/frame."""
    frames = list(clip)
    if len(frames) < 2:
        raise ValueError("mean_flow needs at least 2 frames")
    mags = [np.linalg.norm(dense_flow(a, b), axis=2).mean() for a, b in zip(frames, frames[1:])]
    return float(np.mean(mags))


def metric_report(a_clip, b_clip=None):
    """MetricReport dict for a clip, optionally against a reference clip."""
    a_clip = list(a_clip)
    report = {}
    if len(a_clip) >= 2:
        report["alv"] = alv(a_clip)
        report["mean_flow"] = mean_flow(a_clip)
    if b_clip is not None:
        b_clip = list(b_clip)
        if len(a_clip) != len(b_clip):
            raise ValueError(f"clip lengths differ: {len(a_clip)} vs {len(b_clip)}")
        report["psnr"] = float(np.mean([psnr(a, b) for a, b in zip(a_clip, b_clip)]))
        report["ssim"] = float(np.mean([ssim(a, b) for a, b in zip(a_clip, b_clip)]))
        report["loe"] = float(np.mean([loe(a, b) for a, b in zip(a_clip, b_clip)]))
    return report
