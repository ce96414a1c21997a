import numpy as np
import pytest
import torch


def randomize(module, scale=0.3, seed=0):
    """Replace every parameter (including zero-initialised ones) with N(0, scale^2) draws."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return module


def bilinear_zero(img, py, px):
    """Bilinear read of a 2-D array; out-of-bounds corners contribute 0."""
    h, w = img.shape
    y0, x0 = int(np.floor(py)), int(np.floor(px))
    total = 0.0
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            wgt = max(0.0, 1 - abs(py - yy)) * max(0.0, 1 - abs(px - xx))
            if wgt and 0 <= yy < h and 0 <= xx < w:
                total += wgt * img[yy, xx]
    return total


def brute_deform_conv(x, offsets, weight, bias=None):
    """Loop-by-loop deformable 3x3 convolution on one sample: x [C, H, W]."""
    c, h, w = x.shape
    groups = offsets.shape[0] // 18
    per = c // groups
    o_ch = weight.shape[0]
    out = np.zeros((o_ch, h, w))
    taps = [(ky, kx) for ky in (-1, 0, 1) for kx in (-1, 0, 1)]
    for y in range(h):
        for xx in range(w):
            for ci in range(c):
                g = ci // per
                for k, (ky, kx) in enumerate(taps):
                    j = g * 9 + k
                    v = bilinear_zero(x[ci], y + ky + offsets[2 * j, y, xx], xx + kx + offsets[2 * j + 1, y, xx])
                    out[:, y, xx] += weight[:, ci, ky + 1, kx + 1] * v
    if bias is not None:
        out += bias[:, None, None]
    return out


def naive_dft2(x):
    """Unitary DFT by the double sum."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            s = 0j
            for a in range(h):
                for b in range(w):
                    s += x[a, b] * np.exp(-2j * np.pi * (a * u / h + b * v / w))
            out[u, v] = s / np.sqrt(h * w)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
