"""Dual-stream illumination construction.

One encoder / U-Net / decoder estimates an illumination map for the reference
frame and, with the same weights, for its inverted frame.  Dividing by the two
maps gives an under-exposure corrected image and an over-exposure corrected one.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import EPS_L


def _clip01(x):
    if isinstance(x, np.ndarray):
        return np.clip(x, 0.0, 1.0)
    return torch.clamp(x, 0.0, 1.0)


def _check_floor(L, name):
    low = float(L.detach().min() if isinstance(L, torch.Tensor) else np.min(L))
    if low < EPS_L * (1 - 1e-6):
        raise ValueError(f"{name} has values below the floor {EPS_L} (min {low:.3g})")


def invert_exposure(frame):
    return 1 - frame


def apply_retinex_under(frame, L, clamp=True):
    """frame / L, clamped to [0, 1] unless ``clamp`` is False."""
    _check_floor(L, "illumination map")
    out = frame / L
    return _clip01(out) if clamp else out


def apply_retinex_over(frame, L_inv, clamp=True):
    """1 - (1 - frame) / L_inv, clamped to [0, 1] unless ``clamp`` is False."""
    _check_floor(L_inv, "inverted illumination map")
    # written as frame + (1 - frame)(1 - 1/L_inv) so L_inv = 1 returns frame bit for bit
    out = frame + (1 - frame) * (1 - 1 / L_inv)
    return _clip01(out) if clamp else out


def _act(x):
    return F.leaky_relu(x, 0.1)


class UNet(nn.Module):
    def __init__(self, channels, depth):
        super().__init__()
        self.depth = depth
        widths = [channels * 2 ** i for i in range(depth + 1)]
        self.inc = nn.Conv2d(widths[0], widths[0], 3, padding=1)
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(depth))
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2) for i in range(depth))
        self.fuse = nn.ModuleList(
            nn.Conv2d(2 * widths[i], widths[i], 3, padding=1) for i in range(depth))

    def forward(self, x):
        skips = [_act(self.inc(x))]
        for down in self.downs:
            skips.append(_act(down(skips[-1])))
        y = skips.pop()
        for i in reversed(range(self.depth)):
            y = _act(self.ups[i](y))
            y = _act(self.fuse[i](torch.cat([y, skips.pop()], 1)))
        return y


class IlluminationNet(nn.Module):
    """frame [B, 3, H, W] -> (L in [EPS_L, 1], latent z~ at 1/4 resolution)."""

    def __init__(self, channels, unet_depth):
        super().__init__()
        self.multiple = 4 * 2 ** unet_depth
        self.enc0 = nn.Conv2d(3, channels, 3, padding=1)
        self.enc1 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.unet = UNet(channels, unet_depth)
        self.dec1 = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.dec2 = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.out = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, frame):
        h, w = frame.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise ValueError(
                f"frame size {h}x{w} must be divisible by {self.multiple}; "
                "pad the frame (e.g. reflectively) and crop the result back")
        z = self.enc2(_act(self.enc1(_act(self.enc0(frame)))))
        z_tilde = self.unet(z)
        raw = self.out(_act(self.dec2(_act(self.dec1(z_tilde)))))
        L = EPS_L + (1 - EPS_L) * torch.sigmoid(raw)
        return L, z_tilde


def estimate_illumination(frame, net: IlluminationNet):
    return net(frame)


class DICOutput(NamedTuple):
    I_u: torch.Tensor
    I_o: torch.Tensor
    z: torch.Tensor
    z_inv: torch.Tensor
    L: torch.Tensor
    L_inv: torch.Tensor


def dic_forward(frame, net: IlluminationNet) -> DICOutput:
    """Both streams through the same network; frame is [B, 3, H, W]."""
    L, z = net(frame)
    inv = invert_exposure(frame)
    L_inv, z_inv = net(inv)
    I_u = apply_retinex_under(frame, L)
    I_o = apply_retinex_over(frame, L_inv)
    return DICOutput(I_u, I_o, z, z_inv, L, L_inv)
