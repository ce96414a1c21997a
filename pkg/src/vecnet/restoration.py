"""Two-stage synthesis restoration and the assembled VECNet model."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ModelConfig
from .fourier_align import FourierAlign
from .illumination import IlluminationNet, dic_forward
from .validation import check_same_shape


def _act(x):
    return F.leaky_relu(x, 0.1)


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = nn.Conv2d(channels, hidden, 1)
        self.excite = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        w = x.mean(dim=(2, 3), keepdim=True)
        return x * torch.sigmoid(self.excite(F.relu(self.squeeze(w))))


class RCAB(nn.Module):
    """Residual channel attention block."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.attention = ChannelAttention(channels)

    def forward(self, x):
        return x + self.attention(self.conv2(_act(self.conv1(x))))


def instance_norm(x, eps=1e-6):
    return F.instance_norm(x, eps=eps)


class ReflectanceNet(nn.Module):
    """Aligned window features -> pyramid [full, 1/2, 1/4] of reflectance features."""

    def __init__(self, n_frames, channels, rcab_count):
        super().__init__()
        self.inc = nn.Conv2d(n_frames * channels, channels, 3, padding=1)
        self.levels = nn.ModuleList(
            nn.Sequential(*[RCAB(channels) for _ in range(rcab_count)]) for _ in range(3))
        self.downs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, stride=2, padding=1) for _ in range(2))

    def forward(self, aligned):
        b, t, c, h, w = aligned.shape
        x = instance_norm(aligned.reshape(b, t * c, h, w))
        feats = [self.levels[0](self.inc(x))]
        for down, level in zip(self.downs, self.levels[1:]):
            feats.append(level(_act(down(feats[-1]))))
        return feats


def reflectance_forward(aligned, net: ReflectanceNet):
    return net(aligned)


class Stage1Fusion(nn.Module):
    """Fuses both illumination latents with the coarsest reflectance level, then
    upsamples with skip connections to a 3-channel image in [0, 1]."""

    def __init__(self, channels, rcab_count):
        super().__init__()
        self.inc = nn.Conv2d(3 * channels, channels, 3, padding=1)
        self.levels = nn.ModuleList(
            nn.Sequential(*[RCAB(channels) for _ in range(rcab_count)]) for _ in range(3))
        self.ups = nn.ModuleList(nn.Conv2d(channels, channels, 3, padding=1) for _ in range(2))
        self.out = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, z, z_inv, pyramid):
        coarse = pyramid[-1]
        if z.shape != coarse.shape or z_inv.shape != coarse.shape:
            raise ValueError(
                f"latents {tuple(z.shape)}/{tuple(z_inv.shape)} do not match the coarsest "
                f"reflectance level {tuple(coarse.shape)}")
        x = self.levels[0](self.inc(torch.cat([z, z_inv, coarse], 1)))
        for up, level, skip in zip(self.ups, self.levels[1:], reversed(pyramid[:-1])):
            x = _act(up(F.interpolate(x, scale_factor=2, mode="nearest"))) + skip
            x = level(x)
        return torch.sigmoid(self.out(x))


def stage1_fuse(z, z_inv, pyramid, net: Stage1Fusion):
    return net(z, z_inv, pyramid)


class NonLocalBlock(nn.Module):
    """Embedded-Gaussian non-local block; the output projection starts at zero."""

    def __init__(self, channels):
        super().__init__()
        inner = max(1, channels // 2)
        self.theta = nn.Conv2d(channels, inner, 1)
        self.phi = nn.Conv2d(channels, inner, 1)
        self.g = nn.Conv2d(channels, inner, 1)
        self.proj = nn.Conv2d(inner, channels, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        q = self.theta(x).flatten(2).transpose(1, 2)
        k = self.phi(x).flatten(2)
        v = self.g(x).flatten(2).transpose(1, 2)
        attn = torch.softmax(q @ k, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, -1, h, w)
        return x + self.proj(y)


class Stage2Fusion(nn.Module):
    """Predicts a per-pixel convex weight over (I_u, I_o, I_mid)."""

    def __init__(self, channels):
        super().__init__()
        self.inc = nn.Conv2d(9, channels, 3, padding=1)
        self.nonlocal_block = NonLocalBlock(channels)
        self.mid = nn.Conv2d(channels, channels, 3, padding=1)
        self.out = nn.Conv2d(channels, 3, 3, padding=1)

    def weight_map(self, I_u, I_o, I_mid):
        x = _act(self.inc(torch.cat([I_u, I_o, I_mid], 1)))
        coarse = F.avg_pool2d(x, 4)
        x = x + F.interpolate(self.nonlocal_block(coarse) - coarse, scale_factor=4, mode="nearest")
        return torch.softmax(self.out(_act(self.mid(x))), dim=1)

    def forward(self, I_u, I_o, I_mid, return_weights=False):
        check_same_shape(I_u, I_o, ("I_u", "I_o"))
        check_same_shape(I_u, I_mid, ("I_u", "I_mid"))
        w = self.weight_map(I_u, I_o, I_mid)
        out = w[:, 0:1] * I_u + w[:, 1:2] * I_o + w[:, 2:3] * I_mid
        return (out, w) if return_weights else out


def stage2_fuse(I_u, I_o, I_mid, net: Stage2Fusion):
    return net(I_u, I_o, I_mid)


class VECOutput(NamedTuple):
    output: torch.Tensor
    L: torch.Tensor
    L_inv: torch.Tensor
    I_u: torch.Tensor
    I_o: torch.Tensor
    I_mid: torch.Tensor
    weights: torch.Tensor
    offsets: torch.Tensor


class VECNet(nn.Module):
    """Window [B, 2N+1, 3, H, W] in [0, 1] -> enhanced reference frame [B, 3, H, W]."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        c = config.base_channels
        n_frames = 2 * config.n_radius + 1
        self.align = FourierAlign(config.n_radius, c, config.offset_groups, config.share_align)
        self.illumination = IlluminationNet(c, config.unet_depth)
        self.reflectance = ReflectanceNet(n_frames, c, config.rcab_count)
        self.stage1 = Stage1Fusion(c, config.rcab_count)
        self.stage2 = Stage2Fusion(c)

    def forward(self, window) -> VECOutput:
        n = self.config.n_radius
        if window.dim() != 5 or window.shape[1] != 2 * n + 1 or window.shape[2] != 3:
            raise ValueError(f"expected window [B, {2 * n + 1}, 3, H, W], got {tuple(window.shape)}")
        aligned, offsets = self.align(window, return_offsets=True)
        dic = dic_forward(window[:, n], self.illumination)
        pyramid = self.reflectance(aligned)
        I_mid = self.stage1(dic.z, dic.z_inv, pyramid)
        out, w = self.stage2(dic.I_u, dic.I_o, I_mid, return_weights=True)
        return VECOutput(out, dic.L, dic.L_inv, dic.I_u, dic.I_o, I_mid, w, offsets)


def vecnet_forward(clip, model: VECNet) -> VECOutput:
    """Run a ClipWindow (or [2N+1, H, W, 3] array) through the model, unbatched."""
    frames = clip.to_array() if hasattr(clip, "to_array") else np.asarray(clip)
    param = next(model.parameters())
    window = torch.as_tensor(frames, dtype=param.dtype).permute(0, 3, 1, 2).unsqueeze(0)
    out = model(window)
    return VECOutput(*(t[0] for t in out))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def analytic_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count of ``VECNet(config)``."""
    c = config.base_channels
    t = 2 * config.n_radius + 1
    n = config.rcab_count

    def conv(cin, cout, k, groups=1):
        return cout * (cin // groups) * k * k + cout

    def convT(cin, cout, k):
        return cin * cout * k * k + cout

    def rcab(ch):
        r = max(1, ch // 4)
        return 2 * conv(ch, ch, 3) + conv(ch, r, 1) + conv(r, ch, 1)

    copies = 1 if config.share_align else t
    aggregator = conv(3 * t, 3 * c, 3, groups=3) + conv(3 * c, 3, 3, groups=3)
    predictor = conv(6, c, 3) + conv(c, 18 * config.offset_groups, 3)
    aligner = c * 3 * 9 + c + 2 * conv(c, c, 3)
    align = aggregator + copies * (predictor + aligner)

    widths = [c * 2 ** i for i in range(config.unet_depth + 1)]
    unet = conv(c, c, 3) + sum(
        conv(widths[i], widths[i + 1], 3) + convT(widths[i + 1], widths[i], 2)
        + conv(2 * widths[i], widths[i], 3) for i in range(config.unet_depth))
    illumination = conv(3, c, 3) + 2 * conv(c, c, 3) + unet + 2 * convT(c, c, 2) + conv(c, 3, 3)

    reflectance = conv(t * c, c, 3) + 3 * n * rcab(c) + 2 * conv(c, c, 3)
    stage1 = conv(3 * c, c, 3) + 3 * n * rcab(c) + 2 * conv(c, c, 3) + conv(c, 3, 3)
    inner = max(1, c // 2)
    nonlocal_block = 3 * conv(c, inner, 1) + conv(inner, c, 1)
    stage2 = conv(9, c, 3) + nonlocal_block + conv(c, c, 3) + conv(c, 3, 3)
    return align + illumination + reflectance + stage1 + stage2
