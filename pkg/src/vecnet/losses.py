"""Training objective: Charbonnier + illumination TV + Fourier amplitude consistency."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch

from .core import LossWeights
from .validation import check_same_shape

CHARBONNIER_EPS = 1e-3


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x)


def charbonnier(pred, gt, eps=CHARBONNIER_EPS):
    pred, gt = _t(pred), _t(gt)
    check_same_shape(pred, gt, ("pred", "gt"))
    # averaging the excess over eps keeps the zero-difference value exactly eps
    return eps + (torch.sqrt((pred - gt) ** 2 + eps * eps) - eps).mean()


def _tv(x):
    # channel-first maps [..., C, H, W]: sum over channels, mean over positions
    dx = (x[..., :, 1:] - x[..., :, :-1]) ** 2
    dy = (x[..., 1:, :] - x[..., :-1, :]) ** 2
    cdim = x.dim() - 3
    return dx.sum(cdim).mean() + dy.sum(cdim).mean()


def tv_loss(L, L_inv):
    """Squared forward differences of both maps, summed over channels.

    Maps are channel-first ([C, H, W] or [B, C, H, W]); each direction's squares
    are averaged over the positions where that difference exists.
    """
    L, L_inv = _t(L), _t(L_inv)
    check_same_shape(L, L_inv, ("L", "L_inv"))
    return _tv(L) + _tv(L_inv)


def amplitude(x):
    return torch.abs(torch.fft.fft2(x, norm="ortho"))


def amplitude_loss(output, gt):
    """Mean absolute difference of per-channel amplitude spectra (channel-first)."""
    output, gt = _t(output), _t(gt)
    check_same_shape(output, gt, ("output", "gt"))
    return (amplitude(output) - amplitude(gt)).abs().mean()


@dataclass
class LossReport:
    pix: float
    tv: float
    amp: float
    total: float

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **asdict(self)})


def total_loss(pix, tv, amp, weights: LossWeights | None = None):
    """Weighted sum; returns (total tensor, LossReport)."""
    weights = weights or LossWeights()
    parts = {name: float(v.detach() if isinstance(v, torch.Tensor) else v)
             for name, v in (("pix", pix), ("tv", tv), ("amp", amp))}
    for name, value in parts.items():
        if not math.isfinite(value):
            dump = ", ".join(f"{k}={v}" for k, v in parts.items())
            raise FloatingPointError(f"loss term {name!r} is not finite ({dump})")
    total = weights.lambda_pix * pix + weights.lambda_tv * tv + weights.lambda_amp * amp
    report = LossReport(parts["pix"], parts["tv"], parts["amp"],
                        float(total.detach() if isinstance(total, torch.Tensor) else total))
    return total, report


def vecnet_loss(out, gt, weights: LossWeights | None = None):
    """Full objective from a model output (VECOutput) and ground truth [B, 3, H, W]."""
    return total_loss(charbonnier(out.output, gt), tv_loss(out.L, out.L_inv),
                      amplitude_loss(out.output, gt), weights)
