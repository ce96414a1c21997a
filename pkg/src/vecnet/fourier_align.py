"""Multi-frame Fourier alignment.

Every colour channel of every frame in the window is moved to Fourier space,
the window's amplitude spectra are fused into one shared amplitude, and each
frame is rebuilt from that amplitude and its own phase.  Supporting frames are
then warped onto the reference with a deformable convolution whose offsets are
predicted from the rebuilt (exposure-normalised) frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .validation import check_finite, check_same_shape

RESIDUE_TOL = 1e-4


def _as_tensor(x):
    if isinstance(x, np.ndarray):
        return torch.from_numpy(x), True
    return x, False


def _back(x, to_numpy):
    return x.detach().numpy() if to_numpy else x


def dft2(x):
    """Unitary 2-D DFT over the last two axes (1/sqrt(HW) normalisation)."""
    t, np_in = _as_tensor(x)
    check_finite(t, "dft2 input")
    return _back(torch.fft.fft2(t, norm="ortho"), np_in)


def idft2(spectrum):
    t, np_in = _as_tensor(spectrum)
    return _back(torch.fft.ifft2(t, norm="ortho"), np_in)


@dataclass(frozen=True)
class SpectrumPair:
    amplitude: object
    phase: object


def split_amp_phase(spectrum) -> SpectrumPair:
    """Polar split; the phase of a zero-amplitude bin is defined as 0."""
    t, np_in = _as_tensor(spectrum)
    if not torch.is_complex(t):
        raise TypeError("split_amp_phase expects a complex spectrum")
    amp = torch.abs(t)
    phase = torch.atan2(t.imag, t.real)
    phase = torch.where(amp == 0, torch.zeros_like(phase), phase)
    return SpectrumPair(_back(amp, np_in), _back(phase, np_in))


def recombine(amplitude, phase, tol=RESIDUE_TOL):
    """Inverse DFT of amplitude * exp(i * phase), returning the real part.

    Raises if the imaginary residue exceeds ``tol``, i.e. the pair is not the
    spectrum of a real image.
    """
    a, np_in = _as_tensor(amplitude)
    p, _ = _as_tensor(phase)
    check_same_shape(a, p, ("amplitude", "phase"))
    out = torch.fft.ifft2(torch.polar(a, p), norm="ortho")
    residue = out.imag.detach().abs().max().item() if out.numel() else 0.0
    if residue > tol:
        raise ValueError(
            f"imaginary residue {residue:.3g} exceeds {tol:g}: amplitude/phase pair is corrupted")
    return _back(out.real, np_in)


def hermitian_symmetrize(amp: torch.Tensor) -> torch.Tensor:
    """Average each bin with its point reflection (u, v) -> (-u, -v) mod (H, W)."""
    mirrored = torch.roll(torch.flip(amp, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
    return 0.5 * (amp + mirrored)


class AmplitudeAggregator(nn.Module):
    """Fuses the 2N+1 amplitude spectra of each colour channel into one.

    Two grouped 3x3 convolutions (one group per colour channel) predict a
    correction to the window-mean amplitude.  The last convolution starts at
    zero, so an untrained aggregator returns the mean amplitude.
    """

    def __init__(self, n_frames, hidden):
        super().__init__()
        self.n_frames = n_frames
        self.conv1 = nn.Conv2d(3 * n_frames, 3 * hidden, 3, padding=1, groups=3)
        self.conv2 = nn.Conv2d(3 * hidden, 3, 3, padding=1, groups=3)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, amps):
        # amps: [B, T, 3, H, W]
        b, t, c, h, w = amps.shape
        if t != self.n_frames:
            raise ValueError(f"aggregator configured for {self.n_frames} frames, got {t}")
        grouped = amps.transpose(1, 2).reshape(b, c * t, h, w)
        out = amps.mean(dim=1) + self.conv2(F.relu(self.conv1(grouped)))
        return hermitian_symmetrize(F.relu(out))


def aggregate_amplitudes(amps, aggregator: AmplitudeAggregator):
    """[B, 2N+1, 3, H, W] (or unbatched [2N+1, 3, H, W]) amplitudes -> shared amplitude."""
    amps, np_in = _as_tensor(amps)
    single = amps.dim() == 4
    if single:
        amps = amps.unsqueeze(0)
    out = aggregator(amps)
    return _back(out[0] if single else out, np_in)


_TAPS = [(ky, kx) for ky in (-1, 0, 1) for kx in (-1, 0, 1)]


def deform_conv2d(x, offsets, weight, bias=None):
    """3x3 deformable convolution, stride 1, padding 1.

    ``offsets`` is [B, 2*9*G, H, W] holding (dy, dx) per tap, taps in row-major
    order, grouped by offset group G (channels split evenly across groups).
    Samples are bilinear; reads outside the image are zero.
    """
    b, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError("deformable sampling needs H, W >= 2")
    if offsets.shape[0] != b or offsets.shape[2:] != x.shape[2:] or offsets.shape[1] % 18:
        raise ValueError(f"offset field {tuple(offsets.shape)} incompatible with input {tuple(x.shape)}")
    groups = offsets.shape[1] // 18
    if c % groups:
        raise ValueError("channels must be divisible by offset groups")
    off = offsets.view(b, groups, 9, 2, h, w)
    taps = torch.tensor(_TAPS, dtype=x.dtype, device=x.device)
    ys = torch.arange(h, dtype=x.dtype, device=x.device).view(1, 1, 1, h, 1)
    xs = torch.arange(w, dtype=x.dtype, device=x.device).view(1, 1, 1, 1, w)
    py = ys + taps[:, 0].view(1, 1, 9, 1, 1) + off[:, :, :, 0]
    px = xs + taps[:, 1].view(1, 1, 9, 1, 1) + off[:, :, :, 1]
    grid = torch.stack((2 * px / (w - 1) - 1, 2 * py / (h - 1) - 1), dim=-1)
    grid = grid.reshape(b * groups, 9 * h, w, 2)
    sampled = F.grid_sample(x.reshape(b * groups, c // groups, h, w), grid,
                            mode="bilinear", padding_mode="zeros", align_corners=True)
    cols = sampled.view(b, c, 9, h, w)
    out = torch.einsum("bckhw,ock->bohw", cols, weight.reshape(weight.shape[0], c, 9))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class OffsetPredictor(nn.Module):
    """Predicts per-pixel sampling offsets for warping ``support`` onto ``ref``.

    The output is m(s, r) - m(r, s), so a frame paired with itself always gets
    zero offsets.  The last layer starts at zero (identity alignment).
    """

    def __init__(self, hidden, offset_groups):
        super().__init__()
        self.offset_groups = offset_groups
        self.conv1 = nn.Conv2d(6, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 18 * offset_groups, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def _m(self, x):
        return self.conv2(F.leaky_relu(self.conv1(x), 0.1))

    def forward(self, support, ref):
        check_same_shape(support, ref, ("support", "reference"))
        n = support.shape[0]
        both = self._m(torch.cat([torch.cat([support, ref], 1), torch.cat([ref, support], 1)], 0))
        limit = float(max(support.shape[-2:]))
        return torch.clamp(both[:n] - both[n:], -limit, limit)


class DeformAligner(nn.Module):
    """Deformable 3x3 convolution followed by the residual mapping network."""

    def __init__(self, out_channels):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_channels, 3, 3, 3))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)
        self.map1 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.map2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.map2.weight)
        nn.init.zeros_(self.map2.bias)

    def forward(self, x, offsets):
        feat = deform_conv2d(x, offsets, self.weight, self.bias)
        return feat + self.map2(F.leaky_relu(self.map1(feat), 0.1))


def compute_offsets(x_support, x_ref, predictor: OffsetPredictor):
    check_same_shape(x_support, x_ref, ("support", "reference"))
    return predictor(x_support, x_ref)


def deform_align(x_support, offsets, aligner: DeformAligner):
    return aligner(x_support, offsets)


class FourierAlign(nn.Module):
    """Aligns a window [B, 2N+1, 3, H, W] into features [B, 2N+1, C, H, W]."""

    def __init__(self, n_radius, channels, offset_groups=1, share=True):
        super().__init__()
        self.n_radius = n_radius
        self.n_frames = 2 * n_radius + 1
        self.share = share
        copies = 1 if share else self.n_frames
        self.aggregator = AmplitudeAggregator(self.n_frames, channels)
        self.predictors = nn.ModuleList(OffsetPredictor(channels, offset_groups) for _ in range(copies))
        self.aligners = nn.ModuleList(DeformAligner(channels) for _ in range(copies))

    def rebuild(self, window):
        """Shared-amplitude reconstruction of every frame in the window."""
        spec = torch.fft.fft2(window, norm="ortho")
        pair = split_amp_phase(spec)
        abar = self.aggregator(pair.amplitude)
        return recombine(abar.unsqueeze(1).expand_as(pair.amplitude), pair.phase)

    def forward(self, window, return_offsets=False):
        b, t, c, h, w = window.shape
        if t != self.n_frames:
            raise ValueError(f"expected {self.n_frames} frames per window, got {t}")
        xt = self.rebuild(window)
        ref = xt[:, self.n_radius]
        if self.share:
            flat = xt.reshape(b * t, c, h, w)
            refs = ref.unsqueeze(1).expand_as(xt).reshape(b * t, c, h, w)
            offsets = self.predictors[0](flat, refs)
            feats = self.aligners[0](flat, offsets)
            feats = feats.view(b, t, -1, h, w)
            offsets = offsets.view(b, t, -1, h, w)
        else:
            offs, outs = [], []
            for k in range(t):
                o = self.predictors[k](xt[:, k], ref)
                offs.append(o)
                outs.append(self.aligners[k](xt[:, k], o))
            feats = torch.stack(outs, 1)
            offsets = torch.stack(offs, 1)
        return (feats, offsets) if return_offsets else feats


def align_window(clip, module: FourierAlign):
    """Align a ClipWindow (or [2N+1, H, W, 3] array) -> features [2N+1, C, H, W]."""
    frames = clip.to_array() if hasattr(clip, "to_array") else np.asarray(clip)
    param = next(module.parameters())
    window = torch.as_tensor(frames, dtype=param.dtype).permute(0, 3, 1, 2).unsqueeze(0)
    return module(window)[0]
