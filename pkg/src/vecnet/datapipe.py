"""Paired-clip alignment (homography, dense-flow refinement, centre crop), synthetic
exposure degradation, and training-window sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from .core import ClipWindow, window_indices
from .metrics import farneback, loe, luma
from .validation import check_clip, check_frame

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 16


class AlignmentError(RuntimeError):
    """Raised when a frame pair cannot be registered; callers may fall back to identity."""


@dataclass
class AlignmentResult:
    warped: np.ndarray
    homography: np.ndarray
    flow: np.ndarray
    crop_margin: int = 0
    residual_flow: float = math.nan
    n_matches: int = 0


def _gray(frame):
    """Luma rank-transformed to a uniform 0..255 float32 image.

    Any global monotone exposure change leaves the ranks unchanged, so a
    degraded frame and its normal counterpart map to (nearly) the same image.
    Computed in float so dark frames are not crushed to a few 8-bit levels.
    """
    y = luma(frame)
    flat = np.sort(y.ravel())
    lo = np.searchsorted(flat, y, "left")
    hi = np.searchsorted(flat, y, "right")
    return ((lo + hi - 1) * (127.5 / max(flat.size - 1, 1))).astype(np.float32)


def _warp(frame, H):
    h, w = frame.shape[:2]
    out = cv2.warpPerspective(frame, H, (w, h), flags=cv2.INTER_LINEAR,
                              borderMode=cv2.BORDER_REPLICATE)
    return np.clip(out, 0.0, 1.0)


def _ecc_refine(src, ref, H):
    """Dense intensity refinement of a homography src -> ref; returns None if it fails."""
    warp = np.linalg.inv(H)
    warp = (warp / warp[2, 2]).astype(np.float32)
    criteria = (cv2.TERM_CRITERIA_EPS | cv2.TERM_CRITERIA_COUNT, 200, 1e-7)
    try:
        _, warp = cv2.findTransformECC(_gray(ref) / 255.0, _gray(src) / 255.0, warp,
                                       cv2.MOTION_HOMOGRAPHY, criteria, None, 5)
    except cv2.error:
        return None
    refined = np.linalg.inv(warp.astype(np.float64))
    return refined / refined[2, 2]


def homography_align(src, ref, ratio=0.75, ransac_thresh=3.0, min_matches=8, refine=True):
    """Register ``src`` onto ``ref`` with SIFT matches and a RANSAC homography.

    With ``refine`` the keypoint estimate seeds an ECC (enhanced correlation
    coefficient) fit over all pixels, kept only if it stays within a few pixels
    of the seed.
    """
    src = check_frame(src, name="src")
    ref = check_frame(ref, name="ref")
    sift = cv2.SIFT_create()
    kp_s, des_s = sift.detectAndCompute(np.rint(_gray(src)).astype(np.uint8), None)
    kp_r, des_r = sift.detectAndCompute(np.rint(_gray(ref)).astype(np.uint8), None)
    if des_s is None or des_r is None or len(kp_s) < 2 or len(kp_r) < 2:
        raise AlignmentError("too few keypoints; fall back to identity")
    matches = cv2.BFMatcher(cv2.NORM_L2).knnMatch(des_s, des_r, k=2)
    good = [m[0] for m in matches if len(m) == 2 and m[0].distance < ratio * m[1].distance]
    if len(good) < min_matches:
        raise AlignmentError(f"only {len(good)} matches (< {min_matches}); fall back to identity")
    pts_s = np.float32([kp_s[m.queryIdx].pt for m in good])
    pts_r = np.float32([kp_r[m.trainIdx].pt for m in good])
    H, _ = cv2.findHomography(pts_s, pts_r, cv2.RANSAC, ransac_thresh)
    if H is None or abs(np.linalg.det(H)) < 1e-8:
        raise AlignmentError("degenerate homography; fall back to identity")
    h, w = src.shape[:2]
    if refine:
        refined = _ecc_refine(src, ref, H)
        if refined is not None and _corner_shift(H, refined, h, w) < ransac_thresh:
            H = refined
    return AlignmentResult(_warp(src, H), H, np.zeros((h, w, 2)), n_matches=len(good))


def _corner_shift(H1, H2, h, w):
    corners = np.array([[0, 0, 1], [w - 1, 0, 1], [0, h - 1, 1], [w - 1, h - 1, 1]], dtype=np.float64).T
    a, b = H1 @ corners, H2 @ corners
    return float(np.abs(a[:2] / a[2] - b[:2] / b[2]).max())


def _flow(a, b):
    return farneback(_gray(a), _gray(b))


def _remap(frame, flow):
    h, w = frame.shape[:2]
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    mx = (gx + flow[..., 0]).astype(np.float32)
    my = (gy + flow[..., 1]).astype(np.float32)
    out = cv2.remap(frame.astype(np.float32), mx, my,
                    cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return np.clip(out.astype(np.float64), 0.0, 1.0)


def dense_flow_refine(src, ref):
    """Warp ``src`` onto ``ref`` along the dense flow ref -> src."""
    src = check_frame(src, name="src")
    ref = check_frame(ref, name="ref")
    flow = _flow(ref, src).astype(np.float64)
    warped = _remap(src, flow)
    residual = float(np.linalg.norm(_flow(ref, warped), axis=2).mean())
    return AlignmentResult(warped, np.eye(3), flow, residual_flow=residual)


def center_crop(frame, margin):
    h, w = frame.shape[:2]
    if margin < 0 or 2 * margin >= min(h, w):
        raise ValueError(f"crop margin {margin} too large for {h}x{w}")
    return frame[margin:h - margin, margin:w - margin] if margin else frame


@dataclass
class AlignedClip:
    inputs: list
    gts: list
    frame_index: list
    stats: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {"frames": len(self.inputs), "excluded": len(self.excluded)}
        for key in ("loe_before", "loe_after", "flow_before", "flow_after"):
            vals = [s[key] for s in self.stats]
            out[key] = float(np.mean(vals)) if vals else math.nan
        return out


def align_pair(src_clip, ref_clip, margin=DEFAULT_MARGIN, use_homography=True):
    """Align normal-exposure frames (``ref_clip``) to the captured degraded frames
    (``src_clip``), which are left untouched apart from the shared crop."""
    src_clip, ref_clip = list(src_clip), list(ref_clip)
    if len(src_clip) != len(ref_clip):
        raise ValueError(f"clip lengths differ: {len(src_clip)} vs {len(ref_clip)}")
    result = AlignedClip([], [], [])
    for i, (deg, normal) in enumerate(zip(src_clip, ref_clip)):
        try:
            moved = normal
            H = np.eye(3)
            if use_homography:
                hres = homography_align(normal, deg)
                moved, H = hres.warped, hres.homography
            fres = dense_flow_refine(moved, deg)
        except (AlignmentError, cv2.error) as exc:
            log.warning("frame %d excluded: %s", i, exc)
            result.excluded.append((i, str(exc)))
            continue
        deg_c = center_crop(deg, margin)
        before = center_crop(normal, margin)
        after = center_crop(fres.warped, margin)
        result.inputs.append(deg_c)
        result.gts.append(after)
        result.frame_index.append(i)
        result.stats.append({
            "frame": i,
            "loe_before": loe(before, deg_c),
            "loe_after": loe(after, deg_c),
            "flow_before": float(np.linalg.norm(_flow(deg_c, before), axis=2).mean()),
            "flow_after": float(np.linalg.norm(_flow(deg_c, after), axis=2).mean()),
            "homography": H.tolist(),
        })
    return result


@dataclass
class DegradationParams:
    mode: str = "under"
    gamma: float = 2.2
    gain: float = 0.7
    noise_sigma: float = 0.0
    flicker_amplitude: float = 0.0
    flicker_period: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("under", "over"):
            raise ValueError(f"mode must be 'under' or 'over', got {self.mode!r}")
        if self.gamma <= 0 or self.gain <= 0:
            raise ValueError("gamma and gain must be > 0")
        if self.noise_sigma < 0 or self.flicker_amplitude < 0 or self.flicker_period <= 0:
            raise ValueError("noise_sigma, flicker_amplitude must be >= 0 and flicker_period > 0")
        if self.flicker_amplitude >= 1:
            raise ValueError("flicker_amplitude must be < 1")
        if self.mode == "under" and (self.gamma < 1 or self.gain > 1):
            raise ValueError("under mode needs gamma >= 1 and gain <= 1")
        if self.mode == "over" and (self.gamma > 1 or self.gain < 1):
            raise ValueError("over mode needs gamma <= 1 and gain >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationParams":
        kinds = {"mode": str, "seed": int}
        known = cls.__dataclass_fields__
        return cls(**{k: kinds.get(k, float)(v) for k, v in d.items() if k in known})


def synthesize_exposure(normal_clip, params: DegradationParams):
    """x -> clip(gain_t * x**gamma + noise), gain_t = gain * (1 + a*sin(2*pi*t/period))."""
    clip = check_clip(normal_clip, min_side=1)
    rng = np.random.default_rng(params.seed)
    out = []
    for t, frame in enumerate(clip):
        gain = params.gain * (1 + params.flicker_amplitude * math.sin(2 * math.pi * t / params.flicker_period))
        y = gain * frame ** params.gamma
        if params.noise_sigma > 0:
            y = y + rng.normal(0.0, params.noise_sigma, size=y.shape)
        out.append(np.clip(y, 0.0, 1.0))
    return out


def flip_frame(frame, horizontal=False, vertical=False):
    if horizontal:
        frame = frame[:, ::-1]
    if vertical:
        frame = frame[::-1]
    return frame


def sample_training_window(dataset, patch, flips, seed, n_radius=2):
    """Random (ClipWindow, gt patch) with identical crop/flips on every frame.

    ``seed`` may be an int or a numpy Generator (advanced in place).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pair = dataset[rng.integers(len(dataset))]
    if pair.gts is None:
        raise ValueError(f"clip {pair.clip_id} has no ground truth")
    h, w = pair.inputs[0].shape[:2]
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than frames {h}x{w}")
    t = int(rng.integers(len(pair.inputs)))
    y0 = int(rng.integers(h - patch + 1))
    x0 = int(rng.integers(w - patch + 1))
    hflip, vflip = (bool(rng.integers(2)), bool(rng.integers(2))) if flips else (False, False)

    def cut(f):
        return np.ascontiguousarray(flip_frame(f[y0:y0 + patch, x0:x0 + patch], hflip, vflip))

    idx = window_indices(len(pair.inputs), t, n_radius)
    window = ClipWindow(tuple(cut(pair.inputs[i]) for i in idx), n_radius)
    return window, cut(pair.gts[t])


def textured_canvas(height, width, seed=0, value_range=(0.05, 0.95)):
    """Multi-scale colour texture plus a few hard-edged blobs that shift the local
    colour but keep the texture inside them."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width, 3))
    for sigma, weight in ((12.0, 1.0), (4.0, 0.6), (1.5, 0.3)):
        noise = rng.standard_normal((height, width, 3)).astype(np.float32)
        layer = cv2.GaussianBlur(noise, (0, 0), sigma).astype(np.float64)
        img += weight * layer / (layer.std() + 1e-12)
    blobs = np.zeros_like(img)
    for _ in range(max(1, height * width // 2000)):
        cy, cx = rng.integers(height), rng.integers(width)
        r = rng.integers(3, max(4, min(height, width) // 8))
        colour = rng.uniform(-2, 2, size=3)
        cv2.circle(blobs, (int(cx), int(cy)), int(r), colour.tolist(), -1)
    img += blobs
    lo, hi = value_range
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    return lo + (hi - lo) * img


def make_normal_clip(n_frames, height, width, seed=0, motion=(0, 1), value_range=(0.05, 0.95)):
    """Frames cut from one larger canvas by a window moving ``motion`` = (dy, dx) px/frame."""
    dy, dx = motion
    pad_y, pad_x = abs(dy) * (n_frames - 1), abs(dx) * (n_frames - 1)
    canvas = textured_canvas(height + pad_y, width + pad_x, seed, value_range)
    y0 = 0 if dy >= 0 else pad_y
    x0 = 0 if dx >= 0 else pad_x
    return [canvas[y0 + t * dy:y0 + t * dy + height, x0 + t * dx:x0 + t * dx + width].copy()
            for t in range(n_frames)]


def warped_pair(size, seed=0, shift=(0.0, 0.0), angle=0.0, flow_amplitude=0.0, flow_period=64.0, pad=24):
    """Normal frame plus the same scene under a known rotation/translation and sinusoidal flow.

    The moved frame samples the scene at ``source[y, x]`` (x, y coordinates in the
    normal frame): a rotation by ``angle`` degrees about the centre, a translation
    ``shift`` = (dx, dy), and a displacement of ``flow_amplitude`` px that varies as
    a cosine centred on the frame, so it carries no affine component over it.
    """
    canvas = textured_canvas(size + 2 * pad, size + 2 * pad, seed)
    normal = canvas[pad:pad + size, pad:pad + size].copy()
    c = (size - 1) / 2
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    wave = flow_amplitude * np.stack([np.cos(2 * np.pi * (yy - c) / flow_period),
                                      np.cos(2 * np.pi * (xx - c) / flow_period)], -1)
    th = math.radians(angle)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    # invert q -> rot (q - c) + c + shift + wave; row vectors, so rot^-1 = rot^T acts on the right
    source = (np.stack([xx, yy], -1) - wave - c - np.asarray(shift, dtype=np.float64)) @ rot + c
    moved = cv2.remap(canvas.astype(np.float32), (source[..., 0] + pad).astype(np.float32),
                      (source[..., 1] + pad).astype(np.float32), cv2.INTER_CUBIC)
    return normal, np.clip(moved.astype(np.float64), 0.0, 1.0), source


def homography_motion(H, size):
    """(rotation in degrees, (dx, dy) displacement of the frame centre) of a homography."""
    c = (size - 1) / 2
    centre = H @ np.array([c, c, 1.0])
    angle = math.degrees(math.atan2(H[1, 0] - H[0, 1], H[0, 0] + H[1, 1]))
    return angle, centre[:2] / centre[2] - c


def composed_source(H, flow):
    """Normal-frame coordinates sampled by the homography-then-flow alignment."""
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    pts = np.stack([xx + flow[..., 0], yy + flow[..., 1], np.ones_like(xx)], -1) @ np.linalg.inv(H).T
    return pts[..., :2] / pts[..., 2:]
