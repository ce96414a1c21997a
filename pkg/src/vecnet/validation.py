"""Input validation helpers shared by the estimator, pipelines and metrics."""
import numpy as np


def check_frame(frame, min_side=8, name="frame"):
    """Return ``frame`` as a float64 [H, W, 3] array after range/shape checks."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape [H, W, 3], got {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ValueError(f"{name} must be at least {min_side}x{min_side}, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_clip_frames(frames, min_side=8):
    if len(frames) == 0:
        raise ValueError("clip is empty")
    shape = None
    for i, f in enumerate(frames):
        f = check_frame(f, min_side, name=f"frame {i}")
        if shape is None:
            shape = f.shape
        elif f.shape != shape:
            raise ValueError(f"frame {i} has shape {f.shape}, expected {shape}")
    return shape


def check_clip(clip, min_frames=1, min_side=8):
    """Coerce a clip (sequence of frames or [T, H, W, 3] array) to a float64 array."""
    if isinstance(clip, np.ndarray):
        frames = list(clip) if clip.ndim == 4 else None
        if frames is None:
            raise ValueError(f"clip array must be [T, H, W, 3], got {clip.shape}")
    else:
        frames = list(clip)
    if len(frames) < min_frames:
        raise ValueError(f"clip needs at least {min_frames} frame(s), got {len(frames)}")
    check_clip_frames(frames, min_side)
    return np.stack([np.asarray(f, dtype=np.float64) for f in frames])


def check_same_shape(a, b, names=("a", "b")):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {names[0]}{tuple(a.shape)} vs {names[1]}{tuple(b.shape)}")


def check_finite(x, name="input"):
    if isinstance(x, np.ndarray):
        ok = np.all(np.isfinite(x))
    else:
        import torch
        ok = bool(torch.isfinite(x).all())
    if not ok:
        raise ValueError(f"{name} contains non-finite values")
