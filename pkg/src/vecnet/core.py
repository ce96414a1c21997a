"""Frame/clip containers, configuration dataclasses and the config file format."""
from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .validation import check_clip_frames, check_frame

MIN_SIDE = 8
EPS_L = 1e-2


def frame_from_uint8(img: np.ndarray) -> np.ndarray:
    """8-bit image -> float64 frame in [0, 1]."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {img.dtype}")
    return check_frame(img.astype(np.float64) / 255.0)


def frame_to_uint8(frame: np.ndarray) -> np.ndarray:
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.rint(frame * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class ClipWindow:
    """2N+1 consecutive frames centred on the reference frame."""

    frames: tuple
    n_radius: int

    def __post_init__(self):
        if self.n_radius < 1:
            raise ValueError("n_radius must be >= 1")
        if len(self.frames) != 2 * self.n_radius + 1:
            raise ValueError(
                f"window needs {2 * self.n_radius + 1} frames, got {len(self.frames)}")
        check_clip_frames(self.frames)

    @property
    def center_index(self) -> int:
        return self.n_radius

    @property
    def reference(self) -> np.ndarray:
        return self.frames[self.n_radius]

    def to_array(self) -> np.ndarray:
        """Stack as [2N+1, H, W, 3]."""
        return np.stack(self.frames)


def window_indices(length: int, t: int, n_radius: int) -> list[int]:
    if length < 1:
        raise ValueError("cannot build a window from an empty frame sequence")
    if not 0 <= t < length:
        raise IndexError(f"t={t} outside [0, {length})")
    return [min(max(i, 0), length - 1) for i in range(t - n_radius, t + n_radius + 1)]


def pad_clip_boundary(frames: Sequence, t: int, n_radius: int) -> ClipWindow:
    """Window centred at ``t``; indices past either end replicate the nearest frame."""
    idx = window_indices(len(frames), t, n_radius)
    return ClipWindow(tuple(frames[i] for i in idx), n_radius)


@dataclass
class ModelConfig:
    n_radius: int = 2
    base_channels: int = 32
    unet_depth: int = 2
    rcab_count: int = 4
    offset_groups: int = 1
    share_align: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("n_radius", "base_channels", "unet_depth", "rcab_count", "offset_groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if 3 % self.offset_groups:
            raise ValueError("offset_groups must divide the 3 colour channels")

    @property
    def size_multiple(self) -> int:
        """Frame sides must be multiples of this for the downsampling stacks."""
        return 4 * 2 ** self.unet_depth


@dataclass
class LossWeights:
    lambda_pix: float = 1.0
    lambda_tv: float = 0.01
    lambda_amp: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 8
    iterations: int = 1000
    patch: int = 256
    flips: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 100
    checkpoint_every: int = 500
    val_clips: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0 or self.patch < MIN_SIDE:
            raise ValueError("iterations must be >= 0 and patch >= 8")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ValueError("eval_every and checkpoint_every must be >= 1")


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


# --- flat key = value config files -------------------------------------------

_SECTIONS = {"model": ModelConfig, "loss": LossWeights, "train": TrainConfig}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, kind):
    text = text.strip()
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def _flat_fields():
    """(key, owner, field) for every scalar config field; keys are unique."""
    out = []
    for owner in (ModelConfig, LossWeights, TrainConfig):
        for f in fields(owner):
            if f.name == "weights":
                continue
            out.append((f.name, owner, f))
    return out


def dump_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    train = train or TrainConfig()
    objs = {ModelConfig: model, LossWeights: train.weights, TrainConfig: train}
    lines = ["# vecnet configuration", ""]
    current = None
    for key, owner, _ in _flat_fields():
        if owner is not current:
            section = next(k for k, v in _SECTIONS.items() if v is owner)
            lines.append(f"# [{section}]")
            current = owner
        lines.append(f"{key} = {_format_value(getattr(objs[owner], key))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse ``key = value`` lines; unknown keys are an error, missing keys take defaults."""
    known = {key: (owner, f) for key, owner, f in _flat_fields()}
    values: dict = {ModelConfig: {}, LossWeights: {}, TrainConfig: {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        owner, f = known[key]
        values[owner][key] = _parse_value(val, f.type)
    weights = LossWeights(**values[LossWeights])
    return ModelConfig(**values[ModelConfig]), TrainConfig(weights=weights, **values[TrainConfig])


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    return parse_config(Path(path).read_text())


def save_config(path, model: ModelConfig, train: TrainConfig | None = None) -> None:
    Path(path).write_text(dump_config(model, train))


def config_to_dict(model: ModelConfig, train: TrainConfig | None = None) -> dict:
    out = {"model": dataclasses.asdict(model)}
    if train is not None:
        out["train"] = dataclasses.asdict(train)
    return out


def config_from_dict(d: dict) -> tuple[ModelConfig, TrainConfig | None]:
    model = ModelConfig(**d["model"])
    train = None
    if "train" in d:
        t = dict(d["train"])
        t["weights"] = LossWeights(**t["weights"])
        train = TrainConfig(**t)
    return model, train
