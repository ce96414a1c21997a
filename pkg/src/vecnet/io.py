"""Numbered PNG frame directories, key-value metadata files, and the paired dataset layout.

Layout::

    <root>/<clip_id>/input/000000.png ...
    <root>/<clip_id>/gt/000000.png ...      (optional for no-reference data)
    <root>/<clip_id>/meta.txt
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .core import frame_from_uint8, frame_to_uint8

FRAME_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTS)


def read_frame(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise OSError(f"cannot read image: {path}")
    return frame_from_uint8(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))


def read_frames(directory) -> list[np.ndarray]:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no frames in {directory}")
    return [read_frame(p) for p in paths]


def write_frame(path, frame) -> None:
    """Write atomically: encode to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", cv2.cvtColor(frame_to_uint8(frame), cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"cannot encode frame for {path}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.tobytes())
    os.replace(tmp, path)


def write_frames(directory, frames) -> None:
    for i, frame in enumerate(frames):
        write_frame(Path(directory) / f"{i:06d}.png", frame)


def read_kv(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


@dataclass
class ClipPair:
    clip_id: str
    inputs: list
    gts: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.meta.get("mode", "unknown")


def save_clip_pair(root, pair: ClipPair) -> Path:
    clip_dir = Path(root) / pair.clip_id
    write_frames(clip_dir / "input", pair.inputs)
    if pair.gts is not None:
        write_frames(clip_dir / "gt", pair.gts)
    write_kv(clip_dir / "meta.txt", pair.meta)
    return clip_dir


def load_clip_pair(clip_dir) -> ClipPair:
    clip_dir = Path(clip_dir)
    inputs = read_frames(clip_dir / "input")
    gts = None
    if (clip_dir / "gt").is_dir():
        gts = read_frames(clip_dir / "gt")
        if len(gts) != len(inputs):
            raise ValueError(f"{clip_dir}: {len(inputs)} input frames but {len(gts)} gt frames")
    meta = read_kv(clip_dir / "meta.txt") if (clip_dir / "meta.txt").exists() else {}
    return ClipPair(clip_dir.name, inputs, gts, meta)


def load_dataset(root) -> list[ClipPair]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    clips = [load_clip_pair(d) for d in sorted(root.iterdir()) if (d / "input").is_dir()]
    if not clips:
        raise FileNotFoundError(f"no clips (<clip>/input/) under {root}")
    return clips
