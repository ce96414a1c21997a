"""Versioned checkpoint container.

A checkpoint is a zip archive (ZIP_STORED, fixed timestamps so identical
weights give identical bytes) holding ``meta.json`` (format tag, version,
config echo, parameter order) and one ``params/<name>.npy`` per tensor.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import torch

from .core import ModelConfig, TrainConfig, config_from_dict, config_to_dict

FORMAT = "vecnet-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model, model_config: ModelConfig, train_config: TrainConfig | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": config_to_dict(model_config, train_config),
        "params": list(state),
        "extra": extra or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    with zipfile.ZipFile(tmp, "w") as zf:
        _entry(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _entry(zf, f"params/{name}.npy", buf.getvalue())
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    """-> (meta, {name: array})."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        if meta.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arrays = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")),
                                                 allow_pickle=False)
                  for name in meta["params"]}
    return meta, arrays


def load_checkpoint(path):
    """-> (model, model_config, train_config or None, meta)."""
    from .restoration import VECNet

    meta, arrays = read_checkpoint(path)
    model_config, train_config = config_from_dict(meta["config"])
    model = VECNet(model_config)
    expected = model.state_dict()
    missing = set(expected) - set(arrays)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)[:5]}")
    state = {}
    for name, ref in expected.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, model_config, train_config, meta
