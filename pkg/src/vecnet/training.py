"""Optimisation loop, sliding-window enhancement and dataset evaluation."""
from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .core import ModelConfig, TrainConfig, load_config, pad_clip_boundary, seed_everything
from .datapipe import sample_training_window
from .io import load_dataset, read_frames, write_frames
from .losses import vecnet_loss
from .metrics import alv, loe, psnr, ssim
from .restoration import VECNet

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def build_model(config: ModelConfig) -> VECNet:
    torch.manual_seed(config.seed)
    return VECNet(config)


def sample_batch(dataset, cfg: TrainConfig, n_radius, rng):
    windows, gts = [], []
    for _ in range(cfg.batch_size):
        win, gt = sample_training_window(dataset, cfg.patch, cfg.flips, rng, n_radius)
        windows.append(win.to_array())
        gts.append(gt)
    x = torch.from_numpy(np.stack(windows)).float().permute(0, 1, 4, 2, 3).contiguous()
    y = torch.from_numpy(np.stack(gts)).float().permute(0, 3, 1, 2).contiguous()
    return x, y


def check_training_setup(dataset, model_config: ModelConfig, cfg: TrainConfig) -> None:
    if not dataset:
        raise ValueError("training set is empty")
    m = model_config.size_multiple
    if cfg.patch % m:
        raise ValueError(f"patch {cfg.patch} must be a multiple of {m} for unet_depth={model_config.unet_depth}")
    for pair in dataset:
        if pair.gts is None:
            raise ValueError(f"clip {pair.clip_id} has no ground truth")
        h, w = pair.inputs[0].shape[:2]
        if cfg.patch > min(h, w):
            raise ValueError(f"patch {cfg.patch} larger than clip {pair.clip_id} frames ({h}x{w})")


def train_model(model, dataset, model_config: ModelConfig, cfg: TrainConfig, out_dir=None,
                val_set=None, callback=None):
    """Run ``cfg.iterations`` Adam steps; returns the list of per-step loss records.

    ``callback(step, record)`` runs after every step; a truthy return ends
    training early (the last checkpoint is still written).  With ``out_dir``
    set, writes ``loss_log.jsonl``, ``val_metrics.jsonl``, ``last.ckpt`` and
    ``best.ckpt`` (best validation PSNR).
    """
    check_training_setup(dataset, model_config, cfg)
    seed_everything(model_config.seed, cfg.deterministic)
    rng = np.random.default_rng(model_config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=0.0)
    out_dir = Path(out_dir) if out_dir is not None else None
    loss_fh = val_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_fh = open(out_dir / "loss_log.jsonl", "w")
        val_fh = open(out_dir / "val_metrics.jsonl", "w")
    history = []
    best = -math.inf
    try:
        model.train()
        for step in range(1, cfg.iterations + 1):
            x, y = sample_batch(dataset, cfg, model_config.n_radius, rng)
            out = model(x)
            try:
                total, report = vecnet_loss(out, y, cfg.weights)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite loss at step {step}: {exc}") from exc
            opt.zero_grad(set_to_none=False)
            total.backward()
            opt.step()
            record = {"step": step, "pix": report.pix, "tv": report.tv, "amp": report.amp,
                      "total": report.total}
            history.append(record)
            if loss_fh:
                loss_fh.write(json.dumps(record) + "\n")
                loss_fh.flush()
            stop = bool(callback(step, record)) if callback else False
            if val_set and (step % cfg.eval_every == 0 or step == cfg.iterations):
                metrics = evaluate_clips(model, val_set)
                model.train()
                entry = {"step": step, **metrics["overall"]}
                if val_fh:
                    val_fh.write(json.dumps(entry) + "\n")
                    val_fh.flush()
                if out_dir is not None and entry.get("psnr", -math.inf) > best:
                    best = entry["psnr"]
                    save_checkpoint(out_dir / "best.ckpt", model, model_config, cfg, {"step": step})
            if out_dir is not None and (stop or step % cfg.checkpoint_every == 0 or step == cfg.iterations):
                save_checkpoint(out_dir / "last.ckpt", model, model_config, cfg, {"step": step})
            if stop:
                break
    finally:
        for fh in (loss_fh, val_fh):
            if fh:
                fh.close()
    model.eval()
    return history


def train(config_path, dataset_root, out_dir):
    """CLI-level training: read config + dataset, hold out ``val_clips`` clips, train."""
    model_config, cfg = load_config(config_path) if config_path else (ModelConfig(), TrainConfig())
    clips = load_dataset(dataset_root)
    if cfg.val_clips >= len(clips):
        raise ValueError(f"val_clips={cfg.val_clips} leaves no training clips ({len(clips)} total)")
    train_set = clips[:len(clips) - cfg.val_clips]
    val_set = clips[len(clips) - cfg.val_clips:] if cfg.val_clips else train_set
    model = build_model(model_config)
    t0 = time.time()
    history = train_model(model, train_set, model_config, cfg, out_dir, val_set)
    log.info("trained %d steps in %.1fs", len(history), time.time() - t0)
    return model, history


def _pad_to_multiple(x, m):
    h, w = x.shape[-2:]
    ph = max(m, math.ceil(h / m) * m) - h
    pw = max(m, math.ceil(w / m) * m) - w
    if ph == 0 and pw == 0:
        return x
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


@torch.no_grad()
def enhance_window(model, window_frames):
    """One output frame (float64 [H, W, 3]) from 2N+1 frames [H, W, 3]."""
    param = next(model.parameters())
    arr = np.stack(window_frames)
    x = torch.as_tensor(arr, dtype=param.dtype).permute(0, 3, 1, 2)
    h, w = x.shape[-2:]
    x = _pad_to_multiple(x, model.config.size_multiple)
    out = model(x.unsqueeze(0)).output[0, :, :h, :w]
    return np.clip(out.permute(1, 2, 0).double().numpy(), 0.0, 1.0)


def enhance_clip(model, frames):
    """Sliding window with boundary replication; one output per input frame."""
    model.eval()
    n = model.config.n_radius
    return [enhance_window(model, pad_clip_boundary(frames, t, n).frames) for t in range(len(frames))]


def evaluate_clips(model, clips, identity=False):
    """Per-clip PSNR/SSIM plus per-mode and overall clip-averaged tables.

    Clips without ground truth are scored without reference (ALV of the
    output, LOE of output against input).
    """
    rows = []
    for pair in sorted(clips, key=lambda c: c.clip_id):
        outputs = list(pair.inputs) if identity else enhance_clip(model, pair.inputs)
        row = {"clip": pair.clip_id, "mode": pair.mode, "frames": len(outputs)}
        if pair.gts is not None:
            row["psnr"] = float(np.mean([psnr(o, g) for o, g in zip(outputs, pair.gts)]))
            row["ssim"] = float(np.mean([ssim(o, g) for o, g in zip(outputs, pair.gts)])) \
                if min(outputs[0].shape[:2]) >= 11 else math.nan
        else:
            row["loe"] = float(np.mean([loe(o, i) for o, i in zip(outputs, pair.inputs)]))
        if len(outputs) >= 2:
            row["alv"] = alv(outputs)
        rows.append(row)

    def average(subset):
        out = {"clips": len(subset)}
        for key in ("psnr", "ssim", "alv", "loe"):
            vals = [r[key] for r in subset if key in r]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    modes = sorted({r["mode"] for r in rows})
    return {"clips": rows,
            "modes": {m: average([r for r in rows if r["mode"] == m]) for m in modes},
            "overall": average(rows)}


def evaluate(checkpoint, dataset_root, identity=False):
    model = load_checkpoint(checkpoint)[0]
    return evaluate_clips(model, load_dataset(dataset_root), identity=identity)


def write_evaluation(table, json_path=None, csv_path=None):
    if json_path:
        Path(json_path).write_text(json.dumps(table, indent=2))
    if csv_path:
        keys = ["clip", "mode", "frames", "psnr", "ssim", "alv", "loe"]
        lines = [",".join(keys)]
        for row in table["clips"]:
            lines.append(",".join(str(row.get(k, "")) for k in keys))
        for mode, avg in table["modes"].items():
            lines.append(",".join(str(v) for v in ["AVG", mode, avg["clips"], *(avg.get(k, "") for k in keys[3:])]))
        o = table["overall"]
        lines.append(",".join(str(v) for v in ["AVG", "all", o["clips"], *(o.get(k, "") for k in keys[3:])]))
        Path(csv_path).write_text("\n".join(lines) + "\n")


def enhance(checkpoint, input_dir, out_dir):
    model = load_checkpoint(checkpoint)[0]
    frames = read_frames(input_dir)
    outputs = enhance_clip(model, frames)
    write_frames(out_dir, outputs)
    return len(outputs)
