"""Command-line entry point: ``vecnet <subcommand> ...``.

Every subcommand exits 0 on success.  On failure it prints a single JSON line
``{"error": <type>, "message": <text>, "command": <subcommand>}`` to stderr and
exits 1 (2 for usage errors, as argparse does).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .datapipe import DegradationParams, align_pair, synthesize_exposure
from .io import ClipPair, list_frames, read_frames, read_kv, save_clip_pair


def _cmd_train(args):
    from .training import train
    _, history = train(args.config, args.data, args.out)
    last = history[-1] if history else {}
    return {"steps": len(history), "final_total": last.get("total"), "out": str(args.out)}


def _cmd_evaluate(args):
    from .training import evaluate, write_evaluation
    table = evaluate(args.ckpt, args.data, identity=args.identity)
    write_evaluation(table, args.json, args.csv)
    return table["overall"]


def _cmd_enhance(args):
    from .training import enhance
    return {"frames": enhance(args.ckpt, args.inp, args.out), "out": str(args.out)}


# gamma/gain used when the params file leaves them out
MODE_DEFAULTS = {"under": {"gamma": 2.2, "gain": 0.7}, "over": {"gamma": 0.45, "gain": 1.2}}


def _clip_dirs(root):
    """A directory of frames is one clip; otherwise each frame-holding subdirectory is."""
    root = Path(root)
    if list_frames(root):
        return [root]
    dirs = [d for d in sorted(root.iterdir()) if d.is_dir() and list_frames(d)]
    if not dirs:
        raise FileNotFoundError(f"no frames in {root} or its subdirectories")
    return dirs


def _cmd_synth(args):
    raw = read_kv(args.params) if args.params else {}
    unknown = set(raw) - set(DegradationParams.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown degradation parameter(s): {sorted(unknown)}")
    raw["mode"] = args.mode
    for key, value in MODE_DEFAULTS[args.mode].items():
        raw.setdefault(key, value)
    params = DegradationParams.from_dict(raw)
    written = []
    for d in _clip_dirs(args.inp):
        normal = read_frames(d)
        meta = {**params.to_dict(), "source": str(d.resolve())}
        save_clip_pair(args.out, ClipPair(d.name, synthesize_exposure(normal, params), normal, meta))
        written.append(d.name)
    return {"clips": written, "mode": params.mode}


def _cmd_align(args):
    src, ref = read_frames(args.src), read_frames(args.ref)
    res = align_pair(src, ref, margin=args.margin)
    if not res.inputs:
        raise RuntimeError(f"all {len(src)} frames failed to align")
    clip_id = args.clip_id or Path(args.src).resolve().name
    summary = res.summary()
    meta = {"source": str(Path(args.src).resolve()), "reference": str(Path(args.ref).resolve()),
            "margin": args.margin, "frames": " ".join(map(str, res.frame_index)), **summary}
    if args.mode:
        meta["mode"] = args.mode
    clip_dir = save_clip_pair(args.out, ClipPair(clip_id, res.inputs, res.gts, meta))
    with open(clip_dir / "align_stats.jsonl", "w") as fh:
        for row in res.stats:
            fh.write(json.dumps(row) + "\n")
        for i, reason in res.excluded:
            fh.write(json.dumps({"frame": i, "excluded": reason}) + "\n")
    return summary


def _cmd_metrics(args):
    from .metrics import metric_report
    a = read_frames(args.a)
    b = read_frames(args.b) if args.b else None
    if b is not None and len(a) != len(b):
        raise ValueError(f"frame counts differ: {len(a)} vs {len(b)}")
    report = metric_report(a, b)
    clean = _finite(report)
    Path(args.json).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    if args.csv:
        keys = sorted(report)
        Path(args.csv).write_text(",".join(keys) + "\n" + ",".join(str(report[k]) for k in keys) + "\n")
    return clean


def _fail(kind, message, command=None):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split()), "command": command}),
          file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}")
        sys.exit(2)


def _finite(obj):
    # inf PSNR (identical clips) has no JSON literal
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def build_parser():
    p = _Parser(prog="vecnet", description="Video exposure correction toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model from a key = value config and a paired dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on a paired dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--csv")
    s.add_argument("--json")
    s.add_argument("--identity", action="store_true", help="score the inputs themselves (no model)")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("enhance", help="enhance every frame of a frame directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_enhance)

    s = sub.add_parser("synth", help="make degraded/normal clip pairs from normal-exposure frames")
    s.add_argument("--mode", choices=["under", "over"], required=True)
    s.add_argument("--params", help="key = value file of degradation parameters")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("align", help="register a normal-exposure capture onto a degraded one")
    s.add_argument("--src", required=True, help="degraded-exposure frames (kept fixed)")
    s.add_argument("--ref", required=True, help="normal-exposure frames (warped)")
    s.add_argument("--out", required=True, help="dataset root to write the clip into")
    s.add_argument("--margin", type=int, default=16)
    s.add_argument("--clip-id")
    s.add_argument("--mode", choices=["under", "over"])
    s.set_defaults(func=_cmd_align)

    s = sub.add_parser("metrics", help="quality metrics for one clip or a pair")
    s.add_argument("--a", required=True)
    s.add_argument("--b")
    s.add_argument("--json", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=_cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        _fail(type(exc).__name__, exc, args.command)
        return 1
    print(json.dumps(_finite(result), default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
