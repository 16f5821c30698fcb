"""Command-line entry points: synth | train | fuse | eval | gradcheck | serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradsuite, metrics
from .checkpoint import load_model
from .data import synth_generate
from .imgio import decode_png, encode_gray_png, encode_rgb_png, to_uint8
from .model import AblationFlags
from .tensor import Tensor
from .train import TrainConfig, train_and_save


def resolve_ckpt(ref: str) -> Path:
    """A checkpoint reference is a path, or an id under CTRLFUSE_CKPT_DIR."""
    p = Path(ref)
    if p.exists():
        return p
    root = os.environ.get("CTRLFUSE_CKPT_DIR")
    if root:
        candidate = Path(root) / f"{ref}.cfck"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"checkpoint {ref!r} not found")


def _scene_paths(out_dir: Path, i: int):
    stem = f"scene_{i:04d}"
    return (out_dir / f"{stem}_ir.png", out_dir / f"{stem}_vis.png",
            out_dir / f"{stem}_labels.png")


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = synth_generate(args.count, size=args.size, seed=args.seed)
    for i, scene in enumerate(scenes):
        ir_p, vis_p, lab_p = _scene_paths(out, i)
        ir_p.write_bytes(encode_gray_png(scene.ir))
        vis_p.write_bytes(encode_rgb_png(scene.vis))
        # label map stored with raw class ids in the gray channel
        from PIL import Image
        Image.fromarray(scene.labels.astype(np.uint8), mode="L").save(lab_p)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_train(args):
    scenes = synth_generate(args.count, size=args.size, seed=args.seed)
    flags = AblationFlags.from_names(args.ablation or [])
    config = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                         seed=args.seed, ablation=flags)
    log_path = Path(args.out).with_suffix(".log.jsonl")

    def progress(record):
        print(f"epoch {record['epoch']:3d}  total {record['total']:.5f}")

    train_and_save(config, scenes, args.out, log_path=log_path,
                   progress=progress)
    print(f"checkpoint: {args.out}\nloss log:  {log_path}")
    return 0


def _load_pair(ir_path, vis_path):
    ir, kind = decode_png(Path(ir_path).read_bytes())
    if kind != "gray":
        ir = ir.mean(axis=0, keepdims=True)
    vis, kind = decode_png(Path(vis_path).read_bytes())
    if kind == "gray":
        vis = np.repeat(vis, 3, axis=0)
    return ir, vis


def cmd_fuse(args):
    model, _ = load_model(resolve_ckpt(args.ckpt))
    ir, vis = _load_pair(args.ir, args.vis)
    mask = None
    if args.mask:
        m, _ = decode_png(Path(args.mask).read_bytes())
        mask = Tensor((m[0] >= 0.5).astype(np.float64))
    out = model.forward(Tensor(ir), Tensor(vis), mask, alpha=args.alpha)
    Path(args.out).write_bytes(encode_gray_png(out.i_fused.data))
    print(f"fused image: {args.out}")
    return 0


def cmd_eval(args):
    folder = Path(args.dir)
    rows = []
    for fused_path in sorted(folder.glob("*_fused.png")):
        stem = fused_path.name[:-len("_fused.png")]
        ir, vis = _load_pair(folder / f"{stem}_ir.png",
                             folder / f"{stem}_vis.png")
        fused, _ = decode_png(fused_path.read_bytes())
        vis_y = 0.299 * vis[0] + 0.587 * vis[1] + 0.114 * vis[2]
        rows.append((stem, metrics.metric_report(fused[0], ir[0], vis_y)))
    if not rows:
        print("no *_fused.png files found", file=sys.stderr)
        return 1
    out = Path(args.out or folder / "metrics")
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")
    csv_path.write_text(metrics.reports_to_csv(rows), encoding="utf-8")
    json_path.write_text(metrics.aggregate_json(rows), encoding="utf-8")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_gradcheck(args):
    results = gradsuite.run_suite(seeds=args.seeds)
    for name, err, tol in results:
        status = "ok" if err < tol else "FAIL"
        print(f"{name:40s} {err:10.3e}  (tol {tol:g})  {status}")
    ok = gradsuite.suite_passes(results)
    print("gradcheck:", "pass" if ok else "fail")
    return 0 if ok else 1


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(resolve_ckpt(args.ckpt))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ctrlfuse")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on synthetic scenes")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1.0e-4)
    p.add_argument("--ablation", action="append",
                   choices=["no_prompt", "no_seg", "no_vis", "no_ir",
                            "exchange_sq"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse one image pair")
    p.add_argument("--ir", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--mask")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="metric report over a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP fusion service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
