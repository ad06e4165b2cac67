"""Command-line entry point: ``ddunet {train,eval,predict,ablate,heatmap}``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import dump_config, load_config

log = logging.getLogger("ddunet")


def _overrides(args):
    d = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        d[k.strip()] = v.strip()
    for key in ("seed", "dataset"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    if getattr(args, "out", None) is not None:
        d["out_dir"] = args.out
    return d


def _config(args):
    return load_config(args.config, _overrides(args))


def cmd_train(args):
    from .train import train

    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    res = train(cfg, out, resume=args.resume)
    summary = {"steps": len(res.steps), "final_loss": res.losses[-1] if res.steps else None, "val": res.val[-1] if res.val else None}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval(args):
    from .evaluate import evaluate

    cfg = _config(args) if args.config else None
    report, _ = evaluate(args.checkpoint, args.split, args.dataset, args.out or ".", args.threshold, cfg)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_predict(args):
    from .evaluate import predict

    written, failures = predict(args.checkpoint, args.images, args.out or "predictions", args.threshold)
    print(json.dumps({"written": written, "failed": failures}, indent=2))
    return 1 if failures else 0


def cmd_ablate(args):
    from .ablation import ablate

    cfg = _config(args)
    payload = ablate(cfg, cfg.out_dir, args.split)
    print(json.dumps(payload, indent=2))
    return 1 if payload["errors"] else 0


def cmd_heatmap(args):
    from .checkpoint import load_checkpoint
    from .data import read_raster
    from .evaluate import export_heatmap

    model = load_checkpoint(args.checkpoint).build_model()
    image = read_raster(args.image, "RGB").transpose(2, 0, 1).astype(np.float32) / 255.0
    out = args.out or f"{Path(args.image).stem}_{args.layer}.png"
    export_heatmap(model, image, args.layer, out, args.colormap)
    print(out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ddunet", description="Dual-decoder U-Net road extraction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", help="output directory")
        if data:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--dataset", help="dataset root or 'synthetic'")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write mask and overlay PNGs")
    common(sp, data=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("images", nargs="+")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("ablate", help="train and compare the three ablation variants")
    common(sp)
    sp.add_argument("--split", default="val", choices=("train", "val", "test"))
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("heatmap", help="export a channel-mean feature heatmap")
    common(sp, data=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--layer", default="fused")
    sp.add_argument("--colormap", help="matplotlib colormap name (default: grayscale)")
    sp.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:
        print(f"ddunet {args.command}: error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
