"""Command-line entry points for the whole pipeline."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline.config import load_config
from .pipeline.manifest import CollectionManifest, build_manifest


def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], help="config file (repeatable, later wins)")
    common.add_argument("--seed", type=int, default=None, help="override train.seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")
    return common


def _resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="scops", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", parents=[common], help="write a synthetic blob dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--resolution", type=int, default=64)

    p = sub.add_parser("build-manifest", parents=[common], help="scan a dataset root into a manifest")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--kind", default="synthetic", choices=["synthetic", "image_dir"])
    p.add_argument("--min-area-frac", type=float, default=None)
    p.add_argument("--exclude", type=Path, default=None, help="file of image stems to drop")
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--val-count", type=int, default=0)
    p.add_argument("--manifest-out", type=Path, default=None)

    p = sub.add_parser("train", parents=[common], help="train the part segmentation network")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None)

    p = sub.add_parser("infer", parents=[common], help="segment one image with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="run an evaluation protocol")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--dff", action="store_true", help="evaluate the factorization baseline")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--protocol", choices=["landmarks", "iou"], required=True)
    p.add_argument("--fit-split", default="train")
    p.add_argument("--eval-split", default="test")
    p.add_argument("--norm", default="bbox", help="'bbox' or 'inter_ocular:L,R'")

    p = sub.add_parser("dff", parents=[common], help="factorize a collection and write segmentations")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("visualize", parents=[common], help="write overlays for a manifest split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=16)

    args = parser.parse_args(argv)

    if args.command == "generate-synthetic":
        from .pipeline.synthetic import generate_synthetic

        seed = args.seed if args.seed is not None else 0
        info = generate_synthetic(args.out, args.count, seed=seed, resolution=args.resolution)
        print(f"wrote {info['count']} images at {info['resolution']}px to {info['out']}")
        return 0

    if args.command == "build-manifest":
        exclude = None
        if args.exclude is not None:
            exclude = [ln.strip() for ln in args.exclude.read_text().splitlines() if ln.strip()]
        manifest = build_manifest(
            args.root,
            kind=args.kind,
            min_area_frac=args.min_area_frac,
            exclude=exclude,
            test_count=args.test_count,
            val_count=args.val_count,
        )
        out_path = args.manifest_out or (args.root / "manifest.jsonl")
        manifest.save(out_path)
        print(f"wrote manifest with {len(manifest.records)} records to {out_path}")
        return 0

    if args.command == "train":
        from .pipeline.train import train

        config = _resolve_config(args)
        manifest = CollectionManifest.load(args.manifest)
        result = train(config, manifest, args.out, resume_from=args.resume)
        print(f"final checkpoint: {result['checkpoint']}")
        return 0

    if args.command == "infer":
        from .pipeline.infer import infer

        outputs = infer(args.checkpoint, args.image, args.out)
        for name, path in outputs.items():
            print(f"{name}: {path}")
        return 0

    if args.command == "evaluate":
        from .pipeline.evaluate import evaluate

        if args.dff == (args.checkpoint is not None):
            raise SystemExit("pass exactly one of --checkpoint or --dff")
        source = "dff" if args.dff else args.checkpoint
        config = _resolve_config(args) if args.dff else None
        manifest = CollectionManifest.load(args.manifest)
        args.out.mkdir(parents=True, exist_ok=True)
        csv_path = args.out / "metrics.csv"
        rows = evaluate(
            source,
            manifest,
            args.protocol,
            csv_path,
            config=config,
            fit_split=args.fit_split,
            eval_split=args.eval_split,
            norm_spec=args.norm,
        )
        for row in rows:
            print(f"{row.split} {row.method} K={row.parts} {row.metric}={row.value:.4f} "
                  f"(n={row.n_images}, excluded={row.n_excluded})")
        return 0

    if args.command == "dff":
        from .pipeline.evaluate import _dff_run
        from .pipeline.infer import _label_png

        config = _resolve_config(args)
        manifest = CollectionManifest.load(args.manifest)
        records = manifest.split(args.split)
        if len(records) < 2:
            raise SystemExit(f"split {args.split!r} has fewer than 2 images")
        labels_list, _ = _dff_run(manifest, records, config)
        args.out.mkdir(parents=True, exist_ok=True)
        for record, labels in zip(records, labels_list):
            stem = Path(record.image).stem
            _label_png(labels).save(args.out / f"{stem}_dff_labels.png")
        print(f"wrote {len(records)} DFF segmentations to {args.out}")
        return 0

    if args.command == "visualize":
        from .pipeline.infer import infer

        manifest = CollectionManifest.load(args.manifest)
        records = manifest.split(args.split)[: args.limit]
        for record in records:
            infer(args.checkpoint, manifest.resolve(record.image), args.out)
        print(f"wrote {len(records)} visualizations to {args.out}")
        return 0

    raise SystemExit(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
