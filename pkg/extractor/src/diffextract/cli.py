"""Batch extraction CLI: images in, FMAP bundles out."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .extract import ExtractionConfig, FeatureExtractor, parse_config_file
from .fmap_io import read_bundle
from .pca import render_pca

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffextract",
        description="Extract diffusion feature bundles (FMAP) from images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="invert images and write FMAP files")
    p.add_argument("images", help="image file, directory, or list file (.txt)")
    p.add_argument("--classes", required=True, metavar="JSON",
                   help="image_id -> class name mapping")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--config", metavar="FILE", help="extraction config file")
    p.add_argument("--pca", metavar="DIR", default=None,
                   help="also render joint PCA maps into this directory")

    p = sub.add_parser("pca", help="render PCA maps for existing FMAP files")
    p.add_argument("bundles", nargs="+", help="FMAP files")
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


def _collect_images(source: str) -> list[Path]:
    path = Path(source)
    if path.is_dir():
        return sorted(p for p in path.iterdir()
                      if p.suffix.lower() in IMAGE_SUFFIXES)
    if path.suffix == ".txt":
        return [Path(line.strip()) for line in path.read_text().splitlines()
                if line.strip()]
    return [path]


def run(args) -> int:
    if args.command == "pca":
        bundles = [read_bundle(p) for p in args.bundles]
        paths = render_pca(bundles, args.out)
        print(json.dumps({"rendered": [str(p) for p in paths]}, indent=2))
        return 0

    config = parse_config_file(args.config) if args.config else ExtractionConfig()
    print(json.dumps({"extraction_config": config.__dict__}, sort_keys=True),
          file=sys.stderr)
    with open(args.classes) as fh:
        classes = json.load(fh)
    extractor = FeatureExtractor(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = _collect_images(args.images)
    if not images:
        print(json.dumps({"error": {"code": "no_images",
                                    "message": f"nothing to do in {args.images}"}}),
              file=sys.stderr)
        return 1
    written = []
    bundles = []
    for image_path in images:
        image_id = image_path.stem
        if image_id not in classes:
            print(json.dumps({"error": {
                "code": "missing_class",
                "message": f"no class name for image {image_id!r}"}}),
                file=sys.stderr)
            return 1
        out_path = out_dir / f"{image_id}.fmap"
        bundle = extractor.extract_file(image_path, classes[image_id],
                                        out_path, image_id=image_id)
        bundles.append(bundle)
        written.append(str(out_path))
    result = {"written": written}
    if args.pca:
        result["pca"] = [str(p) for p in render_pca(bundles, args.pca)]
    print(json.dumps(result, indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": {"code": "extraction_failed",
                                    "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
