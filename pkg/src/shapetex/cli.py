"""Command line front-end.

Subcommands cover the stages separately (extract, fit-codebooks, encode)
and end to end (classify, retrieve, experiment). Model files produced by
fit-codebooks bundle the codebooks with the extraction settings they were
fit under, so encode reproduces the same pattern space later.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .attributes import compute_attributes
from .coding import (
    codebook_set_from_dict,
    codebook_set_to_dict,
    encode_descriptor,
    fit_codebooks,
)
from .errors import ShapetexError
from .imaging import load_image
from .patterns import bucket_summary
from .pipeline import (
    ExperimentConfig,
    PatternCache,
    extract_image_patterns,
    extract_many,
    image_trees,
    load_class_directory_dataset,
    run_classification,
    run_retrieval,
    training_interval,
)

_CONFIG_FLAGS = (
    ("--method", str, "method"),
    ("--codebook-size", int, "codebook_size"),
    ("--penalty", float, "penalty"),
    ("--pca-components", int, "pca_components"),
    ("--min-area", int, "min_area"),
    ("--max-area-fraction", float, "max_area_fraction"),
    ("--svm-c", float, "svm_c"),
    ("--n-train", int, "n_train_per_class"),
    ("--n-splits", int, "n_splits"),
    ("--seed", int, "seed"),
    ("--workers", int, "workers"),
)


def _add_config_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--preset", choices=("uiuc", "umd", "brodatz", "scene"))
    sub.add_argument("--kinds", help="comma separated pattern kinds")
    sub.add_argument("--multi-scale", action="store_true", default=None)
    for flag, typ, name in _CONFIG_FLAGS:
        sub.add_argument(flag, type=typ, default=None, dest=name)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    blob: dict = {}
    if args.config:
        with open(args.config) as fh:
            blob.update(json.load(fh))
    if args.preset:
        from .pipeline import PRESET_CODEBOOK_SIZES, PRESET_KINDS
        kinds = PRESET_KINDS[args.preset]
        blob["kinds"] = list(kinds)
        blob["codebook_size"] = {k: PRESET_CODEBOOK_SIZES[k] for k in kinds}
    if args.kinds:
        blob["kinds"] = [k.strip() for k in args.kinds.split(",") if k.strip()]
    if args.multi_scale is not None:
        blob["multi_scale"] = args.multi_scale
    for _, __, name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            blob[name] = value
    return ExperimentConfig.from_dict(blob)


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cache_from_args(args: argparse.Namespace) -> PatternCache:
    return PatternCache(getattr(args, "cache_dir", None))


def _write_csv(path: str, header: tuple, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_extract(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    image = load_image(args.image)
    interval = args.interval or training_interval([image], config)
    buckets = extract_image_patterns(image, config, interval)
    scaled, tree = image_trees(image, config)[0]
    attrs = compute_attributes(tree, scaled,
                               ancestor_count=config.ancestor_count)
    payload = {
        "image": str(args.image),
        "width": image.width,
        "height": image.height,
        "shapes": len(tree.shapes),
        "attributed_shapes": len(attrs),
        "interval": interval,
        "buckets": bucket_summary(buckets),
    }
    if args.dump_patterns:
        payload["patterns"] = {
            f"{kind}|{pol}": rows.tolist()
            for (kind, pol), rows in buckets.items()
        }
    _emit(payload, args.output)
    return 0


def cmd_fit_codebooks(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    images, labels, paths = load_class_directory_dataset(args.dataset)
    cache = _cache_from_args(args)
    interval = training_interval(images, config)
    buckets = extract_many(images, config, interval, cache)
    codebooks = fit_codebooks(buckets, config.method, config.codebook_size,
                              seed=config.seed, penalty=config.penalty,
                              pca_components=config.pca_components)
    payload = {
        "interval": interval,
        "config": config.to_dict(),
        "codebooks": codebook_set_to_dict(codebooks),
        "n_images": len(images),
        "classes": sorted(set(labels)),
    }
    _emit(payload, args.output)
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    with open(args.model) as fh:
        blob = json.load(fh)
    config = ExperimentConfig.from_dict(blob["config"])
    codebooks = codebook_set_from_dict(blob["codebooks"])
    image = load_image(args.image)
    buckets = extract_image_patterns(image, config, blob["interval"])
    descriptor = encode_descriptor(codebooks, buckets)
    payload = {
        "image": str(args.image),
        "dim": int(descriptor.vector.size),
        "vector": descriptor.vector.tolist(),
        "blocks": {f"{k}|{p}": [int(a), int(b)]
                   for (k, p), (a, b) in descriptor.blocks.items()},
    }
    _emit(payload, args.output)
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    images, labels, _ = load_class_directory_dataset(args.dataset)
    result = run_classification(images, labels, config,
                                cache=_cache_from_args(args))
    if args.csv:
        _write_csv(args.csv, ("split", "accuracy"),
                   enumerate(result.per_split))
    _emit(result.to_dict(), args.output)
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    images, labels, paths = load_class_directory_dataset(args.dataset)
    out = run_retrieval(images, labels, config,
                        cache=_cache_from_args(args),
                        geodesic=not args.no_geodesic)
    if args.csv:
        _write_csv(args.csv, ("rank", "recall"),
                   ((i + 1, r) for i, r in enumerate(out["recall"])))
    payload = {"recall": out["recall"], "interval": out["interval"],
               "n_images": len(images)}
    if args.dump_distances:
        payload["distances"] = np.asarray(out["distances"]).tolist()
        payload["paths"] = paths
    _emit(payload, args.output)
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    images, labels, _ = load_class_directory_dataset(args.dataset)
    cache = _cache_from_args(args)
    payload: dict = {"config": config.to_dict()}
    if args.task in ("classify", "both"):
        payload["classification"] = run_classification(
            images, labels, config, cache=cache).to_dict()
    if args.task in ("retrieve", "both"):
        out = run_retrieval(images, labels, config, cache=cache)
        payload["retrieval"] = {"recall": out["recall"],
                                "interval": out["interval"]}
    _emit(payload, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapetex",
        description="Texture description from shape co-occurrences")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pattern buckets for one image")
    p.add_argument("image")
    p.add_argument("--interval", type=int, default=None)
    p.add_argument("--dump-patterns", action="store_true")
    p.add_argument("--output", "-o")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-codebooks",
                       help="learn codebooks from a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--cache-dir")
    p.add_argument("--output", "-o")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_fit_codebooks)

    p = sub.add_parser("encode", help="descriptor for one image")
    p.add_argument("model", help="file written by fit-codebooks")
    p.add_argument("image")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("classify", help="repeated-split classification")
    p.add_argument("dataset")
    p.add_argument("--cache-dir")
    p.add_argument("--csv", help="write split,accuracy rows here")
    p.add_argument("--output", "-o")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("retrieve", help="all-to-all retrieval recall")
    p.add_argument("dataset")
    p.add_argument("--cache-dir")
    p.add_argument("--no-geodesic", action="store_true")
    p.add_argument("--dump-distances", action="store_true")
    p.add_argument("--csv", help="write rank,recall rows here")
    p.add_argument("--output", "-o")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("experiment", help="classification and retrieval")
    p.add_argument("dataset")
    p.add_argument("--task", choices=("classify", "retrieve", "both"),
                   default="both")
    p.add_argument("--cache-dir")
    p.add_argument("--output", "-o")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: list | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapetexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
