"""Command-line entry point: reproducible subcommand pipelines.

Every subcommand derives all randomness from --seed, so identical invocations
produce byte-identical artifacts; timestamps and host info are confined to the
run-meta.json sidecar. Option precedence is flag > --config TOML > default.
"""

from __future__ import annotations

import argparse
import datetime
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import augment, bench, consistency, features, forest, rangeimage
from .rangeimage import SeverityLabel
from .seeds import rng_for


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


_DEFAULTS = {
    "synth": {"count": 100, "seed": 0, "width": 128, "height": 128,
              "year": 0, "route": "synthetic", "run_id": "run0"},
    "augment": {"seed": 0, "crop_fraction": 0.85, "flip_probability": 0.5,
                "relight": False, "relight_magnitude": 5, "relight_probability": 0.5},
    "extract": {"jobs": 1},
    "train": {"seed": 0, "trees": 20, "max_depth": 16, "min_samples_leaf": 2,
              "features_per_split": 24},
    "bench": {"seed": 0, "jobs": 1, "test_fraction": 0.25, "crop_fraction": 0.85,
              "trees": 20, "max_depth": 16, "min_samples_leaf": 2,
              "features_per_split": 24},
    "score": {"model_name": "external"},
    "consistency": {},
    "report": {},
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="ravelbench",
                     description="Robustness benchmarking for raveling severity classifiers.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML file mirroring the flags of this subcommand")
        return p

    p = add("synth", "generate a synthetic labeled corpus")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--year", type=int)
    p.add_argument("--route")
    p.add_argument("--run-id", dest="run_id")

    p = add("augment", "expand a corpus with the five-region crop policy")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--crop-fraction", dest="crop_fraction", type=float)
    p.add_argument("--flip-probability", dest="flip_probability", type=float)
    p.add_argument("--relight", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--relight-magnitude", dest="relight_magnitude", type=int)
    p.add_argument("--relight-probability", dest="relight_probability", type=float)

    p = add("extract", "extract feature vectors into a CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)

    p = add("train", "train a forest model from a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
    p.add_argument("--features-per-split", dest="features_per_split", type=int)

    p = add("bench", "run the full 10x4 experiment matrix on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--crop-fraction", dest="crop_fraction", type=float)
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
    p.add_argument("--features-per-split", dest="features_per_split", type=int)

    p = add("score", "score an external prediction CSV against a truth manifest")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--model-name", dest="model_name")

    p = add("consistency", "multi-year violation and drift analysis")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("report", "re-render report files from an existing results.csv")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)

    return parser


def _coerced(key, value, default):
    if default is None or isinstance(value, type(default)):
        return value
    if isinstance(default, bool) or isinstance(value, bool):
        raise ValueError(f"config key {key!r} must be a {type(default).__name__}, got {value!r}")
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise ValueError(f"config key {key!r} must be a {type(default).__name__}, got {value!r}") from None


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge parsed flags over config-file values over defaults."""
    defaults = _DEFAULTS.get(command, {})
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "rb") as fh:
            config = tomllib.load(fh)
        for key, value in config.items():
            key = key.replace("-", "_")
            merged[key] = _coerced(key, value, defaults.get(key))
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            merged[key] = value
    return merged


def _write_run_meta(out_dir: Path, argv, started: float) -> None:
    meta = {
        "argv": list(argv),
        "host": platform.node(),
        "python": sys.version.split()[0],
        "started": datetime.datetime.fromtimestamp(started).isoformat(),
        "finished": datetime.datetime.now().isoformat(),
        "elapsed_seconds": round(time.time() - started, 3),
    }
    (out_dir / "run-meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _forest_params(opts: dict) -> forest.ForestParams:
    return forest.ForestParams(
        tree_count=opts["trees"],
        max_depth=opts["max_depth"],
        min_samples_leaf=opts["min_samples_leaf"],
        features_per_split=opts["features_per_split"],
        seed=opts.get("seed", 0),
    )


def _cmd_synth(opts, argv, started):
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    params = rangeimage.SynthesisParams(width=opts["width"], height=opts["height"])
    levels = list(SeverityLabel)
    samples = []
    for idx in range(opts["count"]):
        label = levels[idx % len(levels)]
        sample = rangeimage.synthesize(params, label, seed=(opts["seed"] << 20) + idx)
        sid = f"s{idx:05d}-{label.name}"
        meta = rangeimage.SampleMeta(sample_id=sid, year=opts["year"], route=opts["route"],
                                     location_key=f"loc{idx:05d}", run_id=opts["run_id"])
        sample = replace(sample, path=f"{sid}.png", meta=meta)
        rangeimage.save_image(sample.image, out_dir / sample.path)
        samples.append(sample)
    rangeimage.write_manifest(samples, out_dir / "manifest.jsonl")
    _write_run_meta(out_dir, argv, started)
    print(f"wrote {len(samples)} images and manifest.jsonl to {out_dir}")


def _cmd_augment(opts, argv, started):
    corpus_path = Path(opts["corpus"])
    samples = rangeimage.read_manifest(corpus_path)
    policy = augment.ExpansionPolicy(
        crop_fraction=opts["crop_fraction"],
        flip_probability=opts["flip_probability"],
        relight_enabled=opts["relight"],
        relight_magnitude=opts["relight_magnitude"],
        relight_probability=opts["relight_probability"],
        seed=opts["seed"],
    )
    expanded = augment.expand_dataset(samples, policy, root=corpus_path.parent)
    out_dir = Path(opts["out"])
    augment.write_expanded(expanded, out_dir)
    _write_run_meta(out_dir, argv, started)
    print(f"expanded {len(samples)} samples into {len(expanded)} at {out_dir}")


def _cmd_extract(opts, argv, started):
    corpus_path = Path(opts["corpus"])
    samples = rangeimage.read_manifest(corpus_path)
    images = [rangeimage.load_sample_image(s, corpus_path.parent) for s in samples]
    matrix = features.extract_matrix(images, jobs=opts["jobs"])
    features.write_features_csv(opts["out"], [s.meta.sample_id for s in samples],
                                [s.label for s in samples], matrix)
    print(f"extracted {matrix.shape[0]} x {matrix.shape[1]} features to {opts['out']}")


def _cmd_train(opts, argv, started):
    ids, labels, matrix = features.read_features_csv(opts["features"])
    model = forest.train(matrix, labels, _forest_params(opts))
    forest.save_model(model, opts["out"])
    print(f"trained {model.params.tree_count} trees on {len(ids)} samples -> {opts['out']}")


def _split_corpus(samples, test_fraction, seed):
    by_class = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    train, test = [], []
    for label in sorted(by_class):
        group = sorted(by_class[label], key=lambda s: s.meta.sample_id)
        rng = rng_for(seed, "bench-split", label.name)
        perm = rng.permutation(len(group))
        n_test = int(round(test_fraction * len(group)))
        test.extend(group[i] for i in perm[:n_test])
        train.extend(group[i] for i in perm[n_test:])
    if not train or not test:
        raise ValueError("train/test split produced an empty side; adjust --test-fraction")
    return train, test


def _cmd_bench(opts, argv, started):
    corpus_path = Path(opts["corpus"])
    samples = rangeimage.read_manifest(corpus_path)
    loaded = [replace(s, image=rangeimage.load_sample_image(s, corpus_path.parent))
              for s in samples]
    train_samples, test_samples = _split_corpus(loaded, opts["test_fraction"], opts["seed"])
    corpus = bench.prepare_corpus(train_samples, test_samples,
                                  crop_fraction=opts["crop_fraction"], seed=opts["seed"])
    cells = bench.run_matrix(corpus, _forest_params(opts), seed=opts["seed"],
                             jobs=opts["jobs"])
    out_dir = Path(opts["out"])
    summary = bench.render_report(cells, out_dir)
    _write_run_meta(out_dir, argv, started)
    print(f"ran {len(cells)} cells -> {summary.results_csv}")


def _cmd_score(opts, argv, started):
    truth = rangeimage.read_manifest(opts["truth"])
    predictions = bench.import_predictions(opts["pred"], opts["model_name"])
    acc = bench.accuracy(predictions, truth)
    print(f"accuracy {acc:.6f}")


def _cmd_consistency(opts, argv, started):
    manifests = []
    roots = []
    for path in opts["manifests"]:
        path = Path(path)
        manifests.append(rangeimage.read_manifest(path))
        roots.append(path.parent)
    series = consistency.align_series(manifests)
    report = consistency.violations(series)
    drift = consistency.drift_report(
        [[replace(s, image=rangeimage.load_sample_image(s, root)) for s in manifest]
         for manifest, root in zip(manifests, roots)])
    out_dir = Path(opts["out"])
    json_path, _ = consistency.write_consistency_report(drift, report, out_dir)
    _write_run_meta(out_dir, argv, started)
    print(f"{report.total_pairs} pairs, violation rate {report.violation_rate:.4f} -> {json_path}")


def _cmd_report(opts, argv, started):
    rows = []
    import csv as _csv
    with open(opts["results"], encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["train_config", "test_config", "accuracy", "n", "seed"]:
            raise ValueError(f"unexpected results header {header}")
        for row in reader:
            if not row:
                continue
            rows.append((row[0], row[1], float(row[2]), int(row[3]), int(row[4])))
    out_dir = Path(opts["out"])
    summary = bench.render_rows(rows, out_dir)
    _write_run_meta(out_dir, argv, started)
    print(f"rendered {len(rows)} rows -> {summary.heatmap_svg}")


_HANDLERS = {
    "synth": _cmd_synth,
    "augment": _cmd_augment,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "score": _cmd_score,
    "consistency": _cmd_consistency,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    started = time.time()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage() + "ravelbench: error: a subcommand is required")
        opts = _resolve(args, args.command)
        _HANDLERS[args.command](opts, argv, started)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
