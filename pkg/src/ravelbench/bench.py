"""The 10x4 experiment matrix: variation configs, cell runner, scoring, reports.

Rows vary the training data (spatial source, fraction of the expanded corpus,
optional flip/relight augmentation); columns vary the test data (flips and/or
relights on top of the always-applied cropping). All random streams derive
from (run seed, purpose, config, sample), so cells can run in any order or in
parallel with identical results, and every row of one column sees the same
transformed test set.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import forest
from .augment import (
    AugmentationSpec,
    DEFAULT_RELIGHT_MAGNITUDE,
    ExpansionPolicy,
    RegionTag,
    draw_variation,
    compound,
    expand_dataset,
)
from .features import extract_matrix
from .rangeimage import LabeledSample, SeverityLabel
from .seeds import rng_for, seed_for


class CoverageError(ValueError):
    """Truth samples lack predictions; the message lists missing ids."""


class PredictionFormatError(ValueError):
    """Predictions CSV is malformed; the message names the row."""


class ConfigurationError(ValueError):
    """An experiment cell cannot be built from the given corpus/config."""


class Spatial(Enum):
    FIXED_TOP_LEFT = "top-left corner"
    RANDOM_REGION = "random"
    ALL_REGIONS = "all"


@dataclass(frozen=True)
class TrainConfig:
    spatial: Spatial
    fraction: float
    flip_enabled: bool = False
    relight_enabled: bool = False

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")

    @property
    def label(self) -> str:
        text = self.spatial.value
        if not (self.spatial is Spatial.ALL_REGIONS and self.fraction == 1.0):
            text += f" ({int(round(self.fraction * 100))}%)"
        if self.flip_enabled:
            text += "+flip"
        if self.relight_enabled:
            text += "+relight"
        return text


@dataclass(frozen=True)
class TestConfig:
    flip_enabled: bool = False
    relight_enabled: bool = False

    @property
    def label(self) -> str:
        text = "all"
        if self.flip_enabled:
            text += "+flip"
        if self.relight_enabled:
            text += "+relight"
        return text


@dataclass(frozen=True)
class ExperimentCell:
    train: TrainConfig
    test: TestConfig
    accuracy: float
    sample_count: int
    seed: int


@dataclass(frozen=True)
class PredictionSet:
    entries: dict
    model_name: str


CANONICAL_FRACTIONS = (0.05, 0.10, 0.20)


def canonical_train_configs() -> list[TrainConfig]:
    configs = [TrainConfig(Spatial.FIXED_TOP_LEFT, f) for f in CANONICAL_FRACTIONS]
    configs += [TrainConfig(Spatial.RANDOM_REGION, f) for f in CANONICAL_FRACTIONS]
    configs += [
        TrainConfig(Spatial.ALL_REGIONS, 1.0, flip_enabled=False, relight_enabled=False),
        TrainConfig(Spatial.ALL_REGIONS, 1.0, flip_enabled=True, relight_enabled=False),
        TrainConfig(Spatial.ALL_REGIONS, 1.0, flip_enabled=False, relight_enabled=True),
        TrainConfig(Spatial.ALL_REGIONS, 1.0, flip_enabled=True, relight_enabled=True),
    ]
    return configs


def canonical_test_configs() -> list[TestConfig]:
    return [
        TestConfig(flip_enabled=False, relight_enabled=False),
        TestConfig(flip_enabled=True, relight_enabled=False),
        TestConfig(flip_enabled=False, relight_enabled=True),
        TestConfig(flip_enabled=True, relight_enabled=True),
    ]


def build_matrix() -> list[tuple[TrainConfig, TestConfig]]:
    """All 40 (train, test) pairs in canonical row-major order."""
    return [(tr, te) for tr in canonical_train_configs() for te in canonical_test_configs()]


@dataclass(frozen=True)
class BenchCorpus:
    """Expanded (five-region) train and test samples with in-memory images."""

    train: tuple[LabeledSample, ...]
    test: tuple[LabeledSample, ...]


def prepare_corpus(train_samples, test_samples, crop_fraction: float = 0.85,
                   seed: int = 0, root=".") -> BenchCorpus:
    """Expand original train/test splits with crop-only five-region policies."""
    policy = ExpansionPolicy(crop_fraction=crop_fraction, flip_probability=0.0,
                             relight_enabled=False, seed=seed)
    return BenchCorpus(
        train=tuple(expand_dataset(train_samples, policy, root=root)),
        test=tuple(expand_dataset(test_samples, policy, root=root)),
    )


def region_of(sample: LabeledSample) -> str:
    """Region tag encoded in an expanded sample's id suffix."""
    sid = sample.meta.sample_id
    if "__" not in sid:
        raise ConfigurationError(f"sample {sid!r} carries no region suffix; corpus not expanded?")
    tag = sid.rsplit("__", 1)[1]
    if tag not in {r.value for r in RegionTag}:
        raise ConfigurationError(f"sample {sid!r} has unknown region suffix {tag!r}")
    return tag


def _stratified_prefix(samples, pool_fraction: float, rng) -> list[LabeledSample]:
    """Per-class shuffle-and-take-prefix selection.

    The shuffle depends only on the stream, not the fraction, so smaller
    fractions select nested subsets of larger ones.
    """
    pool_fraction = min(pool_fraction, 1.0)
    by_class: dict[SeverityLabel, list[LabeledSample]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    chosen: list[LabeledSample] = []
    for label in sorted(by_class):
        group = sorted(by_class[label], key=lambda s: s.meta.sample_id)
        perm = rng.permutation(len(group))
        take = max(1, int(round(pool_fraction * len(group))))
        chosen.extend(group[i] for i in perm[:take])
    if not chosen:
        raise ConfigurationError("stratified subsampling selected no samples")
    return chosen


_TOP_LEFT_SHARE = 0.20  # one region out of five


def _select_training(corpus: BenchCorpus, cfg: TrainConfig, run_seed: int) -> list[LabeledSample]:
    if cfg.spatial is Spatial.FIXED_TOP_LEFT:
        pool = [s for s in corpus.train if region_of(s) == RegionTag.TOP_LEFT.value]
        pool_fraction = cfg.fraction / _TOP_LEFT_SHARE
    else:
        pool = list(corpus.train)
        pool_fraction = cfg.fraction
    if not pool:
        raise ConfigurationError(f"no training samples available for {cfg.label!r}")
    rng = rng_for(run_seed, "select", cfg.spatial.value)
    return _stratified_prefix(pool, pool_fraction, rng)


def _transform(samples, purpose: str, config_label: str, flip_enabled: bool,
               relight_enabled: bool, run_seed: int):
    images = []
    labels = []
    for s in samples:
        if s.image is None:
            raise ConfigurationError(f"sample {s.meta.sample_id!r} has no in-memory image")
        rng = rng_for(run_seed, purpose, config_label, s.meta.sample_id)
        axes, delta = draw_variation(
            rng,
            flip_probability=0.5 if flip_enabled else 0.0,
            relight_enabled=relight_enabled,
            relight_probability=0.5,
            relight_magnitude=DEFAULT_RELIGHT_MAGNITUDE,
        )
        images.append(compound(s.image, AugmentationSpec(flip=axes, relight=delta)))
        labels.append(int(s.label))
    return images, np.asarray(labels, dtype=np.int64)


def run_cell(train_cfg: TrainConfig, test_cfg: TestConfig, corpus: BenchCorpus,
             forest_params: forest.ForestParams = forest.ForestParams(),
             run_seed: int = 0, jobs: int = 1) -> ExperimentCell:
    """Train under one row config, evaluate under one column config."""
    if not corpus.test:
        raise ConfigurationError("corpus has no test samples")
    subset = _select_training(corpus, train_cfg, run_seed)
    train_images, train_labels = _transform(
        subset, "train-aug", train_cfg.label,
        train_cfg.flip_enabled, train_cfg.relight_enabled, run_seed)
    X_train = extract_matrix(train_images, jobs=jobs)
    params = replace(forest_params, seed=seed_for(run_seed, "forest", train_cfg.label))
    model = forest.train(X_train, train_labels, params)

    test_images, test_labels = _transform(
        corpus.test, "test-aug", test_cfg.label,
        test_cfg.flip_enabled, test_cfg.relight_enabled, run_seed)
    X_test = extract_matrix(test_images, jobs=jobs)
    predictions = forest.predict_batch(model, X_test)
    acc = float(np.mean(predictions == test_labels))
    return ExperimentCell(train=train_cfg, test=test_cfg, accuracy=acc,
                          sample_count=len(test_labels), seed=run_seed)


def run_matrix(corpus: BenchCorpus, forest_params: forest.ForestParams = forest.ForestParams(),
               seed: int = 0, jobs: int = 1) -> list[ExperimentCell]:
    """Run all 40 canonical cells; parallel execution changes nothing."""
    pairs = build_matrix()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, tr, te, corpus, forest_params, seed)
                       for tr, te in pairs]
            return [f.result() for f in futures]
    return [run_cell(tr, te, corpus, forest_params, seed) for tr, te in pairs]


# --- scoring ------------------------------------------------------------------


def accuracy(predictions: PredictionSet, truth) -> float:
    """Fraction of truth samples predicted correctly."""
    truth = list(truth)
    if not truth:
        raise ValueError("truth set is empty")
    missing = [s.meta.sample_id for s in truth if s.meta.sample_id not in predictions.entries]
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise CoverageError(f"missing predictions for: {shown}{more}")
    correct = sum(1 for s in truth if predictions.entries[s.meta.sample_id] == s.label)
    return correct / len(truth)


def import_predictions(path, model_name: str) -> PredictionSet:
    """Read a sample_id,label CSV of external-model predictions."""
    path = Path(path)
    entries: dict[str, SeverityLabel] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return PredictionSet(entries={}, model_name=model_name)
        if header != ["sample_id", "label"]:
            raise PredictionFormatError(f"{path}: expected header sample_id,label, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise PredictionFormatError(f"{path}: row {lineno}: expected 2 fields, got {len(row)}")
            sid, text = row
            if sid in entries:
                raise PredictionFormatError(f"{path}: row {lineno}: duplicate sample_id {sid!r}")
            try:
                entries[sid] = SeverityLabel.parse(text)
            except ValueError as exc:
                raise PredictionFormatError(f"{path}: row {lineno}: {exc}") from None
    return PredictionSet(entries=entries, model_name=model_name)


# --- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class ReportSummary:
    results_csv: Path
    heatmap_svg: Path
    column_leaders: dict


def render_report(cells, out_dir) -> ReportSummary:
    """Write results.csv and heatmap.svg; returns per-column best/second-best."""
    cells = list(cells)
    if not cells:
        raise ValueError("no cells to report")
    rows = [(c.train.label, c.test.label, c.accuracy, c.sample_count, c.seed) for c in cells]
    return render_rows(rows, out_dir)


def render_rows(rows, out_dir) -> ReportSummary:
    """Report renderer over plain (train, test, accuracy, n, seed) tuples."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results_path = out_dir / "results.csv"
    with open(results_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["train_config", "test_config", "accuracy", "n", "seed"])
        for train_label, test_label, acc, n, seed in rows:
            writer.writerow([train_label, test_label, f"{acc:.6f}", n, seed])

    row_labels = list(dict.fromkeys(r[0] for r in rows))
    col_labels = list(dict.fromkeys(r[1] for r in rows))
    grid = {(r[0], r[1]): r[2] for r in rows}

    leaders = {}
    for col in col_labels:
        scored = [(label, grid[(label, col)]) for label in row_labels if (label, col) in grid]
        best_value = max(v for _, v in scored)
        best = tuple(label for label, v in scored if v == best_value)
        if len(best) == 1:
            rest = [v for _, v in scored if v < best_value]
            if rest:
                second_value = max(rest)
                second = tuple(label for label, v in scored if v == second_value)
            else:
                second = ()
        else:
            second = ()
        leaders[col] = (best, second)

    heatmap_path = out_dir / "heatmap.svg"
    heatmap_path.write_text(_heatmap_svg(row_labels, col_labels, grid, leaders),
                            encoding="utf-8", newline="\n")
    return ReportSummary(results_csv=results_path, heatmap_svg=heatmap_path,
                         column_leaders=leaders)


def _lerp_color(t: float) -> tuple[int, int, int]:
    stops = [(68, 1, 84), (33, 145, 140), (253, 231, 37)]  # dark violet -> teal -> yellow
    if t <= 0.5:
        a, b, u = stops[0], stops[1], t * 2
    else:
        a, b, u = stops[1], stops[2], (t - 0.5) * 2
    return tuple(int(round(a[i] + (b[i] - a[i]) * u)) for i in range(3))


def _heatmap_svg(row_labels, col_labels, grid, leaders) -> str:
    cell_w, cell_h = 104, 30
    left, top = 200, 46
    width = left + cell_w * len(col_labels) + 20
    height = top + cell_h * len(row_labels) + 20

    values = [v for v in grid.values()]
    lo, hi = min(values), max(values)
    span = hi - lo

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j, col in enumerate(col_labels):
        x = left + j * cell_w + cell_w / 2
        parts.append(f'<text x="{x:.1f}" y="{top - 10}" text-anchor="middle">{col}</text>')
    for i, row in enumerate(row_labels):
        y = top + i * cell_h + cell_h / 2 + 4
        parts.append(f'<text x="{left - 8}" y="{y:.1f}" text-anchor="end">{row}</text>')
        for j, col in enumerate(col_labels):
            x = left + j * cell_w
            yc = top + i * cell_h
            if (row, col) not in grid:
                parts.append(f'<rect x="{x}" y="{yc}" width="{cell_w}" height="{cell_h}" '
                             f'fill="none" stroke="#999"/>')
                continue
            value = grid[(row, col)]
            t = 0.5 if span == 0 else (value - lo) / span
            r, g, b = _lerp_color(t)
            fill = "black" if t > 0.55 else "white"
            best, second = leaders[col]
            weight = ' font-weight="bold"' if row in best else ""
            deco = ' text-decoration="underline"' if row in second else ""
            parts.append(f'<rect x="{x}" y="{yc}" width="{cell_w}" height="{cell_h}" '
                         f'fill="rgb({r},{g},{b})" stroke="white"/>')
            parts.append(f'<text x="{x + cell_w / 2:.1f}" y="{yc + cell_h / 2 + 4:.1f}" '
                         f'text-anchor="middle" fill="{fill}"{weight}{deco}>{value:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
