"""Multi-year consistency analysis and the moment-based relight policy.

Severity at a fixed pavement location cannot decrease between surveys absent
maintenance, so any year-over-year drop in predicted severity is a violation;
the violation rate proxies model quality when no ground truth exists. Drift
reports expose the small per-year shifts in intensity statistics that cause
such violations, and ``moment_relight`` is the training-time augmentation that
counteracts them: bounded random jitter of each image's own mean and variance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rangeimage import LabeledSample, RangeImage, SeverityLabel, load_sample_image
from .seeds import rng_for


class AmbiguityError(ValueError):
    """A location appears more than once within one year."""


@dataclass(frozen=True)
class SeriesEntry:
    year: int
    label: SeverityLabel
    sample_id: str


@dataclass(frozen=True)
class YearSeries:
    """One location's severity trajectory across years (strictly increasing)."""

    location_key: str
    entries: tuple[SeriesEntry, ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise ValueError("a year series needs at least two entries to analyze")
        years = [e.year for e in self.entries]
        if any(a >= b for a, b in zip(years, years[1:])):
            raise ValueError(f"years must strictly increase, got {years}")


@dataclass(frozen=True)
class Violation:
    location_key: str
    year_from: int
    year_to: int
    label_from: SeverityLabel
    label_to: SeverityLabel


@dataclass(frozen=True)
class ViolationReport:
    total_pairs: int
    violations: tuple[Violation, ...]
    violation_rate: float


@dataclass(frozen=True)
class YearMoments:
    year: int
    mean: float
    variance: float
    histogram: tuple[int, int, int, int]


@dataclass(frozen=True)
class DriftReport:
    per_year: tuple[YearMoments, ...]


@dataclass(frozen=True)
class MomentRelightPolicy:
    """Random jitter bounds for per-image mean/variance, on [0, 1] normalized data."""

    mean_jitter: float = 0.03
    variance_jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.mean_jitter < 0 or self.variance_jitter < 0:
            raise ValueError("jitters must be non-negative")


def align_series(yearly_manifests) -> list[YearSeries]:
    """Group samples by location_key into per-location year series.

    Only locations observed in at least two years are analyzable; alignment is
    purely key-based.
    """
    per_location: dict[str, dict[int, tuple[SeverityLabel, str]]] = {}
    for manifest in yearly_manifests:
        for sample in manifest:
            key = sample.meta.location_key
            year = sample.meta.year
            years = per_location.setdefault(key, {})
            if year in years:
                raise AmbiguityError(f"duplicate entry for location {key!r} in year {year}")
            years[year] = (sample.label, sample.meta.sample_id)
    series = []
    for key in sorted(per_location):
        years = per_location[key]
        if len(years) < 2:
            continue
        entries = tuple(
            SeriesEntry(year=year, label=years[year][0], sample_id=years[year][1])
            for year in sorted(years)
        )
        series.append(YearSeries(location_key=key, entries=entries))
    return series


def violations(series) -> ViolationReport:
    """Flag every consecutive pair whose later severity is lower than the earlier."""
    total = 0
    found = []
    for s in series:
        for a, b in zip(s.entries, s.entries[1:]):
            total += 1
            if b.label < a.label:
                found.append(Violation(
                    location_key=s.location_key,
                    year_from=a.year, year_to=b.year,
                    label_from=a.label, label_to=b.label,
                ))
    rate = len(found) / total if total else 0.0
    return ViolationReport(total_pairs=total, violations=tuple(found), violation_rate=rate)


def drift_report(yearly_manifests, root=".") -> DriftReport:
    """Per-year pooled pixel mean/variance plus the severity histogram.

    Pixel sums accumulate in exact integers, so the moments match a double-pass
    computation to float rounding.
    """
    acc: dict[int, list] = {}  # year -> [sum, sumsq, count, hist]
    for manifest in yearly_manifests:
        for sample in manifest:
            year = sample.meta.year
            try:
                image = load_sample_image(sample, root)
            except OSError as exc:
                raise OSError(f"sample {sample.meta.sample_id!r}: cannot load image: {exc}") from None
            px = image.pixels.astype(np.int64)
            entry = acc.setdefault(year, [0, 0, 0, [0, 0, 0, 0]])
            entry[0] += int(px.sum())
            entry[1] += int((px * px).sum())
            entry[2] += px.size
            entry[3][int(sample.label)] += 1
    per_year = []
    for year in sorted(acc):
        total, total_sq, count, hist = acc[year]
        mean = total / count
        variance = total_sq / count - mean * mean
        per_year.append(YearMoments(year=year, mean=mean, variance=variance,
                                    histogram=tuple(hist)))
    return DriftReport(per_year=tuple(per_year))


def moment_relight(image: RangeImage, policy: MomentRelightPolicy, sample_id: str) -> RangeImage:
    """Jitter the image's own mean and variance on the [0, 1] normalized scale.

    v' = (v - m) * s + m + t with t ~ U(-mean_jitter, +mean_jitter) and
    s = sqrt(clamp((var + u) / var, 0, 4)), u ~ U(-variance_jitter, +variance_jitter);
    zero-variance images take the mean shift only. Deterministic per
    (policy.seed, sample_id); output re-quantizes with nearest-even rounding
    and clamps to [0, 255].
    """
    rng = rng_for(policy.seed, "moment-relight", sample_id)
    t = float(rng.uniform(-policy.mean_jitter, policy.mean_jitter))
    v01 = image.pixels.astype(np.float64) / 255.0
    var = float(v01.var())
    if var > 0:
        u = float(rng.uniform(-policy.variance_jitter, policy.variance_jitter))
        ratio = min(max((var + u) / var, 0.0), 4.0)
        s = math.sqrt(ratio)
    else:
        s = 1.0
    if t == 0.0 and s == 1.0:
        return image
    m = float(v01.mean())
    out = (v01 - m) * s + m + t
    return RangeImage(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))


def augment_with_moment_relight(samples, policy: MomentRelightPolicy, root=".") -> list[LabeledSample]:
    """Original samples plus one moment-relit copy of each (labels preserved)."""
    out = list(samples)
    for sample in samples:
        image = load_sample_image(sample, root)
        relit = moment_relight(image, policy, sample.meta.sample_id)
        new_id = f"{sample.meta.sample_id}__mr"
        meta = type(sample.meta)(
            sample_id=new_id,
            year=sample.meta.year,
            route=sample.meta.route,
            location_key=sample.meta.location_key,
            run_id=sample.meta.run_id,
        )
        out.append(LabeledSample(path=f"{new_id}.png", label=sample.label,
                                 meta=meta, image=relit))
    return out


def write_consistency_report(drift: DriftReport, report: ViolationReport,
                             out_dir) -> tuple[Path, Path]:
    """Write the JSON summary and the violations CSV; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "per_year": [
            {
                "year": m.year,
                "mean": m.mean,
                "variance": m.variance,
                "histogram": {f"L{k}": m.histogram[k] for k in range(4)},
            }
            for m in drift.per_year
        ],
        "total_pairs": report.total_pairs,
        "violation_rate": report.violation_rate,
        "violations": [
            {
                "location_key": v.location_key,
                "year_from": v.year_from,
                "year_to": v.year_to,
                "label_from": v.label_from.name,
                "label_to": v.label_to.name,
            }
            for v in report.violations
        ],
    }
    json_path = out_dir / "consistency.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8", newline="\n")
    csv_path = out_dir / "violations.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["location_key", "year_from", "year_to", "label_from", "label_to"])
        for v in report.violations:
            writer.writerow([v.location_key, v.year_from, v.year_to,
                             v.label_from.name, v.label_to.name])
    return json_path, csv_path
