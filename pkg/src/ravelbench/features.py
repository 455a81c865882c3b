"""606-dimensional macrotexture features and feature-matrix normalization.

Layout of the vector (total 606):

==========  ======  ====================================================
indices     count   block
==========  ======  ====================================================
0..255      256     intensity histogram, normalized to sum 1
256..511    256     gradient-magnitude histogram (bins clamped to 255)
512..535    24      co-occurrence statistics: 4 offsets x 6 statistics
536..599    64      block mean texture depth on an 8x8 grid
600..605    6       global moments: mean, std, skew, kurtosis,
                    min - mean, max - mean
==========  ======  ====================================================

Apart from the intensity histogram and the global mean, every block is
invariant under an unclamped uniform intensity shift: gradients subtract the
shift away, co-occurrence levels are quantized relative to the image minimum,
and the block/global statistics are deviations from means. This is what makes
relighting hit classifiers only through the intensity distribution.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rangeimage import RangeImage, SeverityLabel

FEATURE_DIM = 606
MIN_IMAGE_SIDE = 16

HIST_SLICE = slice(0, 256)
GRADIENT_SLICE = slice(256, 512)
COOCCURRENCE_SLICE = slice(512, 536)
BLOCK_SLICE = slice(536, 600)
GLOBAL_SLICE = slice(600, 606)
GLOBAL_MEAN_INDEX = 600

_GLCM_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))
_GLCM_LEVELS = 16
_BLOCK_GRID = 8


def extract(image: RangeImage) -> np.ndarray:
    """Extract the 606-dim macrotexture descriptor; pure and deterministic."""
    if image.width < MIN_IMAGE_SIDE or image.height < MIN_IMAGE_SIDE:
        raise ValueError(
            f"image {image.width}x{image.height} below the "
            f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum for feature extraction"
        )
    px = image.pixels
    fpx = px.astype(np.float64)
    n = px.size

    hist = np.bincount(px.ravel(), minlength=256) / n

    gy, gx = np.gradient(fpx)
    magnitude = np.hypot(gy, gx)
    bins = np.clip(np.rint(magnitude), 0, 255).astype(np.int64)
    gradient_hist = np.bincount(bins.ravel(), minlength=256) / n

    vec = np.concatenate([
        hist,
        gradient_hist,
        _cooccurrence_stats(px),
        _block_texture_depth(fpx),
        _global_moments(hist),
    ])
    return vec


def extract_matrix(images, jobs: int = 1) -> np.ndarray:
    """Feature matrix for a sequence of images, optionally with worker threads."""
    images = list(images)
    if not images:
        return np.empty((0, FEATURE_DIM))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(extract, images))
    else:
        rows = [extract(img) for img in images]
    return np.stack(rows)


def _cooccurrence_stats(px: np.ndarray) -> np.ndarray:
    # Quantize relative to the image minimum so levels are shift-invariant.
    q = (px.astype(np.int64) - int(px.min())) // (256 // _GLCM_LEVELS)
    h, w = q.shape
    levels = _GLCM_LEVELS
    i = np.arange(levels, dtype=np.float64)
    diff = i[:, None] - i[None, :]
    feats = []
    for dr, dc in _GLCM_OFFSETS:
        a = q[0:h - dr, max(0, -dc):w - max(0, dc)]
        b = q[dr:h, max(0, dc):w + min(0, dc)]
        counts = np.bincount((a * levels + b).ravel(), minlength=levels * levels)
        p = counts.reshape(levels, levels) / counts.sum()

        contrast = float((p * diff * diff).sum())
        dissimilarity = float((p * np.abs(diff)).sum())
        homogeneity = float((p / (1.0 + diff * diff)).sum())
        energy = float(math.sqrt((p * p).sum()))
        nz = p[p > 0]
        entropy = float(-(nz * np.log(nz)).sum())
        pi = p.sum(axis=1)
        pj = p.sum(axis=0)
        mu_i = float((i * pi).sum())
        mu_j = float((i * pj).sum())
        var_i = float(((i - mu_i) ** 2 * pi).sum())
        var_j = float(((i - mu_j) ** 2 * pj).sum())
        if var_i > 0 and var_j > 0:
            correlation = float(
                (((i[:, None] - mu_i) * (i[None, :] - mu_j)) * p).sum()
                / math.sqrt(var_i * var_j)
            )
        else:
            correlation = 0.0
        feats.extend([contrast, correlation, energy, homogeneity, entropy, dissimilarity])
    return np.array(feats)


def _block_texture_depth(fpx: np.ndarray) -> np.ndarray:
    """Mean absolute deviation from the block mean, over an 8x8 block grid.

    Block edges come from floor division; remainder rows/columns join the last
    block row/column.
    """
    h, w = fpx.shape
    bh = h // _BLOCK_GRID
    bw = w // _BLOCK_GRID
    row_edges = [k * bh for k in range(_BLOCK_GRID)] + [h]
    col_edges = [k * bw for k in range(_BLOCK_GRID)] + [w]
    out = np.empty(_BLOCK_GRID * _BLOCK_GRID)
    k = 0
    for r in range(_BLOCK_GRID):
        for c in range(_BLOCK_GRID):
            block = fpx[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]]
            out[k] = np.abs(block - block.mean()).mean()
            k += 1
    return out


def _global_moments(hist: np.ndarray) -> np.ndarray:
    """Global moments computed from the intensity histogram.

    Working from the histogram rather than the raster makes the moments exactly
    invariant under any pixel permutation (flips included), not merely up to
    summation order. The min/max features are stored as offsets from the mean.
    """
    v = np.arange(256, dtype=np.float64)
    mean = float(hist @ v)
    dev = v - mean
    variance = float(hist @ (dev * dev))
    std = math.sqrt(variance)
    if std > 0:
        skew = float(hist @ (dev ** 3)) / std ** 3
        kurtosis = float(hist @ (dev ** 4)) / variance ** 2
    else:
        skew = 0.0
        kurtosis = 0.0
    occupied = np.nonzero(hist)[0]
    return np.array([
        mean,
        std,
        skew,
        kurtosis,
        float(occupied[0]) - mean,
        float(occupied[-1]) - mean,
    ])


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-dimension z-score parameters; zero-variance dimensions get scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != scale.shape:
            raise ValueError("normalizer mean/scale must be 1-D arrays of equal length")
        if not np.all(scale > 0):
            raise ValueError("normalizer scale entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))


def fit_normalizer(vectors) -> Normalizer:
    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.size == 0 or matrix.shape[0] < 1:
        raise ValueError("cannot fit a normalizer on an empty vector list")
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return Normalizer(mean=mean, scale=scale)


def apply_normalizer(normalizer: Normalizer, vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.shape[-1] != normalizer.dim:
        raise ValueError(f"expected vectors of length {normalizer.dim}, got {arr.shape[-1]}")
    return (arr - normalizer.mean) / normalizer.scale


# --- CSV persistence ---------------------------------------------------------


def write_features_csv(path, sample_ids, labels, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    sample_ids = list(sample_ids)
    labels = list(labels)
    if matrix.ndim != 2 or len(sample_ids) != matrix.shape[0] or len(labels) != matrix.shape[0]:
        raise ValueError("sample_ids, labels and matrix rows must align")
    header = ["sample_id", "label"] + [f"f{j:03d}" for j in range(matrix.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for sid, label, row in zip(sample_ids, labels, matrix):
            writer.writerow([sid, label.name] + [repr(float(v)) for v in row])


def read_features_csv(path) -> tuple[list[str], list[SeverityLabel], np.ndarray]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty feature file") from None
        if header[:2] != ["sample_id", "label"]:
            raise ValueError(f"{path}: unexpected header {header[:2]}")
        dim = len(header) - 2
        ids: list[str] = []
        labels: list[SeverityLabel] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ValueError(f"{path}: line {lineno}: expected {dim + 2} fields, got {len(row)}")
            ids.append(row[0])
            labels.append(SeverityLabel.parse(row[1]))
            rows.append([float(v) for v in row[2:]])
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, dim))
    return ids, labels, matrix
