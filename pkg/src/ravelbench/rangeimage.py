"""Range images: core types, codecs, manifests, height-grid processing, synthesis.

A range image is an 8-bit grayscale raster whose intensities encode relative
surface depth; ``pixels[row, col]`` addressing throughout. All types are
immutable after construction and all operations are pure, so everything here
is safe to map over in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage
from scipy.ndimage import gaussian_filter

from .seeds import rng_for

DEFAULT_HIGHPASS_SIGMA = 20.0

_MASK64 = (1 << 64) - 1


class ImageFormatError(ValueError):
    """File is not one of the supported image formats (8-bit gray PNG / P5 PGM)."""


class ManifestError(ValueError):
    """A manifest record is malformed; the message names the offending line."""


class SeverityLabel(IntEnum):
    """Raveling severity, ordered from L0 (none) to L3 (high)."""

    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3

    @classmethod
    def parse(cls, text: str) -> "SeverityLabel":
        try:
            return cls[text]
        except KeyError:
            raise ValueError(f"unknown severity label {text!r}") from None


class RangeImage:
    """Immutable 8-bit grayscale image; relative depth encoded as intensity."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype.kind not in "iu":
            raise ValueError(f"pixel intensities must be integers, got dtype {arr.dtype}")
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("pixel intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.flags.writeable = False
        self._pixels = arr

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RangeImage):
            return NotImplemented
        return self._pixels.shape == other._pixels.shape and bool(
            np.array_equal(self._pixels, other._pixels)
        )

    def __hash__(self):
        return hash((self._pixels.shape, self._pixels.tobytes()))

    def __repr__(self) -> str:
        return f"RangeImage({self.width}x{self.height})"


class HeightGrid:
    """Immutable grid of real-valued surface heights (millimeters)."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"heights must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("height values must all be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    def __repr__(self) -> str:
        return f"HeightGrid({self.width}x{self.height})"


@dataclass(frozen=True)
class ImageStats:
    mean: float
    variance: float


@dataclass(frozen=True)
class SampleMeta:
    """Provenance of one sample; location_key ties a physical spot across years."""

    sample_id: str
    year: int
    route: str
    location_key: str
    run_id: str


@dataclass(frozen=True)
class LabeledSample:
    """An image (by path and/or in memory) with its severity label and provenance.

    Equality ignores the in-memory payload so that a written-then-read manifest
    round-trips to equal samples.
    """

    path: str
    label: SeverityLabel
    meta: SampleMeta
    image: RangeImage | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class SynthesisParams:
    """Controls for the synthetic labeled-image generator.

    Raveling is modeled as dark circular pits on a fractal-noise base texture;
    pit density per severity level keeps classes separable by construction
    while still overlapping at the boundaries.
    """

    width: int = 128
    height: int = 128
    base_texture_amplitude: float = 12.0
    pit_density_per_level: tuple[float, float, float, float] = (0.0, 0.5, 2.0, 6.0)
    pit_depth_range: tuple[float, float] = (25.0, 80.0)
    marking_probability: float = 0.1

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"degenerate image dimensions {self.width}x{self.height}")
        if len(self.pit_density_per_level) != 4:
            raise ValueError("pit_density_per_level needs one rate per severity level")
        if not all(a < b for a, b in zip(self.pit_density_per_level, self.pit_density_per_level[1:])):
            raise ValueError("pit densities must strictly increase from L0 to L3")
        lo, hi = self.pit_depth_range
        if not (0 <= lo <= hi <= 255):
            raise ValueError(f"pit depth range {self.pit_depth_range} must lie within [0, 255]")
        if not 0.0 <= self.marking_probability <= 1.0:
            raise ValueError("marking_probability must lie in [0, 1]")
        if self.base_texture_amplitude < 0:
            raise ValueError("base_texture_amplitude must be non-negative")


def stats(image: RangeImage) -> ImageStats:
    """Population mean and variance of the pixel intensities."""
    fpx = image.pixels.astype(np.float64)
    return ImageStats(mean=float(fpx.mean()), variance=float(fpx.var()))


def from_height_grid(grid: HeightGrid, highpass_sigma: float = DEFAULT_HIGHPASS_SIGMA) -> RangeImage:
    """Compress and rectify a height grid into a range image.

    Rectification subtracts a Gaussian blur (sigma in pixels, clamp-to-edge
    boundaries) to remove gradual elevation trends such as cross-slope; the
    residual is then rescaled affinely so its min maps to 0 and its max to
    255. Grids with zero dynamic range map to the all-128 midpoint.
    """
    if highpass_sigma <= 0:
        raise ValueError(f"highpass_sigma must be positive, got {highpass_sigma}")
    values = grid.values
    if values.max() == values.min():
        return RangeImage(np.full(values.shape, 128, dtype=np.uint8))
    rectified = values - gaussian_filter(values, highpass_sigma, mode="nearest")
    lo = rectified.min()
    hi = rectified.max()
    if hi == lo:
        return RangeImage(np.full(values.shape, 128, dtype=np.uint8))
    scaled = (rectified - lo) * (255.0 / (hi - lo))
    return RangeImage(np.rint(scaled).astype(np.uint8))


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    cells_y = coarse.shape[0] - 1
    cells_x = coarse.shape[1] - 1
    ys = np.linspace(0.0, cells_y, height)
    xs = np.linspace(0.0, cells_x, width)
    y0 = np.minimum(ys.astype(int), cells_y - 1)
    x0 = np.minimum(xs.astype(int), cells_x - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def _fractal_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Multi-octave value noise in roughly [-1, 1]."""
    out = np.zeros((height, width))
    amplitude = 1.0
    total = 0.0
    for cells in (4, 8, 16, 32):
        coarse = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
        out += amplitude * _bilinear_upsample(coarse, height, width)
        total += amplitude
        amplitude *= 0.5
    return out / total


def synthesize(params: SynthesisParams, label: SeverityLabel, seed: int) -> LabeledSample:
    """Generate one labeled range image; pure function of (params, label, seed).

    Pits cluster around one or two longitudinal bands (wheelpath raveling), so
    crops from different regions of the same image genuinely differ.
    """
    rng = rng_for(seed & _MASK64, "synth", int(label))
    h, w = params.height, params.width
    base = 128.0 + params.base_texture_amplitude * _fractal_noise(rng, h, w)

    n_bands = 1 + int(rng.random() < 0.35)
    band_centers = [float(rng.uniform(0.15 * w, 0.85 * w)) for _ in range(n_bands)]
    band_spread = float(rng.uniform(0.06 * w, 0.14 * w))

    density = params.pit_density_per_level[int(label)]
    lam = density * (w * h) / 1000.0
    n_pits = int(rng.poisson(lam)) if lam > 0 else 0
    depth_lo, depth_hi = params.pit_depth_range
    for _ in range(n_pits):
        center = band_centers[int(rng.integers(0, n_bands))]
        cx = int(np.clip(rng.normal(center, band_spread), 0, w - 1))
        cy = int(rng.integers(0, h))
        radius = int(rng.integers(2, 11))
        depth = rng.uniform(depth_lo, depth_hi)
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
        yy = np.arange(y0, y1)[:, None] - cy
        xx = np.arange(x0, x1)[None, :] - cx
        mask = (yy * yy + xx * xx) <= radius * radius
        base[y0:y1, x0:x1] -= depth * mask

    if rng.random() < params.marking_probability:
        x0 = int(rng.integers(0, max(w - 3, 1)))
        stripe = int(rng.integers(3, 7))
        base[:, x0:min(x0 + stripe, w)] += 60.0

    pixels = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    sample_id = f"synth-{label.name}-{seed & _MASK64:016x}"
    meta = SampleMeta(sample_id=sample_id, year=0, route="synthetic",
                      location_key=sample_id, run_id="synth")
    return LabeledSample(path=f"{sample_id}.png", label=label, meta=meta,
                         image=RangeImage(pixels))


# --- manifests (JSON Lines) -------------------------------------------------

_MANIFEST_FIELDS = ("sample_id", "path", "label", "year", "route", "location_key", "run_id")


def write_manifest(samples, path) -> None:
    """Write samples as JSON Lines (UTF-8, LF); sample ids must be unique."""
    path = Path(path)
    seen: set[str] = set()
    lines = []
    for sample in samples:
        sid = sample.meta.sample_id
        if sid in seen:
            raise ManifestError(f"duplicate sample_id {sid!r}")
        seen.add(sid)
        record = {
            "sample_id": sid,
            "path": sample.path,
            "label": sample.label.name,
            "year": sample.meta.year,
            "route": sample.meta.route,
            "location_key": sample.meta.location_key,
            "run_id": sample.meta.run_id,
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    text = "".join(line + "\n" for line in lines)
    path.write_text(text, encoding="utf-8", newline="\n")


def read_manifest(path) -> list[LabeledSample]:
    """Parse a JSON Lines manifest; images load lazily from the stored paths."""
    path = Path(path)
    samples: list[LabeledSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise ManifestError(f"{path}: line {lineno}: record must be an object")
            missing = [k for k in _MANIFEST_FIELDS if k not in record]
            if missing:
                raise ManifestError(f"{path}: line {lineno}: missing fields {missing}")
            try:
                label = SeverityLabel.parse(record["label"])
                meta = SampleMeta(
                    sample_id=str(record["sample_id"]),
                    year=int(record["year"]),
                    route=str(record["route"]),
                    location_key=str(record["location_key"]),
                    run_id=str(record["run_id"]),
                )
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from None
            if meta.sample_id in seen:
                raise ManifestError(f"{path}: line {lineno}: duplicate sample_id {meta.sample_id!r}")
            seen.add(meta.sample_id)
            samples.append(LabeledSample(path=str(record["path"]), label=label, meta=meta))
    return samples


def load_sample_image(sample: LabeledSample, root=".") -> RangeImage:
    """Return the sample's image, loading it from disk on first access."""
    if sample.image is not None:
        return sample.image
    p = Path(sample.path)
    if not p.is_absolute():
        p = Path(root) / p
    return load_image(p)


# --- image codecs: 8-bit grayscale PNG and binary PGM (P5, maxval 255) ------


def load_image(path) -> RangeImage:
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"\x89PNG"):
        return _decode_png(data, path)
    if data.startswith(b"P5"):
        return _decode_pgm(data, path)
    if data[:2] in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise ImageFormatError(f"{path}: only binary P5 PGM is supported")
    raise ImageFormatError(f"{path}: not a PNG or P5 PGM file")


def save_image(image: RangeImage, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        _PILImage.fromarray(image.pixels, mode="L").save(path, format="PNG")
    elif suffix == ".pgm":
        header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
        path.write_bytes(header + image.pixels.tobytes())
    else:
        raise ImageFormatError(f"{path}: unsupported extension {suffix!r} (use .png or .pgm)")


def _decode_png(data: bytes, path: Path) -> RangeImage:
    import io

    with _PILImage.open(io.BytesIO(data)) as img:
        if img.mode != "L":
            raise ImageFormatError(
                f"{path}: unsupported PNG mode {img.mode!r}; only 8-bit grayscale is accepted"
            )
        arr = np.asarray(img, dtype=np.uint8)
    return RangeImage(arr)


def _decode_pgm(data: bytes, path: Path) -> RangeImage:
    pos = 2  # past the P5 magic
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise ImageFormatError(f"{path}: malformed PGM header token {data[start:pos]!r}") from None
    width, height, maxval = tokens
    if maxval != 255:
        raise ImageFormatError(f"{path}: PGM maxval {maxval} unsupported; only 8-bit (255) is accepted")
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: degenerate PGM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: PGM raster truncated ({len(raster)} of {width * height} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return RangeImage(arr)
