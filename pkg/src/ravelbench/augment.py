"""Label-preserving augmentation: crop (spatial shift), flip, relight, expansion.

The three operators compose as relight, then crop, then flip; a stage is
skipped when its component is absent. Dataset expansion crops every image at
the five canonical regions, multiplying the corpus size by the region count
while keeping the class distribution exactly proportional.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .rangeimage import (
    LabeledSample,
    RangeImage,
    load_sample_image,
    save_image,
    write_manifest,
)
from .seeds import rng_for

RELIGHT_GUARD = 32
DEFAULT_CROP_FRACTION = 0.85
DEFAULT_RELIGHT_MAGNITUDE = 5


class CropBoundsError(ValueError):
    """Crop region extends outside the image bounds."""


class RegionTag(Enum):
    TOP_LEFT = "topleft"
    TOP_RIGHT = "topright"
    BOTTOM_LEFT = "bottomleft"
    BOTTOM_RIGHT = "bottomright"
    CENTER = "center"
    CUSTOM = "custom"


DEFAULT_REGIONS = (
    RegionTag.TOP_LEFT,
    RegionTag.TOP_RIGHT,
    RegionTag.BOTTOM_LEFT,
    RegionTag.BOTTOM_RIGHT,
    RegionTag.CENTER,
)


@dataclass(frozen=True)
class CropRegion:
    """A crop window: origin offsets plus output dimensions."""

    origin_x: int
    origin_y: int
    crop_width: int
    crop_height: int
    tag: RegionTag = RegionTag.CUSTOM

    def __post_init__(self):
        if self.crop_width < 1 or self.crop_height < 1:
            raise ValueError(f"crop dimensions must be >= 1, got {self.crop_width}x{self.crop_height}")
        if self.origin_x < 0 or self.origin_y < 0:
            raise ValueError(f"crop origin must be non-negative, got ({self.origin_x}, {self.origin_y})")


@dataclass(frozen=True)
class FlipAxes:
    vertical: bool = False
    horizontal: bool = False


@dataclass(frozen=True)
class RelightDelta:
    """Uniform intensity shift; bounded so labels stay valid."""

    delta: int

    def __post_init__(self):
        if abs(self.delta) > RELIGHT_GUARD:
            raise ValueError(f"relight delta {self.delta} exceeds the ±{RELIGHT_GUARD} guard")


@dataclass(frozen=True)
class AugmentationSpec:
    """Optional crop/flip/relight components; absent components are skipped."""

    crop: CropRegion | None = None
    flip: FlipAxes | None = None
    relight: RelightDelta | None = None


@dataclass(frozen=True)
class ExpansionPolicy:
    """How to expand a corpus: crop regions plus per-sample flip/relight draws."""

    crop_fraction: float = DEFAULT_CROP_FRACTION
    regions: tuple[RegionTag, ...] = DEFAULT_REGIONS
    flip_probability: float = 0.5
    relight_enabled: bool = False
    relight_magnitude: int = DEFAULT_RELIGHT_MAGNITUDE
    relight_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError(f"crop_fraction must lie in (0, 1], got {self.crop_fraction}")
        if not self.regions:
            raise ValueError("regions must be non-empty")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("regions must be distinct")
        for name in ("flip_probability", "relight_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if abs(self.relight_magnitude) > RELIGHT_GUARD:
            raise ValueError(f"relight_magnitude exceeds the ±{RELIGHT_GUARD} guard")


def crop_length(dim: int, fraction: float) -> int:
    """Cropped size of one dimension: round(fraction * dim), nearest-even ties."""
    return max(int(round(fraction * dim)), 1)


def region_for_tag(tag: RegionTag, width: int, height: int,
                   crop_width: int, crop_height: int) -> CropRegion:
    """Place a crop window of the given size at one of the five named regions."""
    if crop_width > width or crop_height > height:
        raise CropBoundsError(
            f"crop {crop_width}x{crop_height} larger than image {width}x{height}"
        )
    dx = width - crop_width
    dy = height - crop_height
    origins = {
        RegionTag.TOP_LEFT: (0, 0),
        RegionTag.TOP_RIGHT: (dx, 0),
        RegionTag.BOTTOM_LEFT: (0, dy),
        RegionTag.BOTTOM_RIGHT: (dx, dy),
        RegionTag.CENTER: (dx // 2, dy // 2),
    }
    if tag not in origins:
        raise ValueError(f"region tag {tag} needs explicit origin coordinates")
    ox, oy = origins[tag]
    return CropRegion(origin_x=ox, origin_y=oy, crop_width=crop_width,
                      crop_height=crop_height, tag=tag)


def crop(image: RangeImage, region: CropRegion) -> RangeImage:
    if (region.origin_x + region.crop_width > image.width
            or region.origin_y + region.crop_height > image.height):
        raise CropBoundsError(
            f"region x={region.origin_x} y={region.origin_y} "
            f"w={region.crop_width} h={region.crop_height} "
            f"exceeds image {image.width}x{image.height}"
        )
    window = image.pixels[region.origin_y:region.origin_y + region.crop_height,
                          region.origin_x:region.origin_x + region.crop_width]
    return RangeImage(window)


def flip(image: RangeImage, axes: FlipAxes) -> RangeImage:
    arr = image.pixels
    if axes.vertical:
        arr = arr[::-1, :]
    if axes.horizontal:
        arr = arr[:, ::-1]
    return RangeImage(arr)


def relight(image: RangeImage, delta: RelightDelta) -> RangeImage:
    shifted = image.pixels.astype(np.int16) + delta.delta
    return RangeImage(np.clip(shifted, 0, 255).astype(np.uint8))


def compound(image: RangeImage, spec: AugmentationSpec) -> RangeImage:
    """Apply relight, then crop, then flip; absent components are identities."""
    out = image
    if spec.relight is not None:
        out = relight(out, spec.relight)
    if spec.crop is not None:
        out = crop(out, spec.crop)
    if spec.flip is not None:
        out = flip(out, spec.flip)
    return out


def draw_variation(rng: np.random.Generator, *, flip_probability: float,
                   relight_enabled: bool, relight_probability: float,
                   relight_magnitude: int) -> tuple[FlipAxes | None, RelightDelta | None]:
    """Draw the per-sample flip/relight components from one stream.

    Draw order is pinned (flip gate, axis, relight gate, sign) so streams are
    reproducible regardless of which components end up enabled.
    """
    axes = None
    if rng.random() < flip_probability:
        if rng.random() < 0.5:
            axes = FlipAxes(vertical=True)
        else:
            axes = FlipAxes(horizontal=True)
    delta = None
    if relight_enabled and rng.random() < relight_probability:
        sign = 1 if rng.random() < 0.5 else -1
        delta = RelightDelta(sign * relight_magnitude)
    return axes, delta


def expansion_filename(sample_id: str, axes: FlipAxes | None, delta: RelightDelta | None) -> str:
    name = sample_id
    if axes is not None:
        code = ("v" if axes.vertical else "") + ("h" if axes.horizontal else "")
        name += f"__f{code}"
    if delta is not None:
        name += f"__r{delta.delta:+d}"
    return name + ".png"


def expand_dataset(samples, policy: ExpansionPolicy, root=".") -> list[LabeledSample]:
    """Expand samples by cropping each at every policy region.

    Output size is exactly ``len(regions) * len(samples)``; labels and meta are
    inherited (sample_id suffixed with the region tag), so per-class counts
    scale by the region count. Flip/relight draws come from a counter-based
    stream keyed by (seed, sample_id, region), making expansion deterministic
    and order-independent.
    """
    out: list[LabeledSample] = []
    for sample in samples:
        src = load_sample_image(sample, root)
        cw = crop_length(src.width, policy.crop_fraction)
        ch = crop_length(src.height, policy.crop_fraction)
        for tag in policy.regions:
            try:
                region = region_for_tag(tag, src.width, src.height, cw, ch)
            except CropBoundsError as exc:
                raise CropBoundsError(f"sample {sample.meta.sample_id!r}: {exc}") from None
            rng = rng_for(policy.seed, sample.meta.sample_id, tag.value)
            axes, delta = draw_variation(
                rng,
                flip_probability=policy.flip_probability,
                relight_enabled=policy.relight_enabled,
                relight_probability=policy.relight_probability,
                relight_magnitude=policy.relight_magnitude,
            )
            result = compound(src, AugmentationSpec(crop=region, flip=axes, relight=delta))
            new_id = f"{sample.meta.sample_id}__{tag.value}"
            out.append(LabeledSample(
                path=expansion_filename(new_id, axes, delta),
                label=sample.label,
                meta=replace(sample.meta, sample_id=new_id),
                image=result,
            ))
    return out


def write_expanded(samples, out_dir) -> Path:
    """Write expanded images plus their manifest into out_dir; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        if sample.image is None:
            raise ValueError(f"sample {sample.meta.sample_id!r} has no in-memory image")
        save_image(sample.image, out_dir / sample.path)
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(samples, manifest_path)
    return manifest_path
