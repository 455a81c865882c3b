from collections import Counter

import numpy as np
import pytest

from ravelbench import augment as aug
from ravelbench.augment import (
    AugmentationSpec,
    CropBoundsError,
    CropRegion,
    ExpansionPolicy,
    FlipAxes,
    RegionTag,
    RelightDelta,
)
from ravelbench.rangeimage import RangeImage

from conftest import LEVELS, constant_image, make_sample, random_image


class TestCrop:
    def test_full_image_is_identity(self, rng):
        img = random_image(rng, 9, 6)
        region = CropRegion(0, 0, 9, 6)
        assert aug.crop(img, region) == img

    def test_crop_dimension_formula(self):
        # 85% per linear dimension of the native sensor frame
        w = aug.crop_length(1019, 0.85)
        h = aug.crop_length(1524, 0.85)
        assert (w, h) == (866, 1295)
        img = RangeImage(np.zeros((1524, 1019), dtype=np.uint8))
        region = aug.region_for_tag(RegionTag.TOP_LEFT, img.width, img.height, w, h)
        out = aug.crop(img, region)
        assert (out.width, out.height) == (866, 1295)

    def test_center_crop_picks_middle_block(self):
        img = RangeImage(np.arange(16, dtype=np.uint8).reshape(4, 4))
        region = aug.region_for_tag(RegionTag.CENTER, 4, 4, 2, 2)
        out = aug.crop(img, region)
        assert out.pixels.tolist() == [[5, 6], [9, 10]]

    def test_out_of_bounds_reports_coordinates(self):
        img = constant_image(0, 8, 8)
        with pytest.raises(CropBoundsError, match="x=5.*w=4"):
            aug.crop(img, CropRegion(5, 0, 4, 4))

    def test_region_coordinates(self):
        w, h, cw, ch = 10, 8, 6, 5
        expected = {
            RegionTag.TOP_LEFT: (0, 0),
            RegionTag.TOP_RIGHT: (4, 0),
            RegionTag.BOTTOM_LEFT: (0, 3),
            RegionTag.BOTTOM_RIGHT: (4, 3),
            RegionTag.CENTER: (2, 1),
        }
        for tag, (ox, oy) in expected.items():
            region = aug.region_for_tag(tag, w, h, cw, ch)
            assert (region.origin_x, region.origin_y) == (ox, oy)

    def test_nested_crops_compose(self, rng):
        for _ in range(20):
            img = random_image(rng, 30, 24)
            outer = CropRegion(3, 2, 20, 18)
            inner = CropRegion(4, 5, 10, 9)
            combined = CropRegion(outer.origin_x + inner.origin_x,
                                  outer.origin_y + inner.origin_y,
                                  inner.crop_width, inner.crop_height)
            assert aug.crop(aug.crop(img, outer), inner) == aug.crop(img, combined)


class TestFlip:
    def test_involution_per_axis(self, rng):
        for axes in (FlipAxes(vertical=True), FlipAxes(horizontal=True),
                     FlipAxes(vertical=True, horizontal=True)):
            img = random_image(rng)
            assert aug.flip(aug.flip(img, axes), axes) == img

    def test_horizontal_formula(self):
        img = RangeImage(np.array([[1, 2], [3, 4]], dtype=np.uint8))
        out = aug.flip(img, FlipAxes(horizontal=True))
        assert out.pixels.tolist() == [[2, 1], [4, 3]]

    def test_both_axes_formula(self):
        img = RangeImage(np.array([[1, 2], [3, 4]], dtype=np.uint8))
        out = aug.flip(img, FlipAxes(vertical=True, horizontal=True))
        assert out.pixels.tolist() == [[4, 3], [2, 1]]


class TestRelight:
    def test_clamps_at_white(self):
        img = constant_image(253)
        out = aug.relight(img, RelightDelta(5))
        assert np.all(out.pixels == 255)

    def test_plain_shift(self):
        img = constant_image(100)
        out = aug.relight(img, RelightDelta(-5))
        assert np.all(out.pixels == 95)

    def test_zero_delta_is_identity(self, rng):
        img = random_image(rng)
        assert aug.relight(img, RelightDelta(0)) == img

    def test_guard_rejects_large_delta(self):
        with pytest.raises(ValueError):
            RelightDelta(33)
        with pytest.raises(ValueError):
            RelightDelta(-40)

    def test_round_trip_off_clamp_boundary(self, rng):
        for _ in range(20):
            d = int(rng.integers(1, 17))
            # keep pixels inside [d, 255-d] so no clamping can occur
            arr = rng.integers(d, 256 - d, size=(8, 8)).astype(np.uint8)
            img = RangeImage(arr)
            back = aug.relight(aug.relight(img, RelightDelta(d)), RelightDelta(-d))
            assert back == img


class TestCompound:
    def test_empty_spec_is_identity(self, rng):
        img = random_image(rng)
        assert aug.compound(img, AugmentationSpec()) == img

    def test_crop_only_equals_crop(self, rng):
        img = random_image(rng, 12, 10)
        region = CropRegion(2, 1, 7, 8)
        spec = AugmentationSpec(crop=region)
        assert aug.compound(img, spec) == aug.crop(img, region)

    def test_full_spec_on_constant_image(self):
        img = constant_image(100, 10, 8)
        spec = AugmentationSpec(
            crop=CropRegion(1, 2, 5, 4),
            flip=FlipAxes(vertical=True, horizontal=True),
            relight=RelightDelta(5),
        )
        out = aug.compound(img, spec)
        assert (out.width, out.height) == (5, 4)
        assert np.all(out.pixels == 105)


class TestExpandDataset:
    def _originals(self, count, width=64, height=64, seed=0):
        rng = np.random.default_rng(seed)
        return [
            make_sample(
                f"orig{i:05d}", LEVELS[i % 4],
                image=RangeImage(rng.integers(0, 256, size=(height, width), dtype=np.uint8)),
            )
            for i in range(count)
        ]

    def test_factor_five_counts(self):
        policy = ExpansionPolicy(seed=3)
        for n_in, n_out in ((1883, 9415), (270, 1350), (539, 2695)):
            samples = self._originals(n_in, width=16, height=16)
            out = aug.expand_dataset(samples, policy)
            assert len(out) == n_out

    def test_class_histogram_scales_exactly(self):
        samples = self._originals(97)
        out = aug.expand_dataset(samples, ExpansionPolicy(seed=1))
        before = Counter(s.label for s in samples)
        after = Counter(s.label for s in out)
        assert after == {label: 5 * n for label, n in before.items()}

    def test_sample_ids_carry_region_suffix(self):
        samples = self._originals(2)
        out = aug.expand_dataset(samples, ExpansionPolicy(seed=0))
        suffixes = {s.meta.sample_id.rsplit("__", 1)[1] for s in out}
        assert suffixes == {"topleft", "topright", "bottomleft", "bottomright", "center"}
        assert all(s.meta.sample_id.startswith("orig") for s in out)

    def test_meta_and_label_inherited(self):
        samples = self._originals(4)
        out = aug.expand_dataset(samples, ExpansionPolicy(seed=0))
        for i, s in enumerate(out):
            src = samples[i // 5]
            assert s.label is src.label
            assert s.meta.year == src.meta.year
            assert s.meta.location_key == src.meta.location_key

    def test_expansion_is_deterministic(self):
        samples = self._originals(12)
        policy = ExpansionPolicy(seed=42, relight_enabled=True)
        a = aug.expand_dataset(samples, policy)
        b = aug.expand_dataset(samples, policy)
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            assert sa == sb and sa.image == sb.image

    def test_different_seed_changes_draws(self):
        samples = self._originals(30)
        a = aug.expand_dataset(samples, ExpansionPolicy(seed=1, relight_enabled=True))
        b = aug.expand_dataset(samples, ExpansionPolicy(seed=2, relight_enabled=True))
        assert any(sa.path != sb.path for sa, sb in zip(a, b))

    def test_crop_dimensions_follow_fraction(self):
        samples = self._originals(1, width=40, height=20)
        out = aug.expand_dataset(samples, ExpansionPolicy(crop_fraction=0.5, flip_probability=0.0))
        assert all(s.image.width == 20 and s.image.height == 10 for s in out)

    def test_filenames_encode_variations(self):
        samples = self._originals(40)
        out = aug.expand_dataset(samples, ExpansionPolicy(seed=9, relight_enabled=True))
        flipped = [s for s in out if "__f" in s.path]
        relit = [s for s in out if "__r" in s.path]
        assert flipped and relit
        assert all(s.path.endswith(".png") for s in out)
        assert any("__r+5" in s.path for s in relit) or any("__r-5" in s.path for s in relit)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ExpansionPolicy(crop_fraction=0.0)
        with pytest.raises(ValueError):
            ExpansionPolicy(regions=())
        with pytest.raises(ValueError):
            ExpansionPolicy(regions=(RegionTag.CENTER, RegionTag.CENTER))
        with pytest.raises(ValueError):
            ExpansionPolicy(flip_probability=1.5)

    def test_write_expanded_round_trip(self, tmp_path):
        from ravelbench.rangeimage import load_sample_image, read_manifest

        samples = self._originals(3, width=20, height=18)
        out = aug.expand_dataset(samples, ExpansionPolicy(seed=5))
        manifest_path = aug.write_expanded(out, tmp_path / "exp")
        back = read_manifest(manifest_path)
        assert back == [s for s in out]
        for orig, loaded in zip(out, back):
            assert load_sample_image(loaded, tmp_path / "exp") == orig.image
