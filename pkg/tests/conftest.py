import numpy as np
import pytest

from ravelbench.rangeimage import LabeledSample, RangeImage, SampleMeta, SeverityLabel

LEVELS = list(SeverityLabel)


def random_image(rng, width=None, height=None) -> RangeImage:
    w = width if width is not None else int(rng.integers(1, 40))
    h = height if height is not None else int(rng.integers(1, 40))
    return RangeImage(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


def make_sample(sample_id, label=SeverityLabel.L0, image=None, year=0,
                route="test", location_key=None, run_id="run0",
                path=None) -> LabeledSample:
    meta = SampleMeta(sample_id=sample_id, year=year, route=route,
                      location_key=location_key or sample_id, run_id=run_id)
    return LabeledSample(path=path or f"{sample_id}.png", label=label,
                         meta=meta, image=image)


def constant_image(value, width=20, height=20) -> RangeImage:
    return RangeImage(np.full((height, width), value, dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
