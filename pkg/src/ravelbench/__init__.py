"""Benchmarking harness for range-image raveling severity classifiers.

Quantifies how controlled data variations (training-set size, illumination
shifts, spatial shifts) affect classifier accuracy, and analyzes multi-year
prediction consistency at fixed pavement locations.
"""

from .rangeimage import (
    HeightGrid,
    ImageStats,
    LabeledSample,
    RangeImage,
    SampleMeta,
    SeverityLabel,
    SynthesisParams,
    from_height_grid,
    load_image,
    read_manifest,
    save_image,
    stats,
    synthesize,
    write_manifest,
)
from .augment import (
    AugmentationSpec,
    CropRegion,
    ExpansionPolicy,
    FlipAxes,
    RegionTag,
    RelightDelta,
    compound,
    crop,
    expand_dataset,
    flip,
    relight,
)
from .features import FEATURE_DIM, Normalizer, apply_normalizer, extract, fit_normalizer
from .forest import ForestModel, ForestParams, load_model, predict, save_model, train
from .bench import (
    BenchCorpus,
    ExperimentCell,
    PredictionSet,
    TestConfig,
    TrainConfig,
    accuracy,
    build_matrix,
    import_predictions,
    prepare_corpus,
    render_report,
    run_cell,
    run_matrix,
)
from .consistency import (
    DriftReport,
    MomentRelightPolicy,
    ViolationReport,
    YearSeries,
    align_series,
    drift_report,
    moment_relight,
    violations,
)

__version__ = "0.1.0"
