import csv
from collections import Counter

import numpy as np
import pytest

from ravelbench import bench
from ravelbench import synthesize
from ravelbench.bench import (
    BenchCorpus,
    ConfigurationError,
    CoverageError,
    ExperimentCell,
    PredictionFormatError,
    PredictionSet,
    Spatial,
    TrainConfig,
)
from ravelbench.bench import TestConfig as EvalConfig
from ravelbench.forest import ForestParams
from ravelbench.rangeimage import SeverityLabel, SynthesisParams

from conftest import LEVELS, constant_image, make_sample

ROW_LABELS = [
    "top-left corner (5%)",
    "top-left corner (10%)",
    "top-left corner (20%)",
    "random (5%)",
    "random (10%)",
    "random (20%)",
    "all",
    "all+flip",
    "all+relight",
    "all+flip+relight",
]
COL_LABELS = ["all", "all+flip", "all+relight", "all+flip+relight"]

# accuracy table used by the report tests (canonical 10x4 layout)
REFERENCE_ACCURACIES = [
    [0.803, 0.790, 0.775, 0.764],
    [0.814, 0.806, 0.770, 0.760],
    [0.831, 0.822, 0.768, 0.756],
    [0.810, 0.822, 0.792, 0.760],
    [0.837, 0.809, 0.778, 0.775],
    [0.850, 0.842, 0.762, 0.799],
    [0.877, 0.864, 0.813, 0.797],
    [0.859, 0.852, 0.781, 0.779],
    [0.863, 0.855, 0.858, 0.854],
    [0.869, 0.859, 0.861, 0.856],
]


class TestMatrix:
    def test_forty_pairs_in_canonical_order(self):
        pairs = bench.build_matrix()
        assert len(pairs) == 40
        assert [t.label for t in bench.canonical_train_configs()] == ROW_LABELS
        assert [t.label for t in bench.canonical_test_configs()] == COL_LABELS

    def test_first_and_last_pairs(self):
        pairs = bench.build_matrix()
        assert pairs[0][0].label == "top-left corner (5%)"
        assert pairs[0][1].label == "all"
        assert pairs[-1][0].label == "all+flip+relight"
        assert pairs[-1][1].label == "all+flip+relight"

    def test_matrix_is_stable(self):
        assert bench.build_matrix() == bench.build_matrix()


class TestAccuracy:
    def _truth(self, labels):
        return [make_sample(f"t{i}", label) for i, label in enumerate(labels)]

    def test_all_correct(self):
        truth = self._truth([SeverityLabel.L0, SeverityLabel.L2])
        preds = PredictionSet({"t0": SeverityLabel.L0, "t1": SeverityLabel.L2}, "m")
        assert bench.accuracy(preds, truth) == 1.0

    def test_three_of_four(self):
        truth = self._truth([SeverityLabel.L0, SeverityLabel.L1,
                             SeverityLabel.L2, SeverityLabel.L3])
        preds = PredictionSet({"t0": SeverityLabel.L0, "t1": SeverityLabel.L1,
                               "t2": SeverityLabel.L2, "t3": SeverityLabel.L0}, "m")
        assert bench.accuracy(preds, truth) == 0.75

    def test_matches_confusion_matrix_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 60))
            truth_labels = [SeverityLabel(int(v)) for v in rng.integers(0, 4, size=n)]
            pred_labels = [SeverityLabel(int(v)) for v in rng.integers(0, 4, size=n)]
            truth = self._truth(truth_labels)
            preds = PredictionSet({f"t{i}": pred_labels[i] for i in range(n)}, "m")
            confusion = np.zeros((4, 4), dtype=int)
            for a, b in zip(truth_labels, pred_labels):
                confusion[int(a), int(b)] += 1
            oracle = np.trace(confusion) / confusion.sum()
            assert abs(bench.accuracy(preds, truth) - oracle) < 1e-12

    def test_missing_predictions_listed(self):
        truth = self._truth([SeverityLabel.L0, SeverityLabel.L1])
        preds = PredictionSet({"t0": SeverityLabel.L0}, "m")
        with pytest.raises(CoverageError, match="t1"):
            bench.accuracy(preds, truth)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            bench.accuracy(PredictionSet({}, "m"), [])


class TestImportPredictions:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("sample_id,label\na,L0\nb,L3\n")
        preds = bench.import_predictions(path, "resnet")
        assert preds.model_name == "resnet"
        assert preds.entries == {"a": SeverityLabel.L0, "b": SeverityLabel.L3}

    def test_large_file(self, tmp_path):
        path = tmp_path / "preds.csv"
        lines = ["sample_id,label"] + [f"s{i},L{i % 4}" for i in range(2695)]
        path.write_text("\n".join(lines) + "\n")
        preds = bench.import_predictions(path, "resnet")
        assert len(preds.entries) == 2695

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("sample_id,label\na,L0\na,L1\n")
        with pytest.raises(PredictionFormatError, match="'a'"):
            bench.import_predictions(path, "m")

    def test_unknown_label_names_row(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("sample_id,label\na,L0\nb,L7\n")
        with pytest.raises(PredictionFormatError, match="row 3"):
            bench.import_predictions(path, "m")

    def test_empty_file_gives_empty_set(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("")
        preds = bench.import_predictions(path, "m")
        assert preds.entries == {}
        with pytest.raises(ValueError):
            bench.accuracy(preds, [make_sample("a")])

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("id,prediction\na,L0\n")
        with pytest.raises(PredictionFormatError):
            bench.import_predictions(path, "m")


def _cells_from_table(table):
    cells = []
    for cfg, row in zip(bench.canonical_train_configs(), table):
        for tcfg, acc in zip(bench.canonical_test_configs(), row):
            cells.append(ExperimentCell(train=cfg, test=tcfg, accuracy=acc,
                                        sample_count=100, seed=0))
    return cells


class TestRenderReport:
    def test_structure_and_leaders(self, tmp_path):
        cells = _cells_from_table(REFERENCE_ACCURACIES)
        summary = bench.render_report(cells, tmp_path)
        with open(summary.results_csv, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["train_config", "test_config", "accuracy", "n", "seed"]
        assert len(rows) == 41
        assert len(summary.column_leaders) == 4
        best, second = summary.column_leaders["all"]
        assert best == ("all",)
        assert second == ("all+flip+relight",)
        svg = summary.heatmap_svg.read_text()
        assert svg.startswith("<svg")
        assert "top-left corner (5%)" in svg
        assert 'font-weight="bold"' in svg

    def test_tie_at_best_marks_both_and_no_second(self, tmp_path):
        table = [[0.5] + row[1:] for row in REFERENCE_ACCURACIES[:2]]
        cells = _cells_from_table(REFERENCE_ACCURACIES[:2])
        cells = [ExperimentCell(c.train, c.test, 0.5 if c.test.label == "all" else c.accuracy,
                                c.sample_count, c.seed) for c in cells]
        summary = bench.render_report(cells, tmp_path)
        best, second = summary.column_leaders["all"]
        assert set(best) == {"top-left corner (5%)", "top-left corner (10%)"}
        assert second == ()

    def test_empty_cells_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            bench.render_report([], tmp_path)

    def test_csv_bytes_are_stable(self, tmp_path):
        cells = _cells_from_table(REFERENCE_ACCURACIES)
        s1 = bench.render_report(cells, tmp_path / "r1")
        s2 = bench.render_report(cells, tmp_path / "r2")
        assert s1.results_csv.read_bytes() == s2.results_csv.read_bytes()
        assert s1.heatmap_svg.read_bytes() == s2.heatmap_svg.read_bytes()


def _tiny_separable_corpus():
    """Constant-intensity images, one intensity per class: trivially separable."""
    intensities = {SeverityLabel.L0: 40, SeverityLabel.L1: 90,
                   SeverityLabel.L2: 140, SeverityLabel.L3: 190}
    originals = []
    for i in range(24):
        label = LEVELS[i % 4]
        img = constant_image(intensities[label], 24, 24)
        originals.append(make_sample(f"c{i:03d}", label, image=img))
    return bench.prepare_corpus(originals, originals, seed=0)


class TestRunCell:
    def test_identical_separable_corpus_scores_one(self):
        corpus = _tiny_separable_corpus()
        # constant images separate on a handful of dimensions; consider all of
        # them at every node so each tree finds the split
        params = ForestParams(tree_count=5, features_per_split=606)
        cell = bench.run_cell(TrainConfig(Spatial.ALL_REGIONS, 1.0), EvalConfig(),
                              corpus, params, run_seed=0)
        assert cell.accuracy == 1.0
        assert cell.sample_count == len(corpus.test)

    def test_cells_are_reproducible_and_order_independent(self):
        corpus = _tiny_separable_corpus()
        params = ForestParams(tree_count=3)
        tr1 = TrainConfig(Spatial.FIXED_TOP_LEFT, 0.20)
        tr2 = TrainConfig(Spatial.RANDOM_REGION, 0.20)
        te = EvalConfig(flip_enabled=True)
        a1 = bench.run_cell(tr1, te, corpus, params, run_seed=7).accuracy
        b1 = bench.run_cell(tr2, te, corpus, params, run_seed=7).accuracy
        # reversed order, fresh calls: identical results
        b2 = bench.run_cell(tr2, te, corpus, params, run_seed=7).accuracy
        a2 = bench.run_cell(tr1, te, corpus, params, run_seed=7).accuracy
        assert (a1, b1) == (a2, b2)

    def test_top_left_twenty_percent_uses_whole_pool(self):
        corpus = _tiny_separable_corpus()
        pool = [s for s in corpus.train if bench.region_of(s) == "topleft"]
        subset = bench._select_training(corpus, TrainConfig(Spatial.FIXED_TOP_LEFT, 0.20), 5)
        assert sorted(s.meta.sample_id for s in subset) == sorted(s.meta.sample_id for s in pool)

    def test_fraction_subsets_are_nested(self):
        corpus = _tiny_separable_corpus()
        ids = {}
        for fraction in (0.05, 0.10, 0.20, 1.0):
            subset = bench._select_training(
                corpus, TrainConfig(Spatial.ALL_REGIONS, fraction), run_seed=3)
            ids[fraction] = {s.meta.sample_id for s in subset}
        assert ids[0.05] <= ids[0.10] <= ids[0.20] <= ids[1.0]
        assert len(ids[1.0]) == len(corpus.train)

    def test_stratification_preserves_distribution(self):
        corpus = _tiny_separable_corpus()
        subset = bench._select_training(corpus, TrainConfig(Spatial.RANDOM_REGION, 0.20), 1)
        counts = Counter(s.label for s in subset)
        assert set(counts.values()) == {6}  # 20% of 30 per class

    def test_unexpanded_corpus_rejected(self):
        sample = make_sample("plain", image=constant_image(10, 24, 24))
        corpus = BenchCorpus(train=(sample,), test=(sample,))
        with pytest.raises(ConfigurationError):
            bench.run_cell(TrainConfig(Spatial.FIXED_TOP_LEFT, 0.20), EvalConfig(),
                           corpus, ForestParams(tree_count=2), run_seed=0)

    def test_run_matrix_parallel_matches_serial(self):
        corpus = _tiny_separable_corpus()
        params = ForestParams(tree_count=2)
        serial = bench.run_matrix(corpus, params, seed=1, jobs=1)
        threaded = bench.run_matrix(corpus, params, seed=1, jobs=4)
        assert [c.accuracy for c in serial] == [c.accuracy for c in threaded]
        assert len(serial) == 40


@pytest.fixture(scope="module")
def variation_corpus():
    params = SynthesisParams(width=64, height=64)
    train = [synthesize(params, LEVELS[i % 4], seed=2000 + i) for i in range(160)]
    test = [synthesize(params, LEVELS[i % 4], seed=72000 + i) for i in range(48)]
    return bench.prepare_corpus(train, test, seed=11)


class TestCrossVariation:
    def test_spatially_diverse_training_beats_fixed_region_under_flips(self, variation_corpus):
        """Mean over 5 seeds: random-region training >= fixed top-left on flipped tests."""
        params = ForestParams()
        te = EvalConfig(flip_enabled=True)
        random_accs, fixed_accs = [], []
        for seed in range(5):
            random_accs.append(bench.run_cell(
                TrainConfig(Spatial.RANDOM_REGION, 0.05), te, variation_corpus,
                params, run_seed=seed).accuracy)
            fixed_accs.append(bench.run_cell(
                TrainConfig(Spatial.FIXED_TOP_LEFT, 0.05), te, variation_corpus,
                params, run_seed=seed).accuracy)
        assert np.mean(random_accs) >= np.mean(fixed_accs)
