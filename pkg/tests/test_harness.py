import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lsm_bench.harness import (
    CSV_HEADER,
    PHASES,
    DatasetSpec,
    ExperimentConfig,
    StageError,
    compare_patterns,
    emit_results,
    fold_partition,
    load_data,
    load_result,
    override,
    run_cv,
    run_experiment,
    strip_timings,
)
from lsm_bench.liquid import LiquidConfig
from lsm_bench.patterns import PatternKind

from conftest import small_config


class TestConfig:
    def test_json_round_trip(self, tmp_path, tiny_config):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(tiny_config.to_dict()))
        assert ExperimentConfig.from_json(path) == tiny_config

    def test_partial_json_uses_defaults(self):
        cfg = ExperimentConfig.from_dict({"arch": "5rc", "liquid": {"n_neurons": 100}})
        assert cfg.liquid.n_neurons == 100 and cfg.liquid.eir == 0.8
        assert cfg.readouts == ["sgd"]

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            ExperimentConfig.from_dict({"liquid": {"neurons": 10}})

    def test_override(self, tiny_config):
        cfg = override(tiny_config, **{"encode.sim_time_ms": 10.0, "pattern.tag": "patch"})
        assert cfg.encode.sim_time_ms == 10.0 and cfg.pattern.tag == "patch"
        with pytest.raises(KeyError):
            override(tiny_config, **{"encode.nope": 1})

    @pytest.mark.parametrize("changes", [
        {"arch": "5rc", "liquid": LiquidConfig(n_neurons=52)},
        {"readouts": ["knn"]},
        {"readouts": []},
        {"repeats": 0},
        {"report": "median"},
        {"cv_folds": 1},
        {"normalization": "zscore"},
    ])
    def test_invalid(self, tiny_config, changes):
        with pytest.raises(ValueError):
            dataclasses.replace(tiny_config, **changes).validate()

    def test_zero_test_samples_is_error(self, tiny_config):
        cfg = override(tiny_config, **{"dataset.test_limit": 0})
        with pytest.raises(StageError) as err:
            run_experiment(cfg)
        assert err.value.stage == "validate"

    def test_missing_file_tagged_load(self, tiny_config, tmp_path):
        cfg = override(tiny_config, **{"dataset.train_images": str(tmp_path / "missing")})
        with pytest.raises(StageError) as err:
            run_experiment(cfg)
        assert err.value.stage == "load"
        assert "[load]" in str(err.value)


@pytest.fixture(scope="module")
def result(mnist_paths):
    return run_experiment(small_config(mnist_paths, repeats=2))


class TestRunExperiment:
    def test_shape_of_result(self, result):
        assert len(result.runs) == 2
        run = result.runs[0]
        assert run.n_inputs == 784 and run.n_features == 40
        assert run.n_train == 60 and run.n_test == 30
        assert set(run.accuracy) == {"sgd", "svm1", "svm2"}
        for acc in run.accuracy.values():
            assert 0.0 <= acc["train"] <= 1.0 and 0.0 <= acc["test"] <= 1.0
        assert set(PHASES) <= set(run.timings_ms)
        assert run.timings_ms["total"] == pytest.approx(sum(run.timings_ms[p] for p in PHASES))
        assert "load" in result.timings_ms

    def test_storage_accounting(self, result):
        # two files: header 10 bytes, 6 per record, 8 per spike
        for run in result.runs:
            assert run.input_bytes == 2 * 10 + 6 * (run.n_train + run.n_test) + 8 * run.total_spikes
            assert run.input_bytes == run.train_bytes + run.test_bytes

    def test_aggregates(self, result):
        for kind in ("sgd", "svm1", "svm2"):
            accs = [r.accuracy[kind]["test"] for r in result.runs]
            agg = result.aggregate[kind]["test"]
            assert agg["best"] == max(accs)
            assert agg["mean"] == pytest.approx(np.mean(accs))
            assert agg["std"] == pytest.approx(np.std(accs))
        assert result.reported("sgd") == result.aggregate["sgd"]["test"]["best"]

    def test_repeats_use_distinct_seeds(self, result):
        assert result.runs[0].seeds != result.runs[1].seeds

    def test_deterministic_modulo_timing(self, mnist_paths, result, tmp_path):
        again = run_experiment(small_config(mnist_paths, repeats=2))
        emit_results(result, tmp_path / "a.json")
        emit_results(again, tmp_path / "b.json")
        a = strip_timings(json.loads((tmp_path / "a.json").read_text()))
        b = strip_timings(json.loads((tmp_path / "b.json").read_text()))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_json_round_trip(self, result, tmp_path):
        emit_results(result, tmp_path / "r.json")
        assert load_result(tmp_path / "r.json") == result

    def test_csv(self, result, tmp_path):
        emit_results(result, tmp_path / "r.csv", "csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert tuple(rows[0]) == CSV_HEADER
        assert len(rows) == 1 + 3 * 2
        assert {r[3] for r in rows[1:]} == {"train", "test"}

    def test_empty_csv_is_header_only(self, tmp_path):
        emit_results(None, tmp_path / "e.csv", "csv")
        assert (tmp_path / "e.csv").read_text().strip() == ",".join(CSV_HEADER)


def test_record_counts_and_pattern(mnist_paths):
    cfg = small_config(mnist_paths, pattern=PatternKind("chessboard"), readouts=["sgd"], test_records=45)
    cfg = override(cfg, **{"encode.n_records": 90})
    run = run_experiment(cfg).runs[0]
    assert run.n_inputs == 196
    assert run.n_train == 90 and run.n_test == 45


def test_5rc(mnist_paths):
    cfg = small_config(mnist_paths, arch="5rc", readouts=["svm2"])
    assert run_experiment(cfg).runs[0].n_features == 40


def test_records_dir_keeps_files(mnist_paths, tmp_path):
    cfg = small_config(mnist_paths, readouts=["sgd"], records_dir=str(tmp_path / "rec"))
    run = run_experiment(cfg).runs[0]
    files = sorted(p.name for p in (tmp_path / "rec").iterdir())
    assert files == ["run0_test.lsms", "run0_train.lsms"]
    assert (tmp_path / "rec" / "run0_train.lsms").stat().st_size == run.train_bytes


class TestEvents:
    def test_event_dataset_doubles_inputs(self, nmnist_dir):
        cfg = ExperimentConfig(
            dataset=DatasetSpec(kind="nmnist", train_dir=str(nmnist_dir), test_dir=str(nmnist_dir)),
            pattern=PatternKind("chessboard"), liquid=LiquidConfig.mnist(100, seed=1),
            readouts=["sgd"])
        run = run_experiment(cfg).runs[0]
        assert run.n_inputs == 2 * 17 * 17
        assert run.n_train == 18 and run.total_spikes > 0

    def test_limit_is_class_balanced(self, nmnist_dir):
        train, _ = load_data(DatasetSpec(kind="nmnist", train_dir=str(nmnist_dir), train_limit=6))
        assert sorted(train.labels.tolist()) == [0, 0, 1, 1, 2, 2]


class TestCrossValidation:
    @given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 100))
    def test_fold_partition(self, n, k, seed):
        if k > n:
            with pytest.raises(ValueError):
                fold_partition(n, k, seed)
            return
        folds = fold_partition(n, k, seed)
        assert len(folds) == k
        flat = np.concatenate(folds)
        assert sorted(flat.tolist()) == list(range(n))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_cv_on_image_dir(self, pgm_dir):
        cfg = ExperimentConfig(
            dataset=DatasetSpec(kind="image_dir", image_dir=str(pgm_dir), target_shape=[12, 10]),
            liquid=LiquidConfig.jaffe(1), cv_folds=4, readouts=["sgd", "svm2"],
            seed=3)
        cfg = override(cfg, **{"encode.n_records": 40})
        res = run_cv(cfg)
        assert len(res.folds) == 4 and len(res.runs) == 4
        expected = fold_partition(16, 4, 3)
        for row, idx in zip(res.folds, expected):
            assert row["test_indices"] == sorted(idx.tolist())
        for run in res.runs:
            # training portion is cycled up to the requested count, held-out fold is not
            assert run.n_train == 40 and run.n_test == 4
        for kind in ("sgd", "svm2"):
            assert res.aggregate[kind]["avg"] == pytest.approx(
                np.mean([row["accuracy"][kind] for row in res.folds]))
        # two well separated classes
        assert res.aggregate["svm2"]["avg"] >= 0.75

    def test_run_experiment_dispatches_to_cv(self, pgm_dir):
        cfg = ExperimentConfig(
            dataset=DatasetSpec(kind="image_dir", image_dir=str(pgm_dir), target_shape=[12, 10]),
            liquid=LiquidConfig(n_neurons=40), cv_folds=2)
        assert len(run_experiment(cfg).folds) == 2


def test_compare_patterns(mnist_paths, tmp_path):
    cfg = small_config(mnist_paths, readouts=["sgd"])
    comp = compare_patterns(cfg, ["fullscale", "chessboard", "patch"])
    assert len(comp.rows) == 3 * 2
    fs = comp.row("fullscale", "sgd")
    cb = comp.row("chessboard", "sgd")
    assert fs["runtime_ratio"] == 1.0 and fs["storage_ratio"] == 1.0
    assert cb["storage_ratio"] < 0.5
    emit_results(comp, tmp_path / "c.csv", "csv")
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert [r["pattern"] for r in rows[::2]] == ["fullscale", "chessboard", "patch"]


def test_component_seeds_are_independent(tiny_config):
    from lsm_bench.harness import run_seeds
    base = run_seeds(tiny_config, 0)
    moved = run_seeds(override(tiny_config, **{"encode.seed": 9}), 0)
    assert moved["liquid"] == base["liquid"] and moved["readout"] == base["readout"]
    assert moved["encode_train"] != base["encode_train"]
    assert run_seeds(tiny_config, 1)["liquid"] != base["liquid"]


def test_event_compare_defaults_to_fullscale_and_chessboard(nmnist_dir):
    cfg = ExperimentConfig(dataset=DatasetSpec(kind="nmnist", train_dir=str(nmnist_dir), test_dir=str(nmnist_dir),
                                               train_limit=9, test_limit=6),
                           liquid=LiquidConfig(n_neurons=30))
    comp = compare_patterns(cfg)
    assert list(comp.results) == ["fullscale", "chessboard"]


@pytest.mark.parametrize("name", ["mnist_desk.json", "faces_cv.json"])
def test_shipped_configs_validate(name):
    from pathlib import Path
    cfg = ExperimentConfig.from_json(Path(__file__).parent.parent / "configs" / name)
    cfg.validate()
