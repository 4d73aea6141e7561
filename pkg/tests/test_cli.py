import csv
import json

from lsm_bench.cli import main
from lsm_bench.encoding import read_records
from lsm_bench.patterns import GridShape, PixelSelection, select_chessboard

from conftest import small_config


def write_config(tmp_path, mnist_paths, **kw):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(small_config(mnist_paths, **kw).to_dict()))
    return str(path)


def test_dump_selection_stdout(capsys):
    assert main(["dump-selection", "--pattern", "chessboard"]) == 0
    ids = [int(x) for x in capsys.readouterr().out.split()]
    assert ids == select_chessboard(GridShape(28, 28)).pixel_ids.tolist()


def test_dump_selection_file(tmp_path):
    out = tmp_path / "sel.txt"
    assert main(["dump-selection", "--pattern", "scanline", "--lines", "3", "--seed", "5", "--out", str(out)]) == 0
    sel = PixelSelection.load(out, GridShape(28, 28))
    assert 0 < len(sel) < 28 * 3 * 2


def test_run_writes_json_and_csv(tmp_path, mnist_paths, capsys):
    cfg = write_config(tmp_path, mnist_paths)
    out = tmp_path / "r.json"
    assert main(["run", "--config", cfg, "--pattern", "patch", "--readout", "sgd", "--seed", "4",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["config"]["pattern"]["tag"] == "patch"
    assert data["config"]["seed"] == 4 and data["config"]["readouts"] == ["sgd"]
    assert "patch 1rc sgd" in capsys.readouterr().out
    assert main(["run", "--config", cfg, "--readout", "svm1", "--out", str(tmp_path / "r.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert {r["readout"] for r in rows} == {"svm1"}


def test_run_cv(tmp_path, pgm_dir, capsys):
    cfg = tmp_path / "cv.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "image_dir", "image_dir": str(pgm_dir), "target_shape": [12, 10]},
        "liquid": {"n_neurons": 40},
        "encode": {"n_records": 20},
    }))
    assert main(["run", "--config", str(cfg), "--cv", "4"]) == 0
    assert "4-fold avg" in capsys.readouterr().out


def test_compare(tmp_path, mnist_paths, capsys):
    cfg = write_config(tmp_path, mnist_paths, readouts=["sgd"])
    out = tmp_path / "c.csv"
    assert main(["compare", "--config", cfg, "--patterns", "fullscale,chessboard", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["pattern"] for r in rows] == ["fullscale", "fullscale", "chessboard", "chessboard"]
    assert "storage_ratio" in capsys.readouterr().out


def test_encode(tmp_path, mnist_paths, capsys):
    cfg = write_config(tmp_path, mnist_paths)
    assert main(["encode", "--config", cfg, "--pattern", "chessboard", "--out-dir", str(tmp_path / "enc")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_inputs"] == 196
    assert report["train"]["records"] == 60
    recs = read_records(tmp_path / "enc" / "train.lsms", 40.0)
    assert sum(len(r) for r in recs) == report["train"]["spikes"]
    assert (tmp_path / "enc" / "train.lsms").stat().st_size == report["train"]["bytes"]


def test_prepare_mnist(tmp_path, capsys):
    assert main(["prepare-mnist", "--out", str(tmp_path / "m"), "--n-test", "500"]) == 0
    paths = json.loads(capsys.readouterr().out)
    assert set(paths) == {"train_images", "train_labels", "test_images", "test_labels"}


def test_failures_exit_nonzero_with_stage(tmp_path, mnist_paths, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"liquid": {"neurons": 3}}))
    assert main(["run", "--config", str(bad)]) != 0
    assert "[config]" in capsys.readouterr().err

    cfg = write_config(tmp_path, mnist_paths)
    data = json.loads(open(cfg).read())
    data["dataset"]["train_images"] = str(tmp_path / "nope")
    bad.write_text(json.dumps(data))
    assert main(["run", "--config", str(bad)]) != 0
    assert "[load]" in capsys.readouterr().err

    data["dataset"]["train_images"] = mnist_paths["train_images"]
    data["dataset"]["test_limit"] = 0
    bad.write_text(json.dumps(data))
    assert main(["run", "--config", str(bad)]) != 0
    assert "[validate]" in capsys.readouterr().err


def test_encode_seed_flag(tmp_path, mnist_paths, capsys):
    cfg = write_config(tmp_path, mnist_paths)
    spikes = []
    for seed in ("1", "1", "2"):
        assert main(["encode", "--config", cfg, "--encode-seed", seed, "--max-rate-hz", "50",
                     "--out-dir", str(tmp_path / "e")]) == 0
        spikes.append(json.loads(capsys.readouterr().out)["train"]["spikes"])
    assert spikes[0] == spikes[1] != spikes[2]
