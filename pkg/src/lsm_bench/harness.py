"""Experiment runner: dataset -> pattern -> spikes -> liquid -> readouts.

A run measures accuracy per readout, wall-clock time per phase, and the
size of the encoded input spike files.  Runs are reproducible: every random
stream is derived from ``(config seed, run index)``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .datasets import CropSpec, EventDataset, FrameDataset, load_idx, load_image_dir, load_nmnist_dir
from .encoding import EncodeConfig, encode_events, encode_frames, write_records
from .liquid import ARCHITECTURES, LiquidConfig, NeuronParams, Reservoir, StateNormalizer
from .patterns import PATTERN_TAGS, GridShape, PatternKind
from .readout import READOUT_KINDS, ReadoutHyper, evaluate, train_readout

PHASES = ("select", "encode", "store", "simulate", "train", "evaluate")
CSV_HEADER = ("pattern", "arch", "readout", "split", "accuracy", "runtime_ms", "input_bytes")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str, timings: Optional[dict] = None):
    """Time a pipeline phase and tag any failure with its name."""
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + 1000.0 * (time.perf_counter() - start)


@dataclass
class DatasetSpec:
    kind: str = "idx"  # idx | nmnist | image_dir
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None
    image_dir: Optional[str] = None
    target_shape: Optional[list] = None
    crop: Optional[list] = None
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pattern: PatternKind = field(default_factory=PatternKind)
    arch: str = "1rc"
    liquid: LiquidConfig = field(default_factory=LiquidConfig)
    neuron: NeuronParams = field(default_factory=NeuronParams)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    test_records: Optional[int] = None
    readouts: list = field(default_factory=lambda: ["sgd"])
    readout_hyper: ReadoutHyper = field(default_factory=ReadoutHyper)
    repeats: int = 1
    report: str = "best"
    cv_folds: int = 0
    seed: int = 0
    normalization: str = "global"
    batch_size: int = 64
    workers: int = 1
    records_dir: Optional[str] = None

    def validate(self, n_train: Optional[int] = None, n_test: Optional[int] = None,
                 shape: Optional[GridShape] = None) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        k = ARCHITECTURES[self.arch]
        if self.liquid.n_neurons % k:
            raise ValueError(f"{self.arch} needs n_neurons divisible by {k}")
        for r in self.readouts:
            if r not in READOUT_KINDS:
                raise ValueError(f"unknown readout {r!r}")
        if not self.readouts:
            raise ValueError("no readouts requested")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.report not in ("best", "mean"):
            raise ValueError("report must be 'best' or 'mean'")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (plain split) or >= 2")
        if self.normalization not in ("global", "per_neuron"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.test_records is not None and self.test_records < 1:
            raise ValueError("test_records must be >= 1")
        if n_train is not None and n_train == 0:
            raise ValueError("no training samples")
        if self.cv_folds:
            if n_train is not None and self.cv_folds > n_train:
                raise ValueError(f"{self.cv_folds} folds but only {n_train} samples")
        elif n_test is not None and n_test == 0:
            raise ValueError("no test samples")
        if shape is not None:
            self.pattern.select(shape)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


_NESTED = {
    "dataset": DatasetSpec,
    "pattern": PatternKind,
    "liquid": LiquidConfig,
    "neuron": NeuronParams,
    "encode": EncodeConfig,
    "readout_hyper": ReadoutHyper,
}


def _build(cls, data: Optional[dict]):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key) if cls is ExperimentConfig else None
        kwargs[key] = _build(sub, value) if sub is not None else value
    return cls(**kwargs)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-path overrides, e.g. ``**{"encode.seed": 3}``."""
    data = cfg.to_dict()
    for path, value in changes.items():
        node = data
        *parents, leaf = path.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise KeyError(path)
        node[leaf] = value
    return ExperimentConfig.from_dict(data)


# --- data -------------------------------------------------------------------

Dataset = Union[FrameDataset, EventDataset]


def load_data(spec: DatasetSpec) -> tuple[Dataset, Optional[Dataset]]:
    if spec.kind == "idx":
        if not (spec.train_images and spec.train_labels):
            raise ValueError("idx datasets need train_images and train_labels")
        train = load_idx(spec.train_images, spec.train_labels, spec.train_limit)
        test = None
        if spec.test_images:
            test = load_idx(spec.test_images, spec.test_labels, spec.test_limit)
        return train, test
    if spec.kind == "nmnist":
        if not spec.train_dir:
            raise ValueError("nmnist datasets need train_dir")
        train = load_nmnist_dir(spec.train_dir, spec.train_limit)
        test = load_nmnist_dir(spec.test_dir, spec.test_limit) if spec.test_dir else None
        return train, test
    if spec.kind == "image_dir":
        if not spec.image_dir:
            raise ValueError("image_dir datasets need image_dir")
        if not spec.target_shape:
            raise ValueError("image_dir datasets need target_shape")
        shape = GridShape(*spec.target_shape)
        crop = CropSpec(*spec.crop) if spec.crop else None
        train = load_image_dir(spec.image_dir, shape, crop, spec.train_limit)
        test = None
        if spec.test_dir:
            test = load_image_dir(spec.test_dir, shape, crop, spec.test_limit)
        return train, test
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


def _encode(data: Dataset, selection, enc: EncodeConfig, n_records: Optional[int]):
    if isinstance(data, FrameDataset):
        return encode_frames(data.images, data.labels, selection, dataclasses.replace(enc, n_records=n_records))
    records = encode_events(data.samples, data.labels, selection, enc.sim_time_ms)
    if n_records is not None:
        records = [records[i % len(records)] for i in range(n_records)]
    return records


def _n_inputs(data: Dataset, selection) -> int:
    return len(selection) * (2 if isinstance(data, EventDataset) else 1)


# --- results ----------------------------------------------------------------

@dataclass
class RunResult:
    run: int
    seeds: dict
    n_inputs: int
    n_features: int
    n_train: int
    n_test: int
    total_spikes: int
    input_bytes: int
    train_bytes: int
    test_bytes: int
    accuracy: dict  # readout -> {"train": acc, "test": acc}
    timings_ms: dict

    @property
    def runtime_ms(self) -> float:
        return self.timings_ms["total"]


@dataclass
class ExperimentResult:
    config: dict
    runs: list
    aggregate: dict
    timings_ms: dict = field(default_factory=dict)
    folds: Optional[list] = None

    def reported(self, readout: str, split: str = "test") -> float:
        return self.aggregate[readout][split][self.config["report"]]

    @property
    def mean_runtime_ms(self) -> float:
        return float(np.mean([r.runtime_ms for r in self.runs]))

    @property
    def mean_input_bytes(self) -> float:
        return float(np.mean([r.input_bytes for r in self.runs]))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentResult":
        runs = [RunResult(**r) for r in data["runs"]]
        return cls(data["config"], runs, data["aggregate"], data.get("timings_ms", {}), data.get("folds"))

    def __eq__(self, other):
        if not isinstance(other, ExperimentResult):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def _aggregate(runs: Sequence[RunResult], readouts: Sequence[str]) -> dict:
    out = {}
    for r in readouts:
        out[r] = {}
        for split in ("train", "test"):
            accs = np.array([run.accuracy[r][split] for run in runs])
            out[r][split] = {"best": float(accs.max()), "mean": float(accs.mean()),
                             "std": float(accs.std())}
    return out


def run_seeds(cfg: ExperimentConfig, run: int) -> dict:
    """Per-run seeds.  Each mixes the component's own seed with the master
    seed and run index, so changing one component seed leaves the others alone."""
    def draw(component_seed, stream):
        return int(np.random.SeedSequence([component_seed, cfg.seed, run, stream]).generate_state(1)[0])
    return {"liquid": draw(cfg.liquid.seed, 0), "encode_train": draw(cfg.encode.seed, 1),
            "encode_test": draw(cfg.encode.seed, 2), "readout": draw(cfg.readout_hyper.seed, 3)}


def default_patterns(cfg: ExperimentConfig) -> tuple:
    # event data is compared on fullscale and chessboard only unless asked otherwise
    if cfg.dataset.kind == "nmnist":
        return ("fullscale", "chessboard")
    return PATTERN_TAGS


def _run_once(cfg: ExperimentConfig, train: Dataset, test: Dataset, run: int,
              n_train_records: Optional[int], n_test_records: Optional[int], workdir: Path) -> RunResult:
    seeds = run_seeds(cfg, run)
    t: dict = {}
    with stage("select", t):
        pattern = cfg.pattern
        if pattern.tag == "scanline":
            pattern = dataclasses.replace(pattern, scanline_seed=pattern.scanline_seed + run)
        selection = pattern.select(train.shape)
        n_inputs = _n_inputs(train, selection)
    with stage("encode", t):
        train_rec = _encode(train, selection, dataclasses.replace(cfg.encode, seed=seeds["encode_train"]),
                            n_train_records)
        test_rec = _encode(test, selection, dataclasses.replace(cfg.encode, seed=seeds["encode_test"]),
                           n_test_records)
    with stage("store", t):
        train_bytes = write_records(train_rec, workdir / f"run{run}_train.lsms")
        test_bytes = write_records(test_rec, workdir / f"run{run}_test.lsms")
    with stage("simulate", t):
        reservoir = Reservoir(cfg.arch, dataclasses.replace(cfg.liquid, seed=seeds["liquid"]), n_inputs)
        train_counts = reservoir.counts(train_rec, cfg.neuron, cfg.batch_size, cfg.workers)
        test_counts = reservoir.counts(test_rec, cfg.neuron, cfg.batch_size, cfg.workers)
        norm = StateNormalizer.fit(train_counts, cfg.normalization)
        x_train, x_test = norm(train_counts), norm(test_counts)
    y_train = np.array([r.label for r in train_rec])
    y_test = np.array([r.label for r in test_rec])
    hyper = dataclasses.replace(cfg.readout_hyper, seed=seeds["readout"])
    models = {}
    with stage("train", t):
        for kind in cfg.readouts:
            models[kind] = train_readout(kind, x_train, y_train, hyper)
    accuracy = {}
    with stage("evaluate", t):
        for kind, model in models.items():
            accuracy[kind] = {"train": evaluate(model, x_train, y_train),
                              "test": evaluate(model, x_test, y_test)}
    t["total"] = sum(t[p] for p in PHASES)
    return RunResult(
        run=run, seeds=seeds, n_inputs=n_inputs, n_features=reservoir.n_features,
        n_train=len(train_rec), n_test=len(test_rec),
        total_spikes=int(sum(len(r) for r in train_rec) + sum(len(r) for r in test_rec)),
        input_bytes=train_bytes + test_bytes, train_bytes=train_bytes, test_bytes=test_bytes,
        accuracy=accuracy, timings_ms=t,
    )


@contextmanager
def _workdir(cfg: ExperimentConfig):
    if cfg.records_dir:
        path = Path(cfg.records_dir)
        path.mkdir(parents=True, exist_ok=True)
        yield path
    else:
        with tempfile.TemporaryDirectory(prefix="lsm-bench-") as tmp:
            yield Path(tmp)


def run_experiment(cfg: ExperimentConfig, data: Optional[tuple] = None) -> ExperimentResult:
    """Run ``cfg.repeats`` independent runs (or a CV sweep when ``cv_folds`` is set).

    ``data`` may carry an already loaded ``(train, test)`` pair.
    """
    timings: dict = {}
    with stage("validate"):
        cfg.validate()
    if data is None:
        with stage("load", timings):
            data = load_data(cfg.dataset)
    train, test = data
    if cfg.cv_folds:
        return run_cv(cfg, (train, test), timings)
    with stage("validate"):
        cfg.validate(len(train), 0 if test is None else len(test), train.shape)
        if test.shape != train.shape:
            raise ValueError("train and test frames differ in shape")
    runs = []
    with _workdir(cfg) as work:
        for r in range(cfg.repeats):
            runs.append(_run_once(cfg, train, test, r, cfg.encode.n_records, cfg.test_records, work))
    return ExperimentResult(cfg.to_dict(), runs, _aggregate(runs, cfg.readouts), timings)


def fold_partition(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle cut into ``folds`` contiguous blocks (sizes differ by at most one)."""
    if folds < 2 or folds > n:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def run_cv(cfg: ExperimentConfig, data: Optional[tuple] = None,
           timings: Optional[dict] = None) -> ExperimentResult:
    """k-fold cross-validation over the training split.

    Training folds are expanded to ``cfg.encode.n_records`` spike records by
    cycling through their images; every held-out sample is encoded once.
    """
    timings = {} if timings is None else timings
    if data is None:
        with stage("load", timings):
            data = load_data(cfg.dataset)
    samples = data[0]
    with stage("validate"):
        if cfg.cv_folds < 2:
            raise ValueError("run_cv needs cv_folds >= 2")
        cfg.validate(len(samples), None, samples.shape)
    folds = fold_partition(len(samples), cfg.cv_folds, cfg.seed)
    runs, table = [], []
    with _workdir(cfg) as work:
        for f, test_idx in enumerate(folds):
            train_idx = np.concatenate([folds[j] for j in range(len(folds)) if j != f])
            run = _run_once(cfg, samples.subset(np.sort(train_idx)), samples.subset(np.sort(test_idx)), f,
                            cfg.encode.n_records, None, work)
            runs.append(run)
            table.append({"fold": f + 1, "test_indices": np.sort(test_idx).tolist(),
                          "accuracy": {k: v["test"] for k, v in run.accuracy.items()}})
    agg = _aggregate(runs, cfg.readouts)
    for kind in cfg.readouts:
        agg[kind]["avg"] = float(np.mean([row["accuracy"][kind] for row in table]))
    return ExperimentResult(cfg.to_dict(), runs, agg, timings, table)


# --- comparisons and output -------------------------------------------------

@dataclass
class Comparison:
    rows: list  # dicts keyed by CSV_HEADER plus runtime_ratio / storage_ratio
    results: dict  # pattern tag -> ExperimentResult

    def row(self, pattern: str, readout: str, split: str = "test") -> dict:
        for r in self.rows:
            if (r["pattern"], r["readout"], r["split"]) == (pattern, readout, split):
                return r
        raise KeyError((pattern, readout, split))


def _as_pattern(p) -> PatternKind:
    if isinstance(p, PatternKind):
        return p
    if isinstance(p, dict):
        return PatternKind(**p)
    return PatternKind(str(p))


def compare_patterns(base: ExperimentConfig, patterns: Optional[Sequence] = None,
                     data: Optional[tuple] = None) -> Comparison:
    """Run ``base`` once per pattern with identical seeds and hyper-parameters.

    Ratios are relative to the fullscale entry when one is in ``patterns``.
    """
    if patterns is None:
        patterns = default_patterns(base)
    if data is None:
        with stage("load"):
            data = load_data(base.dataset)
    results = {}
    for p in patterns:
        kind = _as_pattern(p)
        results[kind.tag] = run_experiment(dataclasses.replace(base, pattern=kind), data)
    ref = results.get("fullscale")
    rows = []
    for tag, res in results.items():
        runtime, nbytes = res.mean_runtime_ms, res.mean_input_bytes
        for kind in base.readouts:
            for split in ("train", "test"):
                agg = res.aggregate[kind][split]
                rows.append({
                    "pattern": tag, "arch": base.arch, "readout": kind, "split": split,
                    "accuracy": agg["avg"] if "avg" in agg else agg[base.report],
                    "runtime_ms": runtime, "input_bytes": nbytes,
                    "runtime_ratio": runtime / ref.mean_runtime_ms if ref else None,
                    "storage_ratio": nbytes / ref.mean_input_bytes if ref else None,
                })
    return Comparison(rows, results)


def _result_rows(result: ExperimentResult) -> list:
    cfg = result.config
    rows = []
    for kind in cfg["readouts"]:
        for split in ("train", "test"):
            rows.append({"pattern": cfg["pattern"]["tag"], "arch": cfg["arch"], "readout": kind,
                         "split": split, "accuracy": result.aggregate[kind][split][cfg["report"]],
                         "runtime_ms": result.mean_runtime_ms, "input_bytes": result.mean_input_bytes})
    return rows


def emit_results(result: Union[ExperimentResult, Comparison, None], path, fmt: str = "json") -> Path:
    """Write JSON (canonical) or the flat CSV table."""
    path = Path(path)
    if fmt == "json":
        if isinstance(result, Comparison):
            payload: Any = {"rows": result.rows,
                            "results": {k: v.to_dict() for k, v in result.results.items()}}
        else:
            payload = result.to_dict()
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        if result is None:
            rows = []
        elif isinstance(result, Comparison):
            rows = result.rows
        else:
            rows = _result_rows(result)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_HEADER, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    return path


def load_result(path) -> ExperimentResult:
    return ExperimentResult.from_dict(json.loads(Path(path).read_text()))


def strip_timings(obj):
    """Drop every ``timings_ms`` entry, recursively (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k != "timings_ms"}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj
