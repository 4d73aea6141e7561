"""``lsm-bench`` command line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import harness
from .datasets import prepare_mnist_subset
from .encoding import write_records
from .harness import ExperimentConfig, StageError, emit_results, stage
from .patterns import PATTERN_TAGS, GridShape, PatternKind


def _load_config(args) -> ExperimentConfig:
    with stage("config"):
        cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
        changes = {}
        if getattr(args, "pattern", None):
            changes["pattern.tag"] = args.pattern
        if getattr(args, "arch", None):
            changes["arch"] = args.arch
        if getattr(args, "readout", None):
            changes["readouts"] = args.readout
        if getattr(args, "seed", None) is not None:
            changes["seed"] = args.seed
        if getattr(args, "repeats", None) is not None:
            changes["repeats"] = args.repeats
        if getattr(args, "cv", None) is not None:
            changes["cv_folds"] = args.cv
        if getattr(args, "workers", None) is not None:
            changes["workers"] = args.workers
        if getattr(args, "sim_time_ms", None) is not None:
            changes["encode.sim_time_ms"] = args.sim_time_ms
        if getattr(args, "max_rate_hz", None) is not None:
            changes["encode.max_rate_hz"] = args.max_rate_hz
        if getattr(args, "encode_seed", None) is not None:
            changes["encode.seed"] = args.encode_seed
        if getattr(args, "records", None) is not None:
            changes["encode.n_records"] = args.records
        cfg = harness.override(cfg, **changes)
        cfg.validate()
    return cfg


def _emit(result, out, fmt):
    if out:
        emit_results(result, out, fmt or ("csv" if str(out).endswith(".csv") else "json"))


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = harness.run_experiment(cfg)
    for kind in cfg.readouts:
        agg = result.aggregate[kind]
        line = f"{cfg.pattern.tag} {cfg.arch} {kind}: test {agg['test'][cfg.report]:.4f} ({cfg.report})"
        if "avg" in agg:
            line += f", {cfg.cv_folds}-fold avg {agg['avg']:.4f}"
        print(line)
    print(f"runtime {result.mean_runtime_ms:.0f} ms/run, input {result.mean_input_bytes:.0f} bytes/run")
    _emit(result, args.out, args.format)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    patterns = args.patterns.split(",") if args.patterns else None
    comp = harness.compare_patterns(cfg, patterns)
    print("pattern     readout split accuracy runtime_ms input_bytes runtime_ratio storage_ratio")
    for r in comp.rows:
        ratio = lambda v: "-" if v is None else f"{v:.3f}"
        print(f"{r['pattern']:<11} {r['readout']:<7} {r['split']:<5} {r['accuracy']:.4f}   "
              f"{r['runtime_ms']:>10.0f} {r['input_bytes']:>11.0f} {ratio(r['runtime_ratio']):>13} "
              f"{ratio(r['storage_ratio']):>13}")
    _emit(comp, args.out, args.format)
    return 0


def cmd_encode(args) -> int:
    cfg = _load_config(args)
    with stage("load"):
        train, test = harness.load_data(cfg.dataset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = harness.run_seeds(cfg, 0)
    report = {"pattern": cfg.pattern.tag}
    with stage("select"):
        selection = cfg.pattern.select(train.shape)
        report["n_inputs"] = harness._n_inputs(train, selection)
    for name, data, n, seed in (("train", train, cfg.encode.n_records, seeds["encode_train"]),
                                ("test", test, cfg.test_records, seeds["encode_test"])):
        if data is None:
            continue
        with stage("encode"):
            recs = harness._encode(data, selection, dataclasses.replace(cfg.encode, seed=seed), n)
        with stage("store"):
            nbytes = write_records(recs, out_dir / f"{name}.lsms")
        report[name] = {"records": len(recs), "spikes": int(sum(len(r) for r in recs)), "bytes": nbytes}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_dump_selection(args) -> int:
    with stage("select"):
        sel = PatternKind(args.pattern, scanline_count=args.lines, scanline_seed=args.seed).select(
            GridShape(args.height, args.width))
    if args.out:
        sel.dump(args.out)
    else:
        sys.stdout.write("".join(f"{i}\n" for i in sel.pixel_ids))
    return 0


def cmd_prepare_mnist(args) -> int:
    with stage("prepare"):
        paths = prepare_mnist_subset(args.out, n_test=args.n_test, seed=args.seed)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsm-bench", description="Liquid state machine input-pattern benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_args(sp, single_pattern=True):
        sp.add_argument("--config", help="experiment JSON file")
        if single_pattern:
            sp.add_argument("--pattern", choices=PATTERN_TAGS)
        sp.add_argument("--arch", choices=("1rc", "5rc"))
        sp.add_argument("--readout", nargs="+", choices=("sgd", "svm1", "svm2"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--cv", type=int, help="number of cross-validation folds")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--sim-time-ms", type=float)
        sp.add_argument("--max-rate-hz", type=float)
        sp.add_argument("--encode-seed", type=int)
        sp.add_argument("--records", type=int, help="training spike records to generate")

    run = sub.add_parser("run", help="run one experiment")
    experiment_args(run)
    run.add_argument("--out")
    run.add_argument("--format", choices=("json", "csv"))
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run one experiment per pattern")
    experiment_args(cmp_, single_pattern=False)
    cmp_.add_argument("--patterns", help="comma-separated tags (default: all four; fullscale,chessboard for nmnist)")
    cmp_.add_argument("--out")
    cmp_.add_argument("--format", choices=("json", "csv"))
    cmp_.set_defaults(func=cmd_compare)

    enc = sub.add_parser("encode", help="encode a dataset to spike files and report their size")
    experiment_args(enc)
    enc.add_argument("--out-dir", required=True)
    enc.set_defaults(func=cmd_encode)

    dump = sub.add_parser("dump-selection", help="print the pixel ids of a pattern")
    dump.add_argument("--pattern", choices=PATTERN_TAGS, required=True)
    dump.add_argument("--height", type=int, default=28)
    dump.add_argument("--width", type=int, default=28)
    dump.add_argument("--lines", type=int, help="scanline count")
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--out")
    dump.set_defaults(func=cmd_dump_selection)

    prep = sub.add_parser("prepare-mnist", help="write the bundled MNIST subset as IDX files")
    prep.add_argument("--out", required=True)
    prep.add_argument("--n-test", type=int, default=1000)
    prep.add_argument("--seed", type=int, default=0)
    prep.set_defaults(func=cmd_prepare_mnist)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as e:
        print(f"lsm-bench: error {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
