"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io
from .errors import DataError, InvalidArgument, NumericFailure

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_HOLDOUT = 0.2
DEFAULT_STRIDE = 2
LUGRE_INIT = dict(sigma0=1e5, sigma1=100.0, sigma2=500.0, f_c=100.0, f_s=200.0, v_s=0.005)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_meta(out, command: str, args, inputs=(), **extra):
    meta = {"command": command, "seed": _seed(args),
            "inputs": {str(p): io.file_hash(p) for p in inputs}}
    meta.update(extra)
    io.save_report(meta, _meta_path(out))


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return args.global_seed if args.global_seed is not None else 0


def _split_point(n: int, holdout: float) -> int:
    if not 0 <= holdout < 1:
        raise InvalidArgument("holdout must be in [0, 1)")
    return n - int(round(n * holdout))


def cmd_simulate(args):
    from .plant import generate_scenario

    cfg, geom = io.read_scenario_config(args.config)
    if args.seed is not None or args.global_seed is not None:
        cfg.seed = _seed(args)
    trace = generate_scenario(cfg, geom, noisy=not args.clean)
    io.write_dataset(trace.series, args.out)
    _write_meta(args.out, "simulate", args, [args.config], scenario=cfg.to_dict(),
                plant=trace.metadata)


def cmd_preprocess(args):
    from .signals import preprocess

    series = io.read_dataset(args.input)
    frames = preprocess(series)
    io.write_frames(frames, args.out, series.f_true)
    _write_meta(args.out, "preprocess", args, [args.input])


def _read_frames_any(path):
    """Frames from either a raw dataset (preprocessed here) or a frames file."""
    from .signals import preprocess

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header[:4]) == io.DATASET_HEADER:
        series = io.read_dataset(path)
        return preprocess(series), series.f_true
    return io.read_frames(path)


def cmd_label(args):
    from .inverse import StiffnessModel, label_dataset

    frames, f_true = _read_frames_any(args.input)
    geom, spring, eps_v = io.read_geometry_config(args.geom)
    stiff = StiffnessModel.from_geometry(geom, spring_term=spring)
    ds = label_dataset(frames, geom, stiff, eps_v, f_true)
    io.write_labeled(ds, args.out)
    _write_meta(args.out, "label", args, [args.input, args.geom], spring_term=spring,
                eps_v=eps_v, excluded_rows=int(len(ds.excluded)))


def cmd_fit_lugre(args):
    from .lugre import LuGreParams, identify

    ds = io.read_labeled(args.input)
    cut = _split_point(len(ds), args.holdout)
    fr = ds.frames
    dt = fr.dt
    init = LuGreParams(**LUGRE_INIT)
    params, report = identify(fr.v[:cut], fr.a[:cut], ds.f[:cut], ds.mask[:cut], dt, init,
                              budget=args.budget)
    prov = {"seed": _seed(args), "dataset_hash": io.file_hash(args.input),
            "holdout": args.holdout, "budget": args.budget, "init": LUGRE_INIT}
    io.save_model(params, args.out, prov, {"identification": report.to_dict()})
    if report.budget_exhausted:
        print("warning: identification budget exhausted; best point returned", file=sys.stderr)


def cmd_train(args):
    from .forest import ForestConfig
    from .hybrid import configs_from_trial, hpo_search, train_hybrid, trials_to_csv
    from .lstm import LstmConfig

    datasets = [io.read_labeled(p) for p in args.input]
    ranges = [(0, _split_point(len(d), args.holdout)) for d in datasets]
    seed = _seed(args)
    lcfg = LstmConfig(seed=seed, **({"max_epochs": args.epochs} if args.epochs else {}))
    fcfg = ForestConfig(seed=seed)
    hpo = None
    if args.hpo_budget:
        best, trials = hpo_search(datasets, args.hpo_budget, seed=seed, base_lstm=lcfg,
                                  base_forest=fcfg, stride=args.stride, ranges=ranges,
                                  trial_epochs=args.trial_epochs)
        lcfg, fcfg = configs_from_trial(best, lcfg, fcfg)
        hpo = {"budget": args.hpo_budget, "best": best}
        if args.trial_log:
            io._write_text(args.trial_log, trials_to_csv(trials))
    model, log = train_hybrid(datasets, lcfg, fcfg, seed=seed, stride=args.stride,
                              ranges=ranges, stage2_input=args.stage2_input,
                              n_jobs=args.global_threads)
    if args.curve:
        io._write_text(args.curve, log.to_csv())
    prov = {"seed": seed, "dataset_hashes": [io.file_hash(p) for p in args.input],
            "holdout": args.holdout, "stride": args.stride, "lstm_config": lcfg.to_dict(),
            "forest_config": fcfg.to_dict(), "hpo": hpo,
            "train_log": {"best_epoch": log.best_epoch, "stopping_epoch": log.stopping_epoch,
                          "train_mae": log.train_mae, "val_mae": log.val_mae,
                          **{k: v for k, v in log.extra.items() if k != "forest_time"}}}
    io.save_model(model, args.out, prov)


def cmd_estimate(args):
    from .hybrid import StreamingEstimator, estimate_series
    from .lugre import evaluate_series
    from .signals import preprocess

    kind, model, _ = io.load_model(args.model)
    series = io.read_dataset(args.input)
    if kind == "lugre":
        frames = preprocess(series)
        t, f_hat = frames.t, evaluate_series(frames.v, frames.dt, model)
    elif args.stream:
        stream = StreamingEstimator(model)
        t_out, f_out = [], []
        for s in zip(series.t.tolist(), series.x_p.tolist(), series.p1.tolist(),
                     series.p2.tolist()):
            f = stream.push(*s)
            if f is not None:
                t_out.append(s[0])
                f_out.append(f)
        t, f_hat = np.array(t_out), np.array(f_out)
    else:
        frames = preprocess(series)
        feats = np.column_stack([frames.p1, frames.p2, frames.v])
        ends, f_hat = estimate_series(model, feats)
        t = frames.t[ends]
    io.write_estimates(args.out, t, f_hat)
    _write_meta(args.out, "estimate", args, [args.model, args.input], kind=kind,
                stream=bool(args.stream))


def cmd_evaluate(args):
    from .evaluation import compare_models

    tests = args.tests.split(",")
    if len(tests) != 4:
        raise InvalidArgument(f"--tests needs 4 comma-separated files, got {len(tests)}")
    kind, model, _ = io.load_model(args.model)
    lkind, lugre, _ = io.load_model(args.lugre)
    if kind != "hybrid" or lkind != "lugre":
        raise DataError("--model must be a hybrid model and --lugre a LuGre model")
    datasets = {i + 1: io.read_labeled(p) for i, p in enumerate(tests)}
    starts = {i: _split_point(len(d), args.holdout) for i, d in datasets.items()}
    prov = {"seed": _seed(args), "model_hash": io.file_hash(args.model),
            "lugre_hash": io.file_hash(args.lugre),
            "test_hashes": [io.file_hash(p) for p in tests], "holdout": args.holdout}
    report = compare_models(datasets, model, lugre, starts, prov,
                            latency_repeats=args.latency_repeats)
    io.save_report(report.to_dict(include_latency=bool(args.latency_repeats)), args.report)


def cmd_bench(args):
    from .evaluation import benchmark_streaming
    from .lugre import LuGreParams

    kind, model, _ = io.load_model(args.model)
    if kind != "hybrid":
        raise DataError("bench needs a hybrid model")
    lugre = io.load_model(args.lugre)[1] if args.lugre else LuGreParams(**LUGRE_INIT)
    series = io.read_dataset(args.input)
    raw = list(zip(series.t.tolist(), series.x_p.tolist(), series.p1.tolist(),
                   series.p2.tolist()))
    result = benchmark_streaming(model, lugre, raw, args.repeats)
    result["model_hash"] = io.file_hash(args.model)
    io.save_report(result, args.report)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hydrofriction", description=__doc__.splitlines()[0])
    p.add_argument("--seed", dest="global_seed", type=int, default=None,
                   help="seed used by every subcommand unless it sets its own")
    p.add_argument("--threads", dest="global_threads", type=int, default=1,
                   help="worker threads for forest fitting")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="generate a synthetic load test")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--clean", action="store_true", help="skip sensor noise")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", help="filter and differentiate a raw dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("label", help="friction labels by inverse dynamics")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--geom", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("fit-lugre", help="identify LuGre parameters from labelled data")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--holdout", type=float, default=DEFAULT_HOLDOUT)
    s.set_defaults(func=cmd_fit_lugre)

    s = sub.add_parser("train", help="train the hybrid estimator")
    s.add_argument("--in", dest="input", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--hpo-budget", type=int, default=0)
    s.add_argument("--trial-epochs", type=int, default=30)
    s.add_argument("--trial-log")
    s.add_argument("--curve", help="per-epoch MAE CSV")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    s.add_argument("--holdout", type=float, default=DEFAULT_HOLDOUT)
    s.add_argument("--stage2-input", choices=("features", "prediction"), default="features")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("estimate", help="estimate friction for a raw dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stream", action="store_true", help="sample-by-sample path")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("evaluate", help="compare hybrid and LuGre on tests 1-4")
    s.add_argument("--model", required=True)
    s.add_argument("--lugre", required=True)
    s.add_argument("--tests", required=True, help="four labelled files, comma separated")
    s.add_argument("--report", required=True)
    s.add_argument("--holdout", type=float, default=DEFAULT_HOLDOUT)
    s.add_argument("--latency-repeats", type=int, default=0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="streaming latency benchmark")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--repeats", type=int, default=1000)
    s.add_argument("--report", required=True)
    s.add_argument("--lugre")
    s.set_defaults(func=cmd_bench)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        args.func(args)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
