"""``covest`` command-line interface.

Exit codes: 0 on success, 1 for data errors (missing, corrupt or mismatched
files and invalid values), 2 for usage errors.  ``COVEST_THREADS`` caps the
worker threads of every command.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

from .errors import CovestError, FormatError, InputError
from .gp import CovParams, GridGeometry, edf, lambda_for_edf, simulate
from .grids import read_grid_csv, scaling_stats, test_grid, training_grid, write_grid_csv


def thread_budget(requested: int | None = None) -> int:
    """Threads to use: ``requested`` (default 1), capped by ``COVEST_THREADS``."""
    cap = os.environ.get("COVEST_THREADS")
    if not cap:
        return requested or 1
    try:
        cap_n = max(1, int(cap))
    except ValueError:
        raise InputError(f"COVEST_THREADS must be an integer, got {cap!r}") from None
    return min(requested, cap_n) if requested else cap_n


def _csv_header(path) -> list[str]:
    try:
        with open(path, newline="") as fh:
            return next(csv.reader(fh), [])
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def load_input(path):
    """Read a raster (binary or CSV) or a variogram CSV.

    Returns ``("fields", Raster)`` or ``("variograms", array (R, lags))``.
    """
    from .raster import read_raster
    from .variogram import read_variogram_csv

    if str(path).lower().endswith(".csv"):
        header = _csv_header(path)
        if header and all(h.startswith("h") for h in header):
            return "variograms", read_variogram_csv(path)
    return "fields", read_raster(path)


def _load_grid(spec: str, geom: GridGeometry, kind: str = "training"):
    if spec == "training":
        return training_grid(geom)
    if spec == "test":
        return test_grid(geom)
    return read_grid_csv(spec, geom, kind)


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return n


# ---- commands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .raster import write_raster

    geom = GridGeometry(args.height or args.size, args.width or args.size)
    if args.edf is not None:
        if not 0 < args.edf <= geom.n:
            raise InputError(f"--edf must lie in (0, {geom.n}]")
        lam = lambda_for_edf(args.theta, args.edf, geom)
    else:
        lam = args.lam
    e = edf(args.theta, lam, geom)
    y = simulate(geom, CovParams(args.theta, lam, args.sigma2), args.replicates, args.seed)
    write_raster(y, args.out)
    print(f"theta={args.theta!r} lambda={lam!r} edf={e!r}")
    return 0


def cmd_grid(args) -> int:
    geom = GridGeometry(args.size, args.size)
    if args.kind == "training":
        g = training_grid(geom, args.n_theta, args.n_edf)
    else:
        g = test_grid(geom, args.n_configs, seed=args.seed)
    write_grid_csv(g, args.out)
    print(f"{len(g)} entries")
    return 0


def cmd_ml_fit(args) -> int:
    from .ml import ml_fit, ml_fit_batch, write_records_csv

    kind, data = load_input(args.input)
    if kind != "fields":
        raise InputError(f"{args.input}: ml-fit needs fields (a COVR1 raster), not variograms")
    stack = data.to_stack()
    grid = _load_grid(args.grid, stack.geometry)
    if args.each:
        recs = ml_fit_batch([stack.replicate(r) for r in range(stack.replicates)], grid, thread_budget(args.threads))
    else:
        recs = [ml_fit(stack, grid)]
    write_records_csv(recs, args.out)
    for r in recs:
        print(f"{r.method} loglambda={r.loglambda_hat!r} theta={r.theta_hat!r} clipped={int(r.clipped)}")
    return 0


def cmd_predict(args) -> int:
    from .ml import write_records_csv
    from .nn import load_weights
    from .train import predict, predict_variograms

    store = load_weights(args.weights)
    kind, data = load_input(args.input)
    arch = store.metadata.get("architecture", store.spec.name)
    if kind == "variograms":
        if arch == "NF":
            raise InputError(f"{args.input}: NF weights ({args.weights}) need fields, got a variogram file")
        rows = [data[i : i + 1] for i in range(data.shape[0])] if (args.each or arch == "NV") else [data]
        recs = [predict_variograms(store, v) for v in rows]
    else:
        stack = data.to_stack()
        items = [stack.replicate(r) for r in range(stack.replicates)] if args.each else [stack]
        recs = [predict(store, s) for s in items]
    write_records_csv(recs, args.out)
    for r in recs:
        print(f"{r.method} loglambda={r.loglambda_hat!r} theta={r.theta_hat!r} clipped={int(r.clipped)}")
    return 0


def cmd_train(args) -> int:
    from .train import read_config, train

    cfg = read_config(args.config)
    for k in ("out", "report", "checkpoint", "epochs", "seed"):
        v = getattr(args, k)
        if v is not None:
            setattr(cfg, k, v)
    cfg.threads = thread_budget(args.threads or cfg.threads)
    if not cfg.out:
        raise InputError(f"{args.config}: no 'out' weights path given (config key or --out)")

    def progress(epoch, mae):
        if not args.quiet:
            print(f"epoch {epoch} mae {mae:.6f}", flush=True)

    store, report = train(cfg, resume=args.resume, progress=progress)
    print(f"wrote {cfg.out} ({store.total_parameters} parameters, {report.wall_time:.1f} s)")
    return 0


def cmd_variogram(args) -> int:
    from .variogram import lag_table, variogram_stack, write_lag_table_csv, write_variogram_csv

    kind, data = load_input(args.input)
    if kind != "fields":
        raise InputError(f"{args.input}: expected a COVR1 raster")
    stack = data.to_stack()
    lt = lag_table(stack.geometry)
    write_variogram_csv(variogram_stack(stack, lt, args.method), lt, args.out)
    if args.lags:
        write_lag_table_csv(lt, args.lags)
    print(f"{stack.replicates} variograms over {len(lt)} lags")
    return 0


def _estimators(args, train_grid, replicates: int):
    from .evaluate import ml_estimator, nn_estimator
    from .gp import FactorCache
    from .ml import method_name
    from .nn import load_weights

    methods = {}
    if args.ml:
        cache = None if getattr(args, "ml_no_cache", False) else FactorCache(train_grid.geometry)
        methods[method_name(replicates)] = ml_estimator(train_grid, cache=cache, threads=thread_budget(args.threads))
    for w in args.weights or []:
        store = load_weights(w)
        arch = store.metadata.get("architecture", store.spec.name)
        name = {"NF": "NF30" if replicates == 30 else "NF", "NV": "NV" if replicates == 1 else "NV-mean"}.get(arch, arch)
        methods[name] = nn_estimator(store)
    if not methods:
        raise InputError("no estimators selected (use --ml and/or --weights)")
    return methods


def cmd_evaluate(args) -> int:
    from .evaluate import evaluate, make_test_set, write_summary_csv

    geom = GridGeometry(args.size, args.size)
    tg = test_grid(geom, args.n_configs, seed=args.grid_seed) if args.test_grid == "test" else read_grid_csv(
        args.test_grid, geom, "test"
    )
    trg = _load_grid(args.train_grid, geom)
    ts = make_test_set(tg, args.fields_per_config, args.replicates, args.seed, thread_budget(args.threads))
    summaries, raw = evaluate(_estimators(args, trg, args.replicates), ts, scaling_stats(trg))
    raw.write_csv(f"{args.out}_raw.csv")
    raw.write_long_csv(f"{args.out}_long.csv")
    write_summary_csv(summaries, f"{args.out}_summary.csv")
    for m, s in summaries.items():
        th = [s.get("theta", r) for r in ("lower", "upper")]
        print(
            f"{m}: scaled MAE {s.scaled_mae:.4f}; theta bias {th[0].bias:+.3f}/{th[1].bias:+.3f} "
            f"sd {th[0].sd:.3f}/{th[1].sd:.3f}; failed {s.failed}"
        )
    return 0


def cmd_benchmark(args) -> int:
    from .evaluate import benchmark, make_test_set, write_timing_csv

    geom = GridGeometry(args.size, args.size)
    trg = _load_grid(args.train_grid, geom)
    tg = test_grid(geom, args.samples, seed=args.seed)
    ts = make_test_set(tg, 1, args.replicates, args.seed)
    res = benchmark(
        _estimators(args, trg, args.replicates),
        ts.fields,
        args.warmup,
        args.repetitions,
        thread_budget(args.threads),
        per_sample=True,
    )
    write_timing_csv(res, args.out)
    for r in res.values():
        print(f"{r.method}: {r.per_sample * 1e3:.3f} ms/sample over {r.samples} samples")
    names = list(res)
    if len(names) >= 2:
        base = res[names[0]]
        for n in names[1:]:
            print(f"speedup {base.method} / {n}: {base.per_sample / res[n].per_sample:.1f}")
    return 0


def cmd_window_scan(args) -> int:
    from .nn import load_weights
    from .raster import read_raster
    from .scan import window_scan

    r = read_raster(args.input)
    method = args.method.lower()
    grid = weights = None
    if method.startswith("ml"):
        grid = _load_grid(args.grid, GridGeometry(args.window, args.window))
    else:
        if not args.weights:
            raise InputError(f"--method {method} needs --weights")
        weights = load_weights(args.weights)
    res = window_scan(
        r,
        args.window,
        method,
        weights=weights,
        grid=grid,
        standardize_locations=args.standardize,
        stride=args.stride,
        threads=thread_budget(args.threads),
    )
    paths = res.write(args.out)
    s = res.summary()
    print(f"{s['estimates']} estimates ({s['rows']}x{s['cols']}), {s['clipped']} clipped, {s['flagged']} flagged")
    print("wrote " + ", ".join(paths))
    return 0


def cmd_make_raster(args) -> int:
    from .raster import two_regime_raster, write_raster, write_raster_csv

    r = two_regime_raster(
        args.height, args.width, args.replicates, args.theta_left, args.theta_right, args.edf, args.window, args.seed
    )
    (write_raster_csv if args.out.lower().endswith(".csv") else write_raster)(r, args.out)
    print(f"{r.replicates} x {r.height} x {r.width} raster")
    return 0


# ---- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covest", description="Covariance-parameter estimation for gridded Gaussian fields.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate replicate fields to a raster file")
    s.add_argument("--theta", type=float, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--edf", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--sigma2", type=float, default=1.0)
    s.add_argument("--replicates", type=_positive, default=1)
    s.add_argument("--size", type=_positive, default=16)
    s.add_argument("--height", type=_positive)
    s.add_argument("--width", type=_positive)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("grid", help="write a training or test parameter grid as CSV")
    s.add_argument("--kind", choices=("training", "test"), default="training")
    s.add_argument("--size", type=_positive, default=16)
    s.add_argument("--n-theta", type=_positive, default=201)
    s.add_argument("--n-edf", type=_positive, default=200)
    s.add_argument("--n-configs", type=_positive, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("ml-fit", help="grid-search maximum likelihood on a raster")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--grid", default="training", help="'training' or a grid CSV")
    s.add_argument("--each", action="store_true", help="fit every replicate separately")
    s.add_argument("--threads", type=_positive)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ml_fit)

    s = sub.add_parser("predict", help="network estimate for a raster or variogram file")
    s.add_argument("--weights", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--each", action="store_true", help="estimate every replicate separately")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("train", help="train NF, NV or NV30 weights from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume")
    s.add_argument("--out")
    s.add_argument("--report")
    s.add_argument("--checkpoint")
    s.add_argument("--epochs", type=_positive)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("variogram", help="exact-lag empirical variograms of every replicate")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--method", choices=("fft", "direct"), default="fft")
    s.add_argument("--lags", help="also write the lag table (distance, pair_count)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_variogram)

    for name, helptext in (("evaluate", "simulation study on the test grid"), ("benchmark", "per-sample timings")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--ml", action="store_true", help="include grid-search ML")
        s.add_argument("--weights", nargs="*", help="trained weight files to include")
        s.add_argument("--train-grid", default="training", help="ML search grid: 'training' or a CSV")
        s.add_argument("--replicates", type=_positive, default=1)
        s.add_argument("--size", type=_positive, default=16)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=_positive)
        s.add_argument("--out", required=True)
        if name == "evaluate":
            s.add_argument("--test-grid", default="test", help="'test' or a grid CSV")
            s.add_argument("--n-configs", type=_positive, default=2000)
            s.add_argument("--grid-seed", type=int, default=0)
            s.add_argument("--fields-per-config", type=_positive, default=5)
            s.set_defaults(func=cmd_evaluate)
        else:
            s.add_argument("--samples", type=_positive, default=20)
            s.add_argument("--warmup", type=int, default=1)
            s.add_argument("--repetitions", type=_positive, default=3)
            s.add_argument("--ml-no-cache", action="store_true", help="factorise the grid inside every ML fit")
            s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("window-scan", help="moving-window estimates over a raster")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--window", type=_positive, default=16)
    s.add_argument("--method", choices=("ml", "ml30", "nv", "nv30", "nf", "nf30"), default="nv30")
    s.add_argument("--weights")
    s.add_argument("--grid", default="training")
    s.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--stride", type=_positive, default=1)
    s.add_argument("--threads", type=_positive)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_window_scan)

    s = sub.add_parser("make-raster", help="synthetic raster with two range regimes (left/right)")
    s.add_argument("--height", type=_positive, default=128)
    s.add_argument("--width", type=_positive, default=128)
    s.add_argument("--replicates", type=_positive, default=30)
    s.add_argument("--theta-left", type=float, default=4.0)
    s.add_argument("--theta-right", type=float, default=16.0)
    s.add_argument("--edf", type=float, default=128.0)
    s.add_argument("--window", type=_positive, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_raster)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.edf is None and not (args.lam >= 0 and math.isfinite(args.lam)):
        parser.error("--lambda must be finite and >= 0")
    try:
        return args.func(args)
    except (CovestError, OSError) as exc:
        print(f"covest {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
