"""Command-line harness: ``jointard {synth,fit,predict,eval,sweep,diagnose}``.

Exit codes: 0 success, 1 fit did not converge under ``--strict``, 2 input
or configuration error, 3 numerical failure.

File formats
------------
Datasets are UTF-8 CSV with header ``y,x0,...,x{d-1}``. ``truth.json`` holds
``theta``, ``support``, ``outliers``, ``sigma`` and ``multiplier``. JSON
outputs use sorted keys and 17 significant digits for every float.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .datagen import SyntheticSpec, gen_sparse_linear
from ._linalg import row_quad
from .errors import InputError, NumericalError
from .evaluation import RelevanceScores, diagnostics, ess, predictive_nll, rmse, topk_recall
from .model import ArdState, Dataset, Heteroscedastic, Homoscedastic
from .optimizers import FitConfig, fit
from .pipeline import Model, RunConfig, run, score

log = logging.getLogger("jointard")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
NA = "NA"


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            parts = []
            for v in seq:
                sub = []
                _emit(v, indent, level + 1, sub)
                parts.append("".join(sub))
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(seq):
            out.append(pad)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(seq) - 1 else "\n")
        out.append(end + "]")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif obj is None:
        out.append("null")
    else:
        out.append(json.dumps(str(obj)))


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    out = []
    _emit(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def write_dataset(path: Path, data: Dataset) -> None:
    cols = ["y"] + [f"x{j}" for j in range(data.d)]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for yi, row in zip(data.y, data.X):
        buf.write(",".join(_fmt_float(float(v)) for v in (yi, *row)) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_dataset(path) -> Dataset:
    """Read a ``y,x0,...`` CSV. Every column is parsed as a float."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "y" or len(header) < 2:
        raise InputError(f"{path}: header must start with 'y' followed by feature columns")
    body = [r for r in rows[1:] if r]
    if not body:
        raise InputError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})") from None
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise InputError(f"{path}: ragged rows (expected {len(header)} columns)")
    return Dataset(arr[:, 1:], arr[:, 0])


def write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt_cell(v) for v in r) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    return str(v)


# ----------------------------------------------------------------------------
# config
# ----------------------------------------------------------------------------


def load_schema(name: str) -> dict:
    text = resources.files("jointard").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def validate(config: dict, schema_name: str) -> None:
    import jsonschema

    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"config field {where}: {err.message}")


def load_run_config(path, seed=None):
    raw = read_json(path) if path else {}
    validate(raw, "run_config.schema.json")
    raw = dict(raw)
    paths = raw.pop("paths", {})
    if seed is not None:
        raw["seed"] = seed
    return RunConfig.from_dict(raw), paths


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.n, d=args.d, sparsity_ratio=args.sparsity, rho=args.rho, sigma=args.sigma,
        multiplier=args.m, n_test=args.n_test, seed=args.seed if args.seed is not None else 0,
    )
    train, test, truth = gen_sparse_linear(spec)
    out = _out_dir(args)
    write_dataset(out / "train.csv", train)
    if test is not None:
        write_dataset(out / "test.csv", test)
    write_json(out / "truth.json", truth.to_json())
    return EXIT_OK


def _trace_rows(trace):
    for e in trace:
        yield (e.iteration, e.nll, e.max_rel_change, e.guards, int(e.lambda_updated),
               NA if e.inner_iterations is None else e.inner_iterations,
               NA if e.surrogate is None else e.surrogate)


TRACE_HEADER = ["iteration", "nll", "max_rel_change", "guards", "lambda_updated",
                "inner_iterations", "surrogate"]


def _versions():
    import scipy

    return {
        "jointard": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "kernel_backend": _kernels.BACKEND,
    }


def cmd_fit(args) -> int:
    cfg, paths = load_run_config(args.config, args.seed)
    train_path = args.train or paths.get("train")
    test_path = args.test or paths.get("test")
    if not train_path:
        raise InputError("no training data: pass --train or set paths.train")
    if args.out is None and paths.get("out"):
        args.out = paths["out"]
    out = _out_dir(args)
    train = read_dataset(train_path)
    test = read_dataset(test_path) if test_path else None
    try:
        res = run(train, test, cfg)
    except NumericalError as exc:
        trace = getattr(exc, "trace", None) or []
        write_rows(out / "trace.csv", TRACE_HEADER, _trace_rows(trace))
        write_json(out / "error.json", {"error": str(exc), "matrix": exc.matrix,
                                        "condition": exc.condition, "iterations": len(trace)})
        raise
    fr = res.result
    noise = fr.state.noise
    record = {
        "config": cfg.to_dict(),
        "state": {
            "gamma": fr.state.gamma,
            "lambda": noise.lam if noise.hetero else float(noise.lam),
            "noise_mode": "hetero" if noise.hetero else "homo",
            "ess_theta": res.ess_theta,
            "ess_y": res.ess_y,
        },
        "model": res.model.to_json(),
        "metrics": res.metrics,
        "trace": {
            "iterations": fr.iterations_run,
            "converged": fr.converged,
            "final_nll": fr.final_nll,
            "guard_activations": int(sum(e.guards for e in fr.trace)),
        },
        "timing": {"seconds": res.seconds},
        "threads": fr.threads,
        "versions": _versions(),
        "data": {"train": str(train_path), "test": str(test_path) if test_path else None,
                 "n_train": train.n, "n_test": test.n if test is not None else 0},
    }
    if cfg.contamination is not None:
        record["contaminated_rows"] = res.prepared.outliers
    write_json(out / "result.json", record)
    write_rows(out / "trace.csv", TRACE_HEADER, _trace_rows(fr.trace))
    if not fr.converged:
        log.warning("fit stopped at max_iter=%d without meeting the tolerance", fr.iterations_run)
        if args.strict:
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def _load_model(path) -> tuple[dict, Model]:
    record = read_json(path)
    if "model" not in record:
        raise InputError(f"{path}: not a result record (missing 'model')")
    return record, Model.from_json(record["model"])


def cmd_predict(args) -> int:
    _, model = _load_model(args.result)
    data = read_dataset(args.data)
    mean, var = model.predict(data.X)
    out = _out_dir(args)
    write_rows(out / "predictions.csv", ["index", "mean", "variance"],
               ((i, m, v) for i, (m, v) in enumerate(zip(mean, var))))
    return EXIT_OK


def cmd_eval(args) -> int:
    _, model = _load_model(args.result)
    data = read_dataset(args.data)
    metrics = score(model, data)
    metrics["n"] = data.n
    out = _out_dir(args)
    write_json(out / "metrics.json", metrics)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .pipeline import prepare

    record, model = _load_model(args.result)
    cfg = RunConfig.from_dict(record["config"])
    train = read_dataset(args.train)
    prep = prepare(train, cfg)
    lam = record["state"]["lambda"]
    if isinstance(lam, list):
        noise = Heteroscedastic(np.asarray(lam, float))
    else:
        noise = Homoscedastic(float(lam))
    ArdState(np.asarray(record["state"]["gamma"], float), noise).check(prep.data)
    rep = diagnostics(prep.data, model.posterior, noise)
    truth = None
    if args.truth:
        truth = set(int(i) for i in read_json(args.truth).get("outliers", []))
    elif "contaminated_rows" in record:
        truth = set(int(i) for i in record["contaminated_rows"])
    header = ["index", "residual", "leverage", "loo_sq_residual", "lambda"]
    if truth is not None:
        header.append("is_outlier_truth")
    rows = []
    for i in range(prep.data.n):
        row = [i, rep.residuals[i], rep.leverage[i], rep.loo_sq_residuals[i], rep.lam[i]]
        if truth is not None:
            row.append(int(i in truth))
        rows.append(row)
    out = _out_dir(args)
    write_rows(out / "diagnostics.csv", header, rows)
    if rep.flagged.any():
        log.warning("%d samples have leverage >= 1; their LOO entries are +inf",
                    int(rep.flagged.sum()))
    return EXIT_OK


# --- sweep -------------------------------------------------------------------

SWEEP_HEADER = ["axis1", "axis2", "trial", "method", "noise_mode", "weight_recall",
                "outlier_recall", "rmse", "nll", "ess_theta", "ess_y", "iterations",
                "status"]


def _sweep_cell(job):
    (axis1, axis2, trial, seed, kind, base, methods, modes, fit_over) = job
    kw = dict(base)
    if kind == "weight":
        kw.update(sparsity_ratio=axis1, sigma=axis2)
    else:
        kw.update(rho=axis1, multiplier=axis2)
    rows = []
    try:
        spec = SyntheticSpec(seed=seed, **kw)
    except InputError as exc:
        for method in methods:
            for mode in modes:
                rows.append([axis1, axis2, trial, method, mode, NA, NA, NA, NA, NA, NA, 0,
                             f"input_error: {exc}"])
        return rows
    train, test, truth = gen_sparse_linear(spec)
    for method in methods:
        for mode in modes:
            cfg = FitConfig.from_dict({**fit_over, "method": method, "noise_mode": mode})
            try:
                res = fit(train, cfg)
            except NumericalError:
                rows.append([axis1, axis2, trial, method, mode, NA, NA, NA, NA, NA, NA, 0,
                             "numerical_error"])
                continue
            st = res.state
            lam = st.noise.variances(train.n)
            wr = topk_recall(1.0 / st.gamma, truth.support, truth.support.size)
            if truth.outliers.size and st.noise.hetero:
                orr = topk_recall(lam, truth.outliers, truth.outliers.size)
            else:
                orr = NA
            mean = test.X @ res.posterior.mu
            var = st.noise.lam if not st.noise.hetero else float(np.mean(lam))
            var = var + row_quad(test.X, res.posterior.cov)
            rows.append([
                axis1, axis2, trial, method, mode, wr, orr, rmse(mean, test.y),
                predictive_nll((mean, var), test.y),
                ess(RelevanceScores.from_precisions(st.gamma)),
                ess(RelevanceScores.from_noise(lam)), res.iterations_run,
                "converged" if res.converged else "max_iter",
            ])
    return rows


def sweep_jobs(grid: dict):
    kind = grid["kind"]
    base = {
        "n": grid.get("n", 500), "d": grid.get("d", 50), "n_test": grid.get("n_test", 1000),
        "sparsity_ratio": grid.get("sparsity_ratio", 0.2), "sigma": grid.get("sigma", 0.2),
        "rho": grid.get("rho", 0.2), "multiplier": grid.get("multiplier", 10.0),
    }
    seed0 = int(grid.get("seed", 0))
    methods = list(grid.get("methods", ["em"]))
    modes = list(grid.get("noise_modes", ["hetero", "homo"]))
    fit_over = dict(grid.get("fit", {}))
    jobs = []
    for i, a1 in enumerate(grid["axis1"]):
        for j, a2 in enumerate(grid["axis2"]):
            for t in range(int(grid.get("trials", 10))):
                # one independent seed per (cell, trial); every method and noise
                # mode sees the same draw
                ss = np.random.SeedSequence(seed0, spawn_key=(i, j, t))
                seed = int(ss.generate_state(1, dtype=np.uint64)[0])
                jobs.append((float(a1), float(a2), t, seed, kind, base, methods, modes, fit_over))
    return jobs


def run_sweep(grid: dict, workers: int = 1):
    jobs = sweep_jobs(grid)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_sweep_cell, jobs))
    else:
        chunks = [_sweep_cell(j) for j in jobs]
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    return rows


def cmd_sweep(args) -> int:
    if not args.config:
        raise InputError("sweep needs --config <grid.json>")
    grid = read_json(args.config)
    validate(grid, "sweep_config.schema.json")
    if args.seed is not None:
        grid["seed"] = args.seed
    FitConfig.from_dict({**grid.get("fit", {}), "method": "em"})  # early validation
    workers = args.workers or grid.get("workers") or 1
    rows = run_sweep(grid, int(workers))
    out = _out_dir(args)
    write_rows(out / "heatmap.csv", SWEEP_HEADER, rows)
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (schema in docs/)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", "-o", help="output directory (default: cwd)")
    common.add_argument("--strict", action="store_true",
                        help="exit 1 when a fit stops without converging")
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="jointard", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--d", type=int, default=50)
    s.add_argument("--sparsity", type=float, default=0.2)
    s.add_argument("--rho", type=float, default=0.2)
    s.add_argument("--sigma", type=float, default=0.2)
    s.add_argument("--m", type=float, default=10.0, help="outlier noise multiplier")
    s.add_argument("--n-test", type=int, default=1000)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", parents=[common], help="fit a model")
    f.add_argument("--train", help="training CSV")
    f.add_argument("--test", help="test CSV (metrics are reported when given)")
    f.set_defaults(func=cmd_fit)

    for name, fn, helptext in (("predict", cmd_predict, "predict on a CSV"),
                               ("eval", cmd_eval, "score a result on a CSV")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--result", required=True)
        q.add_argument("--data", required=True)
        q.set_defaults(func=fn)

    w = sub.add_parser("sweep", parents=[common], help="grid of synthetic fits")
    w.add_argument("--workers", type=int, help="worker processes")
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("diagnose", parents=[common], help="per-sample influence diagnostics")
    g.add_argument("--result", required=True)
    g.add_argument("--train", required=True, help="the training CSV used for the fit")
    g.add_argument("--truth", help="truth.json with outlier indices")
    g.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limit = contextlib.nullcontext()
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_INPUT
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=args.threads)
    try:
        with limit:
            return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
