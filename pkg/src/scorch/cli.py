"""Command-line harness: ``scorch solve | bench | gen``.

Exit status: 0 when the run converged, 2 when it stopped at the iteration
limit, 1 on any error (bad arguments, unreadable data, divergence).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .exceptions import ScorchError
from .problems import least_squares_problem, logistic_problem
from .prox import PenaltySpec
from .solvers import ALGORITHMS, DivergenceError, SolverConfig, TraceRecord, solve

log = logging.getLogger("scorch")

FAMILIES = ("logistic", "group_lasso", "deconv")

# generator defaults per family
GEN_DEFAULTS = {
    "logistic": {"m": 200, "n": 50, "seed": 0},
    "group_lasso": {"m": 200, "n": 800, "ng": 40, "seed": 0},
    "deconv": {"n": 1024, "seed": 0},
}
MU_DEFAULTS = {"logistic": 1.0, "group_lasso": 1.2, "deconv": 5e-2}
GAMMA_DEFAULT = 1e-7
TAU1_DEFAULT = 0.9

SUMMARY_COLUMNS = ("algorithm", "m", "n", "nnz", "iterations", "seconds", "objective", "mse", "status")


class UsageError(ScorchError):
    """Raised for command-line mistakes; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# run specification


@dataclass
class RunSpec:
    """Everything needed to reproduce a run; echoed into ``summary.json``."""

    family: str
    gen: dict | None = None
    data: str | None = None
    truth: str | None = None
    mu: float | None = None
    beta: float | None = None
    beta_G: float | None = None
    gamma: float = GAMMA_DEFAULT
    tau1: float = TAU1_DEFAULT
    kernel: str = "hyperbolic-p1"
    solver: dict = field(default_factory=dict)
    out: str = "."
    formats: tuple = ("csv", "json")

    def __post_init__(self):
        self.family = normalize_family(self.family)
        if (self.gen is None) == (self.data is None):
            raise UsageError("give exactly one data source: --gen or --data")


def normalize_family(name: str) -> str:
    key = name.replace("-", "_").lower()
    if key == "deconvolution":
        key = "deconv"
    if key not in FAMILIES:
        raise UsageError(f"unknown family {name!r}; choose from {', '.join(FAMILIES)}")
    return key


def normalize_algorithm(name: str) -> str:
    key = name.replace("-", "_").lower()
    if key not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {name!r}; choose from {', '.join(a.replace('_', '-') for a in ALGORITHMS)}")
    return key


def parse_gen(text: str | None, family: str) -> dict:
    """``"m=200,n=50,seed=7"`` to a dict merged over the family defaults."""
    params = dict(GEN_DEFAULTS[family])
    if not text:
        return params
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip().lower().replace("n_g", "ng")
        if not sep or not key:
            raise UsageError(f"--gen expects key=value pairs, got {item!r}")
        try:
            params[key] = int(value) if value.strip().lstrip("-").isdigit() else float(value)
        except ValueError:
            raise UsageError(f"--gen value for {key!r} is not a number: {value!r}") from None
    return params


# ---------------------------------------------------------------------------
# data and problem construction


def _generate(family, params):
    p = dict(params)
    seed = int(p.pop("seed", 0))
    try:
        if family == "logistic":
            return data_mod.gen_logistic(int(p.pop("m")), int(p.pop("n")), seed, **p)
        if family == "group_lasso":
            return data_mod.gen_group_lasso(int(p.pop("m")), int(p.pop("n")), int(p.pop("ng")), seed, **p)
        return data_mod.gen_deconvolution(int(p.pop("n")), seed, **p)
    except TypeError as exc:
        raise UsageError(f"bad generator parameter for {family}: {exc}") from None


def _load_truth(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    groups = [np.asarray(g, dtype=np.int64) for g in blob.get("groups", [])]
    return data_mod.GroundTruth(np.asarray(blob["x_star"], dtype=float), blob.get("active_groups", []), groups)


def load_data(spec: RunSpec):
    """Returns ``(dataset, truth or None)``."""
    if spec.gen is not None:
        return _generate(spec.family, spec.gen)
    if not os.path.exists(spec.data):
        raise UsageError(f"data file not found: {spec.data}")
    ds = data_mod.parse_libsvm(spec.data, classification=spec.family == "logistic")
    truth = _load_truth(spec.truth) if spec.truth else None
    if truth is not None and truth.x_star.size != ds.n:
        if truth.x_star.size < ds.n:
            raise UsageError(f"truth has {truth.x_star.size} entries but data has {ds.n} features")
        # trailing all-zero features are invisible in LIBSVM files
        A = ds.A.tocsr()
        A.resize((ds.m, truth.x_star.size))
        ds = data_mod.Dataset(A, ds.y, ds.meta)
    return ds, truth


def resolved_parameters(spec: RunSpec, ds) -> dict:
    """Penalty weights and ``mu`` after applying the family defaults."""
    mu = spec.mu if spec.mu is not None else MU_DEFAULTS[spec.family]
    if spec.family == "logistic":
        beta = spec.beta if spec.beta is not None else (0.2 if spec.gen is not None else 1.0)
        return {"mu": mu, "beta": beta}
    if spec.family == "deconv":
        return {"mu": mu, "beta": spec.beta if spec.beta is not None else 1e-3}
    scale = float(np.max(np.abs(ds.A.T @ ds.y)))
    beta = spec.beta if spec.beta is not None else spec.tau1 * spec.gamma * scale
    beta_G = spec.beta_G if spec.beta_G is not None else (10.0 - spec.tau1) * spec.gamma * scale
    return {"mu": mu, "beta": beta, "beta_G": beta_G}


def build_problem(spec: RunSpec, ds, truth):
    params = resolved_parameters(spec, ds)
    if spec.family == "logistic":
        problem, _ = logistic_problem(ds.A, ds.y, params["beta"], params["mu"], spec.kernel)
    elif spec.family == "deconv":
        problem, _ = least_squares_problem(ds.A, ds.y, PenaltySpec("l1", beta=params["beta"]), params["mu"], spec.kernel)
    else:
        if truth is None or not truth.groups:
            raise UsageError("group_lasso needs groups: generate data or pass --truth with a groups list")
        pen = PenaltySpec("sparse_group", beta=params["beta"], beta_G=params["beta_G"], groups=truth.groups)
        problem, _ = least_squares_problem(ds.A, ds.y, pen, params["mu"], spec.kernel)
    return problem, params


# ---------------------------------------------------------------------------
# output helpers


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return "" if v is None else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def trace_csv(trace, omit_timing=False) -> str:
    cols = TraceRecord.columns()
    rows = []
    for r in trace:
        row = r.row()
        if omit_timing:
            row[cols.index("seconds")] = None
        rows.append(row)
    return csv_text(cols, rows)


def svg_plot(series: dict, title: str = "objective") -> str:
    """Minimal SVG line chart of ``{label: [(iteration, value), ...]}``."""
    W, H, pad = 640, 400, 50
    pts = [(k, v) for s in series.values() for k, v in s if math.isfinite(v)]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}"></svg>\n'
    kmax = max(k for k, _ in pts) or 1
    lo, hi = min(v for _, v in pts), max(v for _, v in pts)
    span = (hi - lo) or 1.0
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<text x="{W / 2}" y="20" text-anchor="middle">{title} vs iteration</text>',
        f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="#888"/>',
        f'<text x="{pad}" y="{H - pad + 16}">0</text>',
        f'<text x="{W - pad}" y="{H - pad + 16}" text-anchor="end">{kmax}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{hi:.4g}</text>',
        f'<text x="{pad - 4}" y="{H - pad}" text-anchor="end">{lo:.4g}</text>',
    ]
    for i, (label, s) in enumerate(series.items()):
        color = colors[i % len(colors)]
        coords = " ".join(
            f"{pad + (W - 2 * pad) * k / kmax:.2f},{H - pad - (H - 2 * pad) * (v - lo) / span:.2f}"
            for k, v in s
            if math.isfinite(v)
        )
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{W - pad - 4}" y="{pad + 16 * (i + 1)}" text-anchor="end" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# running one cell


def _summary_row(alg, ds, x, trace, truth, status, omit_timing=False):
    mse = float(np.mean((x - truth.x_star) ** 2)) if truth is not None and x is not None else None
    last = trace[-1] if trace else None
    return {
        "algorithm": alg.replace("_", "-"),
        "m": ds.m,
        "n": ds.n,
        "nnz": last.nnz if last else None,
        "iterations": trace.iterations if trace is not None else 0,
        "seconds": None if omit_timing or last is None else last.seconds,
        "objective": last.objective if last else None,
        "mse": mse,
        "status": status,
    }


def run_cell(spec: RunSpec, algorithm: str, omit_timing: bool = False):
    """Solve one (data, algorithm) cell. Returns ``(row, trace, x)``; never raises
    for solver failures, which are reported in ``row['status']``."""
    ds, truth = load_data(spec)
    problem, _ = build_problem(spec, ds, truth)
    cfg = SolverConfig(algorithm=algorithm, **spec.solver)
    try:
        x, trace = solve(problem, cfg)
        status = "converged" if trace.converged else "max_iters"
    except DivergenceError as exc:
        x, trace, status = exc.x, exc.trace, f"error: {exc}"
    except ScorchError as exc:
        x, trace, status = None, None, f"error: {exc}"
    return _summary_row(algorithm, ds, x, trace, truth, status, omit_timing), trace, x


# ---------------------------------------------------------------------------
# commands


def _spec_from_args(args) -> RunSpec:
    family = normalize_family(args.family)
    if (args.gen is None) == (args.data is None):
        raise UsageError("give exactly one data source: --gen [K=V,...] or --data FILE")
    gen = parse_gen(args.gen, family) if args.data is None else None
    solver = {
        "alpha": args.alpha,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "prox_dhat_literal": args.prox_dhat_literal,
        "diagnostics": args.diagnostics,
    }
    if args.lipschitz is not None:
        solver["lipschitz_L"] = args.lipschitz
    return RunSpec(
        family=family,
        gen=gen,
        data=args.data,
        truth=args.truth,
        mu=args.mu,
        beta=args.beta,
        beta_G=args.beta_g,
        gamma=args.gamma,
        tau1=args.tau1,
        kernel=args.kernel,
        solver=solver,
        out=args.out,
    )


def _echo(spec: RunSpec, ds, algorithms) -> dict:
    echo = asdict(spec)
    echo["formats"] = list(spec.formats)
    echo["resolved"] = resolved_parameters(spec, ds)
    echo["algorithms"] = [a.replace("_", "-") for a in algorithms]
    return echo


def cmd_solve(args) -> int:
    spec = _spec_from_args(args)
    alg = normalize_algorithm(args.alg)
    SolverConfig(algorithm=alg, **spec.solver)  # validate before touching data
    ds, truth = load_data(spec)
    row, trace, x = run_cell(spec, alg, args.omit_timing)
    out = Path(spec.out)
    if trace is not None:
        write_atomic(out / "trace.csv", trace_csv(trace, args.omit_timing))
        if args.svg:
            write_atomic(out / "trace.svg", svg_plot({row["algorithm"]: [(r.k, r.objective) for r in trace]}))
    if args.save_solution and x is not None:
        write_atomic(out / "solution.csv", csv_text(["i", "x"], [[i, float(v)] for i, v in enumerate(x)]))
    summary = {"spec": _echo(spec, ds, [alg]), "summary": row}
    write_atomic(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps(row))
    if row["status"].startswith("error"):
        print(f"scorch: {row['status']}", file=sys.stderr)
        return 1
    return 0 if row["status"] == "converged" else 2


def cmd_bench(args) -> int:
    spec = _spec_from_args(args)
    algs = [normalize_algorithm(a) for a in args.algs.split(",") if a.strip()]
    if len(algs) < 2:
        raise UsageError("bench needs at least two algorithms")
    if len(set(algs)) != len(algs):
        raise UsageError("bench algorithms must be distinct")
    for a in algs:
        SolverConfig(algorithm=a, **spec.solver)
    ds, _ = load_data(spec)

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_cell, [spec] * len(algs), algs, [args.omit_timing] * len(algs)))
    else:
        results = [run_cell(spec, a, args.omit_timing) for a in algs]

    out = Path(spec.out)
    rows = []
    series = {}
    for alg, (row, trace, _) in zip(algs, results):
        rows.append(row)
        if trace is not None:
            write_atomic(out / f"trace_{alg.replace('_', '-')}.csv", trace_csv(trace, args.omit_timing))
            series[row["algorithm"]] = [(r.k, r.objective) for r in trace]
    write_atomic(out / "bench.csv", csv_text(SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows]))
    write_atomic(out / "bench.json", json.dumps({"spec": _echo(spec, ds, algs), "rows": rows}, indent=2) + "\n")
    if args.svg:
        write_atomic(out / "bench.svg", svg_plot(series))
    for r in rows:
        print(json.dumps(r))
    return 0


def cmd_gen(args) -> int:
    family = normalize_family(args.family)
    params = dict(GEN_DEFAULTS[family])
    for key in ("m", "n", "ng", "seed"):
        v = getattr(args, key)
        if v is not None:
            if key not in params:
                raise UsageError(f"--{key} does not apply to family {family}")
            params[key] = v
    ds, truth = _generate(family, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats = {"both": ("libsvm", "csv")}.get(args.format, (args.format,))
    writers = {"libsvm": (data_mod.write_libsvm, "data.libsvm"), "csv": (data_mod.write_csv, "data.csv")}
    for fmt in formats:
        writer, name = writers[fmt]
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
        os.close(fd)
        try:
            writer(tmp, ds)
            os.replace(tmp, out / name)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
    blob = truth.to_json()
    blob["family"] = family
    blob["params"] = params
    write_atomic(out / "truth.json", json.dumps(blob) + "\n")
    print(json.dumps({"family": family, "m": ds.m, "n": ds.n, "nnz": truth.nnz, "out": str(out)}))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_options(p):
    p.add_argument("--family", required=True, help="logistic | group-lasso | deconv")
    src = p.add_argument_group("data source (exactly one)")
    src.add_argument("--gen", nargs="?", const="", default=None, metavar="K=V,...",
                     help="generate data, e.g. m=200,n=50,seed=7 (group-lasso also takes ng)")
    src.add_argument("--data", help="LIBSVM file")
    p.add_argument("--truth", help="truth.json from `scorch gen` (x* for MSE, groups for group-lasso)")
    p.add_argument("--mu", type=float, help="smoothing parameter (family default)")
    p.add_argument("--beta", type=float, help="l1 weight (family default)")
    p.add_argument("--beta-g", type=float, help="group weight (group-lasso)")
    p.add_argument("--gamma", type=float, default=GAMMA_DEFAULT, help="group-lasso scale gamma (default 1e-7)")
    p.add_argument("--tau1", type=float, default=TAU1_DEFAULT, help="group-lasso split tau_1 (default 0.9)")
    p.add_argument("--kernel", default="hyperbolic-p1", help="hyperbolic-p1 | ostrovskii-bach")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--lipschitz", type=float, help="L for the first-order baselines")
    p.add_argument("--prox-dhat-literal", action="store_true",
                   help="threshold by beta*d instead of beta/d in the SCORE prox step")
    p.add_argument("--diagnostics", action="store_true", help="record d_nu and omega_nu per iteration")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--svg", action="store_true", help="also write an SVG objective plot")
    p.add_argument("--omit-timing", action="store_true", help="leave wall-clock columns empty (byte-stable output)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scorch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one algorithm")
    _add_run_options(p)
    p.add_argument("--alg", default="prox-n-score", help=", ".join(a.replace("_", "-") for a in ALGORITHMS))
    p.add_argument("--save-solution", action="store_true", help="write solution.csv")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run several algorithms on identical data")
    _add_run_options(p)
    p.add_argument("--algs", default="prox-n-score,prox-ggn-score,prox-grad,fast-prox-grad")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--family", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--ng", type=int, help="number of groups (group-lasso)")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("libsvm", "csv", "both"), default="libsvm")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        status = args.func(args)
    except (ScorchError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"scorch: error: {exc}", file=sys.stderr)
        return 1
    log.info("done in %.2fs", time.perf_counter() - t0)
    return status


if __name__ == "__main__":
    sys.exit(main())
