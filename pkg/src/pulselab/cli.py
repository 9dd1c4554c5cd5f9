"""Command-line entry point: ``pulselab {synth,solve,certify,analyze,bench}``.

Exit codes: 0 success, 2 config or input error, 3 solver did not certify an
optimum, 4 certificate construction failed.  Global flags may also be given
through ``PULSELAB_CONFIG``, ``PULSELAB_OUT_DIR``, ``PULSELAB_SEED`` and
``PULSELAB_THREADS``; explicit flags win.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, certificate, io, kernel, signal, solver

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATE = 4

BENCH_HEADER = [
    "delta",
    "l1_error",
    "bound_general",
    "bound_nonneg",
    "max_match_dist",
    "localization_radius",
    "spurious_mass",
    "spurious_bound",
    "seed",
]

_ENV = {"config": "PULSELAB_CONFIG", "out_dir": "PULSELAB_OUT_DIR", "seed": "PULSELAB_SEED", "threads": "PULSELAB_THREADS"}


class _Exit(Exception):
    def __init__(self, code, message=""):
        self.code = code
        self.message = message


def _common_flags():
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--out-dir", dest="out_dir", help="directory for output files")
    p.add_argument("--seed", type=int, help="override the noise / trial seed")
    p.add_argument("--threads", type=int, help="worker threads for bench")
    return p


def build_parser():
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="pulselab", description="Sparse spike deconvolution experiments.", parents=[common]
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize a noisy measurement")
    p = sub.add_parser("solve", parents=[common], help="recover spikes from a measurement")
    p.add_argument("--measurement", help="measurement CSV (default: OUT_DIR/measurement.csv)")
    p = sub.add_parser("certify", parents=[common], help="build and verify a dual certificate")
    p.add_argument("--sweep", action="store_true", help="search the minimal equispaced spacing instead")
    p = sub.add_parser("analyze", parents=[common], help="evaluate the recovery bounds")
    p.add_argument("--solution", help="solution CSV to compare against the ground truth")
    sub.add_parser("bench", parents=[common], help="noise-level sweep against the bounds")
    return parser


def _resolve(args):
    for name, env in _ENV.items():
        if getattr(args, name, None) is None and env in os.environ:
            value = os.environ[env]
            if name in ("seed", "threads"):
                try:
                    value = int(value)
                except ValueError:
                    raise _Exit(EXIT_INPUT, f"{env} must be an integer, got {value!r}") from None
            setattr(args, name, value)
        elif not hasattr(args, name):
            setattr(args, name, None)
    if args.config is None:
        raise _Exit(EXIT_INPUT, "no config given (use --config or PULSELAB_CONFIG)")
    if args.threads is not None and args.threads < 1:
        raise _Exit(EXIT_INPUT, "--threads must be at least 1")
    config = io.load_config(args.config)
    out = args.out_dir or config.outputs.get("dir") or "."
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else config.seed
    return config, out_dir, seed


def _kernel(config):
    try:
        return kernel.from_spec(config.kernel, config.base_dir)
    except (ValueError, OSError) as exc:
        raise io.ConfigError(str(exc), "kernel", source=config.source) from None


def _note(msg):
    print(f"note: {msg}", file=sys.stderr)


def cmd_synth(args, config, out_dir, seed):
    timings = {}
    t0 = time.perf_counter()
    g, _ = _kernel(config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", signal.BoundarySpikeWarning)
        y_clean = signal.synthesize(config.spikes, g, config.grid)
    for w in caught:
        _note(str(w.message))
    m = signal.add_noise(y_clean, config.grid, config.delta, config.noise["kind"], seed)
    timings["synth"] = time.perf_counter() - t0
    outputs = [
        io.write_csv(out_dir / "measurement.csv", ["k", "y"], zip(config.grid.indices, m.y)),
        io.write_csv(out_dir / "spikes.csv", ["k", "c"], zip(config.spikes.k, config.spikes.c)),
    ]
    io.write_manifest(out_dir, config, "synth", seed, timings, [p.name for p in outputs])
    return EXIT_OK


def cmd_solve(args, config, out_dir, seed):
    timings = {}
    path = Path(args.measurement) if args.measurement else out_dir / "measurement.csv"
    m = io.read_measurement(path, config.grid, config.delta)
    g, _ = _kernel(config)
    t0 = time.perf_counter()
    G = signal.convolution_matrix(g, config.grid)
    sol = solver.solve(solver.ProblemInstance(G, m.y, m.delta, config.nonneg), config.solver)
    timings["solve"] = time.perf_counter() - t0
    spikes = solver.extract_spikes(sol, config.grid)
    report = sol.to_dict()
    report["support_threshold"] = solver.support_threshold(sol.x_hat)
    report["n_spikes"] = len(spikes)
    report["nonneg"] = config.nonneg
    outputs = [
        io.write_csv(out_dir / "solution.csv", ["k", "x_hat"], zip(config.grid.indices, sol.x_hat)),
        io.write_csv(out_dir / "recovered_spikes.csv", ["k", "c"], zip(spikes.k, spikes.c)),
        io.write_json(out_dir / "optimality.json", report),
    ]
    io.write_manifest(out_dir, config, "solve", seed, timings, [p.name for p in outputs])
    if sol.status is not solver.Status.OPTIMAL:
        raise _Exit(EXIT_SOLVER, f"solver finished with status {sol.status.value}; best iterate written")
    return EXIT_OK


def cmd_certify(args, config, out_dir, seed):
    g, eps = _kernel(config)
    opts = config.certify
    sigma = float(opts.get("sigma", config.grid.sigma))
    timings = {}
    t0 = time.perf_counter()
    if args.sweep or opts.get("sweep", False):
        mode = opts.get("sign_patterns", "all")
        try:
            nu = certificate.minimal_empirical_nu(
                g,
                M_max=int(opts.get("M_max", 6)),
                sign_patterns=mode,
                nu_grid=opts.get("nu_grid"),
                resolution=float(opts.get("resolution", 0.01)),
                sigma=sigma,
                epsilon=eps,
            )
        except ValueError as exc:
            raise io.ConfigError(str(exc), "certify", source=config.source) from None
        except certificate.NotFound as exc:
            nu = None
            failure = str(exc)
        timings["sweep"] = time.perf_counter() - t0
        result = {"family": config.kernel["family"], "nu": nu, "M_max": int(opts.get("M_max", 6)), "sign_patterns": mode}
        out = io.write_json(out_dir / "nu_sweep.json", result)
        io.write_manifest(out_dir, config, "certify", seed, timings, [out.name])
        if nu is None:
            raise _Exit(EXIT_CERTIFICATE, failure)
        print(f"minimal nu: {nu:.6g}")
        return EXIT_OK
    if "support" not in opts or "signs" not in opts:
        raise io.ConfigError("certify needs 'support' and 'signs' unless sweeping", "certify", source=config.source)
    try:
        cert = certificate.construct(g, opts["support"], opts["signs"], sigma)
        verdict = certificate.verify(cert, eps, opts.get("scan_step"), opts.get("scan_radius"))
    except certificate.ConstructionFailed as exc:
        io.write_json(out_dir / "verdict.json", {"valid": False, "condition": exc.condition})
        raise _Exit(EXIT_CERTIFICATE, str(exc)) from None
    except ValueError as exc:
        raise io.ConfigError(str(exc), "certify", source=config.source) from None
    timings["certify"] = time.perf_counter() - t0
    outputs = [
        io.write_json(out_dir / "certificate.json", cert.to_dict()),
        io.write_json(out_dir / "verdict.json", verdict.to_dict()),
    ]
    io.write_manifest(out_dir, config, "certify", seed, timings, [p.name for p in outputs])
    print(f"valid: {verdict.valid}  margin: {verdict.margin:.6g}")
    return EXIT_OK


def _admissibility(g, eps, config):
    try:
        return kernel.check_admissible(g, eps)
    except kernel.NotAdmissible as exc:
        raise io.ConfigError(str(exc), "kernel", source=config.source) from None


def _default_nu(spikes, grid):
    sep = signal.check_separation(spikes, 1.0, grid).min_gap
    limit = grid.width / grid.n_sigma
    return float(min(sep / grid.n_sigma, limit)) if math.isfinite(sep) else float(limit)


def _rayleigh_r(spikes, grid, r):
    if r is not None:
        return int(r)
    d = analysis.RAYLEIGH_NU * grid.sigma
    return max(1, signal.rayleigh_number(spikes, d, grid))


def _epsilon(config, eps):
    return float(config.analysis.get("epsilon", eps))


def cmd_analyze(args, config, out_dir, seed):
    g, eps = _kernel(config)
    eps = _epsilon(config, eps)
    t0 = time.perf_counter()
    consts = _admissibility(g, eps, config)
    nu = float(config.analysis.get("nu", _default_nu(config.spikes, config.grid)))
    r = None
    if config.nonneg or "r" in config.analysis:
        r = _rayleigh_r(config.spikes, config.grid, config.analysis.get("r"))
    report = analysis.bounds_report(consts, config.grid, config.delta, nu, config.spikes.c, r)
    out = report.to_dict()
    out["nu"] = nu
    out["constants"] = consts.to_dict()
    outputs = [io.write_json(out_dir / "bounds.json", out)]
    if args.solution:
        x_hat = io.read_solution(args.solution, config.grid)
        metrics = analysis.compare(x_hat, config.spikes, config.grid, eps)
        outputs.append(io.write_json(out_dir / "metrics.json", metrics.to_dict()))
    io.write_manifest(out_dir, config, "analyze", seed, {"analyze": time.perf_counter() - t0}, [p.name for p in outputs])
    return EXIT_OK


def random_spikes(spec, grid, rng):
    """Random spike train: consecutive gaps uniform in ``[min_gap, max_gap]``."""
    count = int(spec["count"])
    lo_gap, hi_gap = int(spec["min_gap"]), int(spec["max_gap"])
    amp_lo, amp_hi = spec.get("amplitude", [0.5, 2.0])
    gaps = rng.integers(lo_gap, hi_gap + 1, size=max(count - 1, 0))
    span = int(gaps.sum())
    margin = int(math.ceil(3 * grid.n_sigma))
    first_lo, first_hi = grid.k_min + margin, grid.k_max - margin - span
    if first_hi < first_lo:
        raise ValueError("random spikes do not fit in the window")
    start = int(rng.integers(first_lo, first_hi + 1))
    k = start + np.r_[0, np.cumsum(gaps)]
    c = rng.uniform(amp_lo, amp_hi, size=count)
    if spec.get("signs", "mixed") == "mixed":
        c *= rng.choice([-1.0, 1.0], size=count)
    return signal.SpikeTrain(k.astype(np.int64), c)


def run_trial(g, consts, config, G, delta, seed, nonneg, nu):
    """One bench trial; returns ``(row, status_row)``."""
    grid = config.grid
    spec = config.bench.get("random_spikes")
    spikes = random_spikes(spec, grid, np.random.default_rng(seed)) if spec else config.spikes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", signal.BoundarySpikeWarning)
        y_clean = signal.synthesize(spikes, g, grid)
    m = signal.add_noise(y_clean, grid, delta, config.noise["kind"], seed)
    sol = solver.solve(solver.ProblemInstance(G, m.y, delta, nonneg), config.solver)
    metrics = analysis.compare(sol.x_hat, spikes, grid, consts.epsilon)
    r = _rayleigh_r(spikes, grid, config.analysis.get("r")) if nonneg else None
    trial_nu = nu if nu is not None else _default_nu(spikes, grid)
    rep = analysis.bounds_report(consts, grid, delta, trial_nu, spikes.c, r)
    radii = [x for x in rep.localization_radii if math.isfinite(x)]
    row = [
        delta,
        metrics.l1_error,
        rep.error_bound_general,
        rep.error_bound_nonneg if rep.error_bound_nonneg is not None else math.nan,
        metrics.max_match_dist,
        max(radii) if radii else math.nan,
        metrics.spurious_mass,
        rep.spurious_mass_bound,
        seed,
    ]
    bound = rep.error_bound_nonneg if nonneg else rep.error_bound_general
    status = [delta, seed, sol.status.value, sol.iterations, sol.gap, metrics.l1_error <= bound]
    return row, status


def cmd_bench(args, config, out_dir, seed):
    bench = config.bench
    if not bench:
        raise io.ConfigError("missing 'bench' section", "bench", source=config.source)
    g, eps = _kernel(config)
    consts = _admissibility(g, _epsilon(config, eps), config)
    seeds = bench.get("seeds") or list(range(seed, seed + int(bench.get("trials", 5))))
    deltas = sorted(float(d) for d in bench["deltas"])
    nonneg = bool(bench.get("nonneg", config.nonneg))
    nu = config.analysis.get("nu")
    G = signal.convolution_matrix(g, config.grid)
    jobs = [(d, int(s)) for d in deltas for s in seeds]
    t0 = time.perf_counter()

    def run(job):
        try:
            return run_trial(g, consts, config, G, job[0], job[1], nonneg, nu)
        except Exception as exc:  # recorded per trial, the sweep continues
            return [job[0]] + [math.nan] * 7 + [job[1]], [job[0], job[1], f"error: {exc}", 0, math.nan, False]

    with ThreadPoolExecutor(max_workers=args.threads or 1) as pool:
        results = list(pool.map(run, jobs))
    results.sort(key=lambda rs: (rs[0][0], rs[0][-1]))
    rows = [r for r, _ in results]
    statuses = [s for _, s in results]
    timings = {"bench": time.perf_counter() - t0}
    summary = _bench_summary(rows, deltas)
    outputs = [
        io.write_csv(out_dir / "bench.csv", BENCH_HEADER, rows),
        io.write_csv(
            out_dir / "bench_status.csv", ["delta", "seed", "status", "iterations", "gap", "within_bound"], statuses
        ),
        _write_tsv(out_dir / "bench_summary.tsv", summary),
        _write_tsv(
            out_dir / "bench_plot.tsv",
            [["delta", "seed", "l1_error", "bound_general", "bound_nonneg"]]
            + [[r[0], r[8], r[1], r[2], r[3]] for r in rows],
        ),
    ]
    io.write_manifest(out_dir, config, "bench", seed, timings, [p.name for p in outputs])
    for line in summary:
        print("\t".join(_fmt(v) for v in line))
    if all(s[2] != solver.Status.OPTIMAL.value for s in statuses):
        raise _Exit(EXIT_SOLVER, "every bench trial failed")
    return EXIT_OK


def _fmt(v):
    return v if isinstance(v, str) else io.format_cell(v)


def _write_tsv(path, lines):
    path.write_text("".join("\t".join(_fmt(v) for v in line) + "\n" for line in lines))
    return path


def _bench_summary(rows, deltas):
    lines = [["delta", "trials", "mean_l1_error", "mean_error_over_delta", "max_ratio_general", "max_ratio_nonneg"]]
    for d in deltas:
        sel = np.array([r[:4] for r in rows if r[0] == d], dtype=float)
        err = sel[:, 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            over = np.nanmean(err / d) if d > 0 else math.nan
            rg = np.nanmax(err / sel[:, 2]) if d > 0 else math.nan
            rn = np.nanmax(err / sel[:, 3]) if d > 0 and np.any(np.isfinite(sel[:, 3])) else math.nan
        lines.append([d, len(sel), float(np.nanmean(err)), float(over), float(rg), float(rn)])
    return lines


COMMANDS = {
    "synth": cmd_synth,
    "solve": cmd_solve,
    "certify": cmd_certify,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("measurement", "solution"):
        if not hasattr(args, name):
            setattr(args, name, None)
    if not hasattr(args, "sweep"):
        args.sweep = False
    try:
        config, out_dir, seed = _resolve(args)
        return COMMANDS[args.command](args, config, out_dir, seed)
    except io.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _Exit as exc:
        if exc.message:
            print(f"error: {exc.message}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
