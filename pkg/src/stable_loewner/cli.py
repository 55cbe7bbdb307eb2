"""Command-line runner.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``
and prints a one-line JSON summary. Exit status: 0 on success, 2 for usage
or parameter errors, 3 for numerical failures.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import (Falsification, FitError, NumericalError, ParameterError,
                     ResolutionError, SwallowedError)
from .export import (read_driver_csv, sha256_file, write_csv, write_json, write_path_csv,
                     write_trace_csv, write_trace_svg)
from .flow_dynamics import exit_probability_experiment, height_reach_experiment
from .geometry_stats import (derivative_moment_experiment, dimension_estimate,
                             modulus_estimate, rcll_check, rescaled_hull_experiment)
from .loewner_core import DEFAULT_LIFT, Driver, compute_trace
from .stable_process import (StableParams, TruncationConfig, sample_stable_path,
                             sample_truncated_path, truncated_frac_laplacian)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


# ---------------------------------------------------------------------------
# Argument definitions


def _driver_args(p):
    p.add_argument("--driver", choices=["stable", "truncated", "constant", "custom-file"],
                   default="stable")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.0, help="level of the constant driver")
    p.add_argument("--driver-file", default=None, help="CSV with columns t,W")
    p.add_argument("--eps-small", type=float, default=1e-3,
                   help="small-jump threshold of the truncated driver")


def _trace_args(p):
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--resolution", type=float, default=None)
    p.add_argument("--lift", type=float, default=DEFAULT_LIFT)


def build_parser():
    parser = _Parser(prog="stable-loewner", description=__doc__.splitlines()[0])
    parser.add_argument("--verify", metavar="MANIFEST",
                        help="re-check the digests listed in a manifest and exit")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON file of defaults; flags win")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")
        p.add_argument("--threads", type=int, default=None)
        return p

    p = add("sample-path", "sample a driving path")
    _driver_args(p)

    p = add("trace", "compute the Loewner trace of one driver")
    _driver_args(p)
    _trace_args(p)
    p.add_argument("--svg", action="store_true", help="also render trace.svg")

    p = add("hull-scaling", "Hausdorff distance of K_{s^2}/s to the slit [0,2i]")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--s-list", type=_floats, default=[0.2, 0.1, 0.05])
    p.add_argument("--n-paths", type=int, default=50)
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--eps-h", type=float, default=0.5)

    p = add("dimension", "box-counting dimension of traces")
    _driver_args(p)
    _trace_args(p)
    p.set_defaults(resolution=1e-4)
    p.add_argument("--eps-min", type=float, default=1e-3)
    p.add_argument("--eps-max", type=float, default=1e-1)
    p.add_argument("--n-paths", type=int, default=1)

    p = add("deriv-moments", "E[|f'_u(z)|^beta; gamma_u < t_max] against its bound")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--z", type=_floats, default=[0.2, 0.2], help="x,y")
    p.add_argument("--u", type=float, default=None, help="defaults to -log y")
    p.add_argument("--n-paths", type=int, default=2000)
    p.add_argument("--t-max", type=float, default=1e3)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--rho", type=float, default=None)

    p = add("height-reach", "P(gamma_u < t_max) for the backward flow")
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--z", type=_floats, default=[0.0, 0.5], help="x,y")
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--n-paths", type=int, default=2000)
    p.add_argument("--t-max", type=float, default=50.0)
    p.add_argument("--dt", type=float, default=0.01)

    p = add("exit-prob", "P(tau_r < tau_R) for the real-line flow")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=2.0)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--R", type=float, default=math.inf)
    p.add_argument("--direction", choices=["forward", "backward"], default="forward")
    p.add_argument("--n-paths", type=int, default=2000)
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=0.01)

    p = add("modulus", "Hoelder exponent of g_T^{-1} on a rectangle")
    _driver_args(p)
    p.add_argument("--region", type=_floats, default=[-1.0, 1.0, 0.5, 1.5],
                   help="x0,x1,y0,y1")
    p.add_argument("--mesh", type=float, default=0.02)
    p.add_argument("--refinements", type=int, default=2)

    p = add("rcll-check", "check the trace is right-continuous with left limits")
    _driver_args(p)
    _trace_args(p)
    p.add_argument("--inject-jumps", type=int, default=0,
                   help="number of extra jumps with |size| in [0.5, 3]")
    p.add_argument("--j-min", type=float, default=0.5)

    p = add("frac-laplacian", "truncated fractional Laplacian by quadrature")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--function", choices=["square", "cos", "gauss"], default="gauss")
    p.add_argument("--x", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--quad-tol", type=float, default=1e-8)
    return parser


def parse_args(argv):
    """Parse flags on top of the optional JSON config file."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for a in sub._actions:
            if a.dest in cfg and a.type is _floats and not isinstance(cfg[a.dest], list):
                cfg[a.dest] = _floats(cfg[a.dest])
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# Helpers


def _threads(args):
    n = args.threads
    if n is None:
        env = os.environ.get("STABLE_LOEWNER_THREADS")
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ParameterError("--threads must be >= 1")
    return n


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def _make_path(args, rng):
    params = StableParams(args.alpha, args.kappa)
    if args.driver == "stable":
        return sample_stable_path(params, args.T, args.n_steps, rng)
    trunc = TruncationConfig(args.alpha, small_jump_threshold=args.eps_small)
    return sample_truncated_path(params, trunc, args.T, args.n_steps, rng)


def _make_driver(args, rng):
    if args.T <= 0:
        raise ParameterError("--T must be positive")
    if args.driver == "constant":
        return Driver.constant(args.level, args.T), None
    if args.driver == "custom-file":
        if not args.driver_file:
            raise ParameterError("--driver custom-file needs --driver-file")
        t, w = read_driver_csv(args.driver_file)
        return Driver(t, w, args.T), None
    path = _make_path(args, rng)
    return Driver.from_levy_path(path), path


def _report(rep):
    return rep.to_dict() if hasattr(rep, "to_dict") else rep


# ---------------------------------------------------------------------------
# Subcommands; each returns (summary dict, list of written file names)


def cmd_sample_path(args, out, mapper):
    if args.driver in ("constant", "custom-file"):
        raise ParameterError("sample-path needs --driver stable or truncated")
    path = _make_path(args, _rng(args.seed))
    write_path_csv(os.path.join(out, "path.csv"), path)
    summary = {"n_points": int(path.times.size), "n_large_jumps": int(len(path.large_jumps)),
               "final_value": float(path.values[-1])}
    return summary, ["path.csv"]


def cmd_trace(args, out, mapper):
    driver, _ = _make_driver(args, _rng(args.seed))
    hull = compute_trace(driver, args.T, args.n_samples, args.lift, args.resolution)
    files = ["trace.csv"]
    write_trace_csv(os.path.join(out, "trace.csv"), hull)
    if args.svg:
        write_trace_svg(os.path.join(out, "trace.svg"), hull)
        files.append("trace.svg")
    summary = {"n_points": int(hull.times.size), "n_branches": len(hull.segments()),
               "endpoint": [float(hull.points[-1].real), float(hull.points[-1].imag)]}
    return summary, files


def cmd_hull_scaling(args, out, mapper):
    reps = rescaled_hull_experiment(args.alpha, args.s_list, args.n_paths, args.seed,
                                    n_steps=args.n_steps, eps_h=args.eps_h, kappa=args.kappa,
                                    n_samples=args.n_samples, mapper=mapper)
    write_csv(os.path.join(out, "scaling.csv"),
              ["s", "n", "median", "mean", "ci_low", "ci_high", "height_exceed_frequency"],
              [[r.extra["s"] for r in reps], [r.n for r in reps], [r.median for r in reps],
               [r.estimate for r in reps], [r.ci_low for r in reps], [r.ci_high for r in reps],
               [r.extra["height_exceed_frequency"] for r in reps]])
    write_json(os.path.join(out, "report.json"), [r.to_dict() for r in reps])
    meds = [r.median for r in reps]
    return {"medians": meds}, ["scaling.csv", "report.json"]


def cmd_dimension(args, out, mapper):
    ss = np.random.SeedSequence(int(args.seed))
    rngs = [np.random.default_rng(c) for c in ss.spawn(args.n_paths)]

    def one(rng):
        driver, _ = _make_driver(args, rng)
        hull = compute_trace(driver, args.T, args.n_samples, args.lift, args.resolution)
        return dimension_estimate(hull.points, (args.eps_min, args.eps_max))

    fits = list(mapper(one, rngs))
    slopes = [f.raw_slope for f in fits]
    rows = [(i, e, c) for i, f in enumerate(fits) for e, c in zip(f.scales, f.counts)]
    write_csv(os.path.join(out, "dimension.csv"), ["path", "eps", "count"],
              list(zip(*rows)) if rows else [[], [], []])
    report = {"slope": float(np.mean(slopes)), "slopes": slopes, "r2": [f.r2 for f in fits],
              "accepted": [f.slope is not None for f in fits],
              "warnings": [w for f in fits for w in f.warnings],
              "seed": args.seed, "n_paths": args.n_paths}
    write_json(os.path.join(out, "report.json"), report)
    return {"slope": report["slope"]}, ["dimension.csv", "report.json"]


def cmd_deriv_moments(args, out, mapper):
    x, y = args.z
    u = -math.log(y) if args.u is None else args.u
    rep = derivative_moment_experiment(args.alpha, args.kappa, args.beta, args.delta,
                                       complex(x, y), u, args.n_paths, args.seed,
                                       t_max=args.t_max, dt=args.dt, rho=args.rho,
                                       mapper=mapper)
    write_json(os.path.join(out, "report.json"), rep.to_dict())
    return {"estimate": rep.estimate, "bound": rep.extra["bound"]}, ["report.json"]


def cmd_height_reach(args, out, mapper):
    x, y = args.z
    rep = height_reach_experiment(args.alpha, complex(x, y), args.u, args.n_paths, args.t_max,
                                  args.seed, kappa=args.kappa, dt=args.dt, mapper=mapper)
    write_json(os.path.join(out, "report.json"), rep.to_dict())
    return {"estimate": rep.estimate}, ["report.json"]


def cmd_exit_prob(args, out, mapper):
    rep = exit_probability_experiment(args.alpha, args.x0, args.r, args.R, args.n_paths,
                                      args.t_max, args.seed, direction=args.direction,
                                      kappa=args.kappa, dt=args.dt, mapper=mapper)
    write_json(os.path.join(out, "report.json"), rep.to_dict())
    return {"estimate": rep.estimate}, ["report.json"]


def cmd_modulus(args, out, mapper):
    if len(args.region) != 4:
        raise ParameterError("--region needs four numbers x0,x1,y0,y1")
    driver, _ = _make_driver(args, _rng(args.seed))
    rep = modulus_estimate(driver, args.T, args.region, args.mesh, args.refinements)
    write_csv(os.path.join(out, "modulus.csv"),
              ["gamma"] + [f"log_c_mesh{k}" for k in range(len(rep.meshes))],
              [rep.gammas, *rep.log_constants])
    write_json(os.path.join(out, "report.json"),
               {"exponent": rep.exponent, "meshes": rep.meshes, "seed": args.seed})
    return {"exponent": rep.exponent}, ["modulus.csv", "report.json"]


def cmd_rcll_check(args, out, mapper):
    rng = _rng(args.seed)
    driver, _ = _make_driver(args, rng)
    if args.inject_jumps:
        times = np.sort(rng.uniform(0.05, 0.95, args.inject_jumps)) * args.T
        sizes = rng.uniform(0.5, 3.0, args.inject_jumps) * np.where(
            rng.uniform(-1, 1, args.inject_jumps) < 0, -1.0, 1.0)
        driver = driver.with_jumps(times, sizes)
    hull = compute_trace(driver, args.T, args.n_samples, args.lift, args.resolution)
    rep = rcll_check(hull, driver, j_min=args.j_min, lift=args.lift)
    report = {"passed": rep.passed, "modulus_exponent": rep.modulus_exponent,
              "modulus": rep.modulus, "jumps": rep.jumps, "seed": args.seed}
    write_json(os.path.join(out, "report.json"), report)
    write_trace_csv(os.path.join(out, "trace.csv"), hull)
    return {"passed": True, "n_jumps": len(rep.jumps)}, ["report.json", "trace.csv"]


_FUNCTIONS = {
    "square": lambda x: x * x,
    "cos": np.cos,
    "gauss": lambda x: np.exp(-x * x),
}


def cmd_frac_laplacian(args, out, mapper):
    f = _FUNCTIONS[args.function]
    vals = [truncated_frac_laplacian(f, x, args.alpha, args.quad_tol) for x in args.x]
    write_csv(os.path.join(out, "frac_laplacian.csv"), ["x", "value"], [args.x, vals])
    return {"values": vals}, ["frac_laplacian.csv"]


COMMANDS = {
    "sample-path": cmd_sample_path,
    "trace": cmd_trace,
    "hull-scaling": cmd_hull_scaling,
    "dimension": cmd_dimension,
    "deriv-moments": cmd_deriv_moments,
    "height-reach": cmd_height_reach,
    "exit-prob": cmd_exit_prob,
    "modulus": cmd_modulus,
    "rcll-check": cmd_rcll_check,
    "frac-laplacian": cmd_frac_laplacian,
}


# ---------------------------------------------------------------------------
# Manifest


def _config_echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verify",)}


def verify_manifest(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    bad = []
    for entry in manifest["files"]:
        fp = os.path.join(base, entry["name"])
        if not os.path.exists(fp) or sha256_file(fp) != entry["sha256"]:
            bad.append(entry["name"])
    return {"ok": not bad, "mismatched": bad, "checked": len(manifest["files"])}


def run(args):
    """Dispatch one subcommand and write its manifest."""
    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ParameterError(f"cannot create output directory: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ParameterError(f"output directory {out} is not writable")
    n_threads = _threads(args)
    start = time.perf_counter()
    if n_threads == 1:
        summary, files = COMMANDS[args.command](args, out, map)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            summary, files = COMMANDS[args.command](args, out, pool.map)
    manifest = {
        "command": args.command,
        "config": _config_echo(args),
        "version": __version__,
        "wall_clock_seconds": time.perf_counter() - start,
        "files": [{"name": f, "sha256": sha256_file(os.path.join(out, f))} for f in files],
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    return summary, manifest


def _fail(status, kind, message):
    print(json.dumps({"error": kind, "message": message, "status": status}))
    return status


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        if args.verify:
            res = verify_manifest(args.verify)
            print(json.dumps(res, sort_keys=True))
            return 0 if res["ok"] else EXIT_NUMERICAL
        if not args.command:
            raise UsageError("a subcommand is required")
        summary, _ = run(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (ParameterError, ResolutionError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except (NumericalError, SwallowedError, FitError, Falsification) as exc:
        return _fail(EXIT_NUMERICAL, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(EXIT_USAGE, "io", str(exc))
    print(json.dumps({"command": args.command, "status": 0, **summary}, sort_keys=True,
                     default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
