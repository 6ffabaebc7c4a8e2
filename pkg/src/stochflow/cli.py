"""Command-line entry point.

Subcommands: ``run`` (one solver run from a config file plus flag
overrides), ``experiment`` (the scripted studies, rendering figures
next to their CSV tables), and ``inspect`` (snapshot headers and
norms).  Exit codes: 0 success, 2 solver did not converge or left its
trust region, 3 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments, figures
from .config import parse_config, resolve
from .diffusive import DiffusiveConfig, solve_diffusive
from .errors import ConfigError, NoConvergence, RemapRequired, StochflowError
from .grid import Field, TorusGrid, random_divergence_free
from .reference import reference_nse_solve, shear_mode, taylor_green
from .snapshot import describe, read_snapshot, write_snapshot
from .stochastic import StochasticConfig, solve, solve_euler

__all__ = ["main", "run"]


def _build_initial(grid, config):
    kind = config["init.kind"]
    param = config["init.param"]
    if kind == "taylor_green":
        amplitude = float(param) if param else 1.0
        return taylor_green(grid, amplitude)
    if kind == "shear":
        amplitude = float(param) if param else 1.0
        return shear_mode(grid, amplitude)
    if kind == "constant":
        parts = [float(p) for p in param.split(",")] if param else [1.0]
        if len(parts) == 1:
            parts = parts + [0.0] * (grid.dim - 1)
        if len(parts) != grid.dim:
            raise ConfigError(
                f"init.param for constant needs {grid.dim} components, "
                f"got {len(parts)}"
            )
        values = np.broadcast_to(
            np.asarray(parts, dtype=np.float64), grid.shape + (grid.dim,)
        ).copy()
        return Field(grid, values)
    if kind == "random_divfree":
        seed = int(param) if param else 0
        rng = np.random.default_rng(seed)
        return Field(grid, random_divergence_free(grid, rng))
    if kind == "file":
        if not param:
            raise ConfigError("init.kind = file requires init.param = <path>")
        field, _, _ = read_snapshot(param)
        if field.grid != grid:
            raise ConfigError(
                f"snapshot grid {field.grid.dim}d n={field.grid.n} "
                f"L={field.grid.length:g} does not match the configured grid"
            )
        if field.rank != 1:
            raise ConfigError("initial snapshot must hold a vector field")
        return field
    raise ConfigError(f"unsupported init.kind {kind!r}")


def _write_history(out_dir, history, config):
    final = os.path.join(out_dir, "final.snap")
    write_snapshot(final, Field(history.grid, history.slices[-1]),
                   float(history.times[-1]))
    if config["out.snapshots"]:
        for k in range(history.times.size):
            write_snapshot(
                os.path.join(out_dir, f"u_{k:06d}.snap"),
                Field(history.grid, history.slices[k]),
                float(history.times[k]),
            )


def run(config):
    """Dispatch one configured solver run; returns the exit code."""
    out_dir = config["out.dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w",
              encoding="utf-8") as fh:
        fh.write(resolve(config))

    grid = TorusGrid(dim=config["grid.dim"], n=config["grid.n"],
                     length=config["grid.l"])
    u0 = _build_initial(grid, config)
    kind = config["solver.kind"]
    try:
        if kind == "reference":
            n_steps = int(round(config["solver.t_final"] / config["solver.dt"]))
            history = reference_nse_solve(
                u0, config["solver.nu"], config["solver.t_final"],
                max(n_steps, 1),
            )
            _write_history(out_dir, history, config)
            print(f"reference solve complete: t = {history.times[-1]:g}, "
                  f"{history.times.size - 1} steps")
            return 0
        if kind in ("stochastic", "euler"):
            cfg = StochasticConfig(
                nu=config["solver.nu"],
                dt=config["solver.dt"],
                t_final=config["solver.t_final"],
                samples=config["solver.samples"],
                seed=config["solver.seed"],
                picard_tol=config["solver.picard_tol"],
                picard_max=config["solver.picard_max"],
                remap_threshold=config["solver.remap_threshold"],
                interp_kind=config["interp.kind"],
            )
            solver = solve_euler if kind == "euler" else solve
            history, report = solver(u0, cfg)
            report.to_csv(os.path.join(out_dir, "convergence.csv"))
            _write_history(out_dir, history, config)
            print(report.summary())
            return 0
        if kind == "diffusive":
            cfg = DiffusiveConfig(
                nu=config["solver.nu"],
                dt=config["solver.dt"],
                t_final=config["solver.t_final"],
                picard_tol=config["solver.picard_tol"],
                picard_max=config["solver.picard_max"],
                remap_threshold=config["solver.remap_threshold"],
            )
            result = solve_diffusive(u0, cfg)
            for i, report in enumerate(result.reports):
                report.to_csv(os.path.join(out_dir, f"convergence_w{i}.csv"))
            _write_history(out_dir, result.history, config)
            windows = len(result.reports)
            print(f"diffusive solve complete in {windows} window"
                  f"{'s' if windows != 1 else ''}: "
                  f"t = {result.history.times[-1]:g}")
            return 0
        raise ConfigError(f"unsupported solver.kind {kind!r}")
    except RemapRequired as err:
        print(f"error: {err}", file=sys.stderr)
        print(
            f"advice: re-run with solver.t_final = {err.t_star:g}, then "
            f"continue from the produced final.snap via init.kind = file",
            file=sys.stderr,
        )
        return 2
    except NoConvergence as err:
        report = getattr(err, "report", None)
        if report is not None:
            report.to_csv(os.path.join(out_dir, "convergence.csv"))
        print(f"error: {err}", file=sys.stderr)
        return 2
    except StochflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def _cmd_run(args):
    flags = {}
    for item in args.overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(
                f"override {item!r} must look like --key=value"
            )
        key, raw = item[2:].split("=", 1)
        flags[key] = raw
    config = parse_config(args.config, flags)
    return run(config)


def _cmd_experiment(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    name = args.name
    kwargs = {}
    if args.samples is not None:
        kwargs["samples"] = args.samples
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.n is not None:
        kwargs["n"] = args.n

    if name == "inviscid-limit":
        result = experiments.inviscid_limit_experiment(out, **kwargs)
        if not args.no_figures:
            figures.render_inviscid(out, result)
        if result["degenerate"]:
            print("inviscid-limit: degenerate sweep (errors at noise floor), "
                  "fit skipped")
            return 0
        print(
            f"inviscid-limit: nu-exponent {result['nu_exponent']:.4f} "
            f"(r2 {result['nu_r2']:.4f}), t-exponent "
            f"{result['t_exponent']:.4f} (r2 {result['t_r2']:.4f})"
        )
        return 0
    if name == "contraction":
        result = experiments.contraction_experiment(out, **kwargs)
        if not args.no_figures:
            figures.render_contraction(out, result)
        ok = result["ok"]
        horizons = sorted(k for k in result if isinstance(k, float))
        for t_final in horizons:
            ratios = result[t_final]["ratios"]
            worst = max(ratios[1:]) if len(ratios) > 1 else float("nan")
            print(f"contraction: T = {t_final:g}, iterations = "
                  f"{len(result[t_final]['residuals'])}, worst late ratio = "
                  f"{worst:.3f}")
        print(f"contraction: smallest horizon geometric decay "
              f"{'holds' if ok else 'FAILED'}")
        return 0 if ok else 2
    if name == "equivalence":
        result = experiments.equivalence_experiment(out, **kwargs)
        if not args.no_figures:
            figures.render_equivalence(out, result)
        for pair, errs in result["pairs"].items():
            print(f"equivalence: {pair} L2 {errs['l2']:.3e}")
        print(f"equivalence: MC sigma {result['mc_sigma']:.3e}; "
              f"stochastic within 3 sigma: {result['stochastic_ok']}; "
              f"diffusive within 1e-3: {result['diffusive_ok']}")
        return 0 if (result["stochastic_ok"] and result["diffusive_ok"]) else 2
    if name == "mc-scaling":
        if "samples" in kwargs:
            kwargs["drift_samples"] = kwargs.pop("samples")
        result = experiments.mc_scaling_experiment(out, **kwargs)
        if not args.no_figures:
            figures.render_mc_scaling(out, result)
        print(f"mc-scaling: fitted exponent {result['exponent']:.4f} "
              f"(r2 {result['r2']:.4f})")
        return 0
    raise ConfigError(f"unknown experiment {name!r}")


def _cmd_inspect(args):
    info = describe(args.snapshot)
    for key in ("dim", "rank", "n", "length", "time", "path_index",
                "sup", "rms", "mean", "sup_divergence"):
        if key not in info:
            continue
        value = info[key]
        if isinstance(value, float):
            value = f"{value:.9g}"
        elif isinstance(value, list):
            value = "[" + ", ".join(f"{v:.9g}" for v in value) + "]"
        print(f"{key:15s} {value}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stochflow",
        description="Stochastic Lagrangian solvers for incompressible flow "
                    "on the periodic torus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured solve")
    p_run.add_argument("--config", default=None,
                       help="key = value configuration file")
    p_run.add_argument("overrides", nargs="*",
                       help="flag overrides of the form --key=value")

    p_exp = sub.add_parser("experiment", help="run a scripted study")
    p_exp.add_argument("name", choices=[
        "inviscid-limit", "contraction", "equivalence", "mc-scaling",
    ])
    p_exp.add_argument("--out", default="out")
    p_exp.add_argument("--samples", type=int, default=None)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--n", type=int, default=None)
    p_exp.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    p_ins = sub.add_parser("inspect", help="print snapshot header and norms")
    p_ins.add_argument("snapshot")

    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        return _cmd_inspect(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
