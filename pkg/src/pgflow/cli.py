"""Batch entry point: ``pgflow {solve,flow,simulate,verify} --config FILE``.

The configuration is one flat ``key = value`` file (``#`` starts a comment).
Every key is checked against the schema below before anything is computed,
and a digest of the canonicalised, typed configuration is written into every
output.  Exit status: 0 success, 1 numeric or solver failure, 2 configuration
failure.

Keys
----
problem
    ``quartic_trap``, ``manufactured_concave``, ``controlled_diffusion_demo``
    or ``constant`` (coefficients from ``dim``, ``drift``, ``sigma``,
    ``running``, ``terminal``).
T, n_t, n_x, amplitude
    Horizon, grid and problem parameter.
control
    Initial or fixed control: ``constant:v``, ``cosine:a0:a1``
    (``a0 + a1 cos 2 pi x1``), ``oracle`` (the problem's closed-form optimum)
    or ``slope_sign:s`` (``s sign(dh/dx1)``, with ``sign(0) = +1``).
cfl_safety, max_substeps_per_level, mass_tolerance
    Solver settings.
dtau, max_steps, stop_grad_norm, stall_window, stall_min_decrease, armijo,
monotone_tol_V, hjb_every, local_multistart, gradient
    Flow settings.
n_paths, n_steps, seed
    Sampler settings.
criteria, c<k>.<setting>
    Acceptance selection (``all`` or ``1,3,5``) and per-criterion overrides.
export_csv, out
    Long-format CSV copies of field dumps; output directory.

The output directory is, in order of precedence, ``--out``, the
``PGFLOW_OUT_DIR`` environment variable, the ``out`` key, ``./pgflow_out``.
"""

from __future__ import annotations

import argparse
import configparser
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import acceptance
from . import io as pio
from .errors import InvalidArgument, NotFound, PGFlowError, StepFailure
from .experiments import EXPERIMENT_DEFAULTS
from .fields import ControlField, SpaceTimeGrid, grad_array
from .flow import TRACE_FIELDS, FlowConfig, run_flow
from .pde import SolverConfig, SolverReport, solve_fp, solve_hj, substep_schedule
from .problems import BUILTINS, DEFAULT_HORIZON, build_problem, constant_problem
from .sampler import estimate_J_mc, simulate

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "PGFLOW_OUT_DIR"
DEFAULT_OUT = "pgflow_out"
CONSTANT_HORIZON = 1.0


class ConfigError(Exception):
    """The configuration file or flags are invalid; maps to exit status 2."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return v


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


SCHEMA = {
    "problem": str,
    "T": float,
    "n_t": int,
    "n_x": int,
    "amplitude": float,
    "dim": int,
    "drift": float,
    "sigma": float,
    "running": float,
    "terminal": float,
    "control": str,
    "cfl_safety": float,
    "max_substeps_per_level": int,
    "mass_tolerance": float,
    "dtau": float,
    "max_steps": int,
    "stop_grad_norm": float,
    "stall_window": int,
    "stall_min_decrease": float,
    "armijo": _bool,
    "monotone_tol_V": _opt_float,
    "hjb_every": int,
    "local_multistart": _bool,
    "gradient": str,
    "n_paths": int,
    "n_steps": int,
    "seed": _u64,
    "criteria": str,
    "export_csv": _bool,
    "out": str,
}
REQUIRED = {
    "solve": ("problem", "n_t", "n_x"),
    "flow": ("problem", "n_t", "n_x"),
    "simulate": ("problem", "n_t", "n_x", "n_paths", "n_steps", "seed"),
    "verify": (),
}
_OVERRIDE = re.compile(r"^c(\d+)\.(\w+)$")
_FLOW_KEYS = (
    "dtau", "max_steps", "stop_grad_norm", "stall_window", "stall_min_decrease",
    "armijo", "monotone_tol_V", "hjb_every", "local_multistart", "gradient",
)
_SOLVER_KEYS = ("cfl_safety", "max_substeps_per_level", "mass_tolerance")


def load_config(path) -> dict:
    """Parse a flat key-value file into typed values (override keys stay strings)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if parser.sections() != ["run"]:
        raise ConfigError("malformed config: section headers are not allowed")
    cfg = {}
    for key, raw in parser["run"].items():
        if _OVERRIDE.match(key):
            cfg[key] = raw.strip()
            continue
        conv = SCHEMA.get(key)
        if conv is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = conv(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return cfg


@dataclass
class Run:
    command: str
    cfg: dict
    digest: str
    out: Path


def _prepare(command: str, cfg: dict, args) -> Run:
    if args.seed is not None:
        try:
            cfg["seed"] = _u64(args.seed)
        except ValueError as exc:
            raise ConfigError(f"bad --seed: {exc}") from exc
    missing = [k for k in REQUIRED[command] if k not in cfg]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg.get("out") or DEFAULT_OUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    digest = pio.config_digest({k: v for k, v in cfg.items() if k != "out"})
    return Run(command, cfg, digest, out)


def make_problem(cfg: dict):
    name = cfg["problem"]
    if name == "constant":
        extra = {k: cfg[k] for k in ("drift", "sigma", "running", "terminal") if k in cfg}
        sp = constant_problem(n=cfg.get("dim", 1), **extra)
        return sp, cfg.get("T", CONSTANT_HORIZON)
    if name not in BUILTINS:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(BUILTINS) + ['constant']}")
    T = cfg.get("T", DEFAULT_HORIZON[name])
    params = {}
    if "amplitude" in cfg:
        if name == "controlled_diffusion_demo":
            raise ConfigError("controlled_diffusion_demo takes no amplitude")
        params["amplitude"] = cfg["amplitude"]
    if name == "manufactured_concave":
        params["T"] = T
    return build_problem(name, **params), T


def make_control(sp, grid: SpaceTimeGrid, text: str) -> ControlField:
    kind, *args = text.split(":")
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"bad control arguments in {text!r}") from None
    if kind == "constant" and len(vals) == 1:
        return ControlField.constant(grid, vals[0])
    if kind == "cosine" and len(vals) == 2:
        return ControlField.from_function(
            grid, lambda t, x: vals[0] + vals[1] * np.cos(2 * np.pi * x[..., 0]) + 0 * t
        )
    if kind == "oracle" and not vals:
        if "u_star" not in sp.oracles:
            raise ConfigError(f"problem {sp.name!r} has no closed-form optimal control")
        return ControlField.from_function(grid, sp.oracles["u_star"])
    if kind == "slope_sign" and len(vals) == 1:
        h = np.broadcast_to(sp.terminal_cost(grid.points), (grid.n_nodes,))
        hx = grad_array(grid, np.broadcast_to(h, (grid.n_t, grid.n_nodes)))[..., 0]
        return ControlField(grid, vals[0] * np.where(hx >= 0, 1.0, -1.0))
    raise ConfigError(f"unrecognised control {text!r}")


def _setup(cfg: dict):
    """Problem, grid, control and solver settings, all validated before compute."""
    try:
        sp, T = make_problem(cfg)
        grid = SpaceTimeGrid(sp.geometry, T, cfg["n_t"], cfg["n_x"])
        u = make_control(sp, grid, cfg.get("control", "constant:0"))
        solver = SolverConfig(**{k: cfg[k] for k in _SOLVER_KEYS if k in cfg})
    except (InvalidArgument, NotFound, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return sp, grid, u, solver


def _dump(run: Run, name: str, field) -> None:
    pio.write_field(run.out / f"{name}.fld", field, run.digest)
    if run.cfg.get("export_csv", False):
        pio.field_to_csv(run.out / f"{name}.csv", field, run.digest)


def cmd_solve(run: Run) -> int:
    sp, grid, u, solver = _setup(run.cfg)
    sched, _ = substep_schedule(sp, u, solver)
    V = solve_hj(sp, u, solver, sched)
    rho = solve_fp(sp, u, None, solver, sched)
    _dump(run, "value", V)
    _dump(run, "density", rho)
    J = float(V.values[0].sum() * grid.cell_volume)
    rows = [dict(r.as_row(), J=J) for r in (V.report, rho.report)]
    pio.write_csv(run.out / "solver_report.csv", SolverReport.CSV_FIELDS + ("J",), rows, run.digest)
    print(f"J = {J:.12g}  (substeps {V.report.substeps_used}, mass drift {rho.report.mass_drift_max:.2e})")
    return EXIT_OK


def cmd_flow(run: Run) -> int:
    sp, grid, u0, solver = _setup(run.cfg)
    try:
        fc = FlowConfig(solver=solver, **{k: run.cfg[k] for k in _FLOW_KEYS if k in run.cfg})
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    trace_path = run.out / "trace.csv"
    try:
        res = run_flow(sp, u0, fc)
    except StepFailure as exc:
        pio.write_csv(trace_path, TRACE_FIELDS, exc.diagnostics.get("trace", []), run.digest)
        raise
    pio.write_csv(trace_path, TRACE_FIELDS, res.trace, run.digest)
    _dump(run, "control", res.state.u)
    _dump(run, "value", res.state.V)
    last = res.trace[-1]
    summary = [[res.stop_reason, len(res.trace) - 1, last["J"], last["grad_norm"], last["dist_to_local"]]]
    pio.write_csv(
        run.out / "flow_summary.csv", ("stop_reason", "steps", "J", "grad_norm", "dist_to_local"), summary, run.digest
    )
    flag = "  [maxed]" if res.stop_reason == "maxed" else ""
    print(f"stop={res.stop_reason} steps={len(res.trace) - 1} J={last['J']:.12g} grad_norm={last['grad_norm']:.3e}{flag}")
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    sp, grid, u, _ = _setup(run.cfg)
    if run.cfg["n_paths"] < 1 or run.cfg["n_steps"] < 1:
        raise ConfigError("n_paths and n_steps must be positive")
    batch = simulate(sp, u, run.cfg["n_paths"], run.cfg["n_steps"], run.cfg["seed"])
    pio.write_batch(run.out / "batch.trj", batch, run.digest)
    est = estimate_J_mc(sp, u, batch)
    pio.write_csv(
        run.out / "estimate.csv",
        ("estimate", "std_error", "n_paths", "n_steps", "seed"),
        [[est["estimate"], est["std_error"], est["n_paths"], batch.n_steps, batch.seed]],
        run.digest,
    )
    print(f"J_mc = {est['estimate']:.8g} +/- {est['std_error']:.2e} ({est['n_paths']} paths)")
    return EXIT_OK


def verify_plan(cfg: dict):
    """Selected criterion numbers and validated per-criterion overrides."""
    numbers = {c.number for c in acceptance.CRITERIA}
    sel = cfg.get("criteria", "all").strip()
    if sel == "all":
        chosen = sorted(numbers)
    else:
        try:
            chosen = sorted({int(s) for s in sel.split(",") if s.strip()})
        except ValueError:
            raise ConfigError(f"bad criteria list {sel!r}") from None
        bad = [k for k in chosen if k not in numbers]
        if bad or not chosen:
            raise ConfigError(f"unknown criteria {bad}; choose from {sorted(numbers)}")
    overrides: dict = {}
    for key, raw in cfg.items():
        m = _OVERRIDE.match(key)
        if not m:
            continue
        k, name = int(m.group(1)), m.group(2)
        if k not in numbers:
            raise ConfigError(f"override {key!r} names an unknown criterion")
        exp = acceptance.CRITERIA[k - 1].experiments[0]
        defaults = EXPERIMENT_DEFAULTS[exp]
        if name not in defaults:
            raise ConfigError(f"override {key!r}: {exp} has no setting {name!r}")
        try:
            default = defaults[name]
            overrides.setdefault(k, {})[name] = _bool(raw) if isinstance(default, bool) else type(default)(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return chosen, overrides


def cmd_verify(run: Run) -> int:
    chosen, overrides = verify_plan(run.cfg)
    results = acceptance.run_acceptance(chosen, overrides, out_dir=None, echo=print)
    acceptance.write_verdicts(run.out / "acceptance.csv", results, run.digest)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_NUMERIC


COMMANDS = {"solve": cmd_solve, "flow": cmd_flow, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value run configuration (required)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", metavar="U64", help="overrides the seed key")
    common.add_argument("--threads", metavar="N", type=int, help="cap on worker threads (default: all cores)")
    parser = argparse.ArgumentParser(prog="pgflow", description="Policy-gradient flow solver and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "value and density of a fixed control",
        "flow": "gradient flow from an initial control",
        "simulate": "Euler-Maruyama batch and Monte Carlo cost",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    v = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    v.add_argument("--list", action="store_true", help="print the criteria without running them")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "list", False):
        for line in acceptance.list_criteria():
            print(line)
        return EXIT_OK
    if not args.config:
        parser.error("--config is required")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        run = _prepare(args.command, load_config(args.config), args)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"pgflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PGFlowError as exc:
        print(f"pgflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
