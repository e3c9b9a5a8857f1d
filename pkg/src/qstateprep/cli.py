"""Command-line interface: solve-mlp, optimize-mp, simulate, bench.

Every command echoes its fully resolved configuration under "config". Writing
that block to a key=value file and passing it back with --config reproduces
the output byte for byte.
"""
from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, fields
import json
import math
from pathlib import Path
import sys
import traceback

import numpy as np

from . import __version__
from . import bench
from .bloch import ControlPulse, SystemParams, polar_target
from .errors import DomainError, NonPureTarget
from .mlp import BoundaryPair, solve_mlp
from .mp import OptimizationProblem, crab_optimize, grape_optimize, optimize_single_pulse
from .serialize import dumps, write_text
from .trajectories import STUDY_DELTAS, final_state_histogram, simulate_ensemble, success_rate

EXIT_OK, EXIT_INTERNAL, EXIT_DOMAIN = 0, 1, 2
VECTOR_OPTIONS = ("--target", "--initial", "--omegas", "--sizes", "--z-plane")
REFERENCE_TARGET_TEXT = "-0.86602540378443860,0,-0.5"


@dataclass
class RunConfig:
    epsilon: float = 1.0
    gamma: float | None = None
    g: float | None = None
    kappa: float | None = None
    dt: float = 0.01
    n_total: int = 10_000
    master_seed: int = 0
    delta: float = 0.005
    omega_cap: float = 20.0
    output_path: str | None = None
    output_format: str = "json"

    def resolve(self) -> "RunConfig":
        """Fill gamma or (g, kappa) so that gamma = 2 g^2 kappa holds.

        All three may be given only if they already agree (an echoed config).
        """
        kappa = 1.0 if self.kappa is None else self.kappa
        if self.gamma is not None and self.g is not None:
            if not math.isclose(2.0 * self.g**2 * kappa, self.gamma, rel_tol=1e-12, abs_tol=1e-300):
                raise DomainError("give either gamma or g (with kappa), not both")
        elif self.gamma is None:
            self.gamma = 0.1 if self.g is None else 2.0 * self.g**2 * kappa
            self.g = math.sqrt(self.gamma / (2.0 * kappa))
        else:
            self.g = math.sqrt(self.gamma / (2.0 * kappa))
        self.kappa = kappa
        if self.output_format not in ("json", "csv"):
            raise DomainError(f"unknown output format {self.output_format!r}")
        return self

    def params(self) -> SystemParams:
        return SystemParams(self.epsilon, self.g, self.kappa)


RUN_FIELDS = {f.name for f in fields(RunConfig)}

COMMAND_DEFAULTS = {
    "solve-mlp": {"target": REFERENCE_TARGET_TEXT, "initial": "0,0,-1", "purity_tol": 1e-3},
    "optimize-mp": {
        "target": REFERENCE_TARGET_TEXT,
        "initial": "0,0,-1",
        "purity_tol": 1e-3,
        "method": "single",
        "segments": 1,
        "total_time": None,
        "restarts": 16,
        "max_iters": 500,
        "basis": 2,
    },
    "simulate": {
        "target": REFERENCE_TARGET_TEXT,
        "initial": "0,0,-1",
        "purity_tol": 1e-3,
        "pulse": "mlp",
        "omegas": None,
        "total_time": None,
        "pulse_file": None,
        "include_finals": False,
    },
    "bench": {
        "experiment": "table1",
        "coarse": False,
        "z_plane": "-0.5",
        "n_phi": 25,
        "n_gamma": 21,
        "sizes": "100,1000,10000",
        "repeats": 100,
        "target": None,
        "purity_tol": 1e-3,
        "phi": 11 * math.pi / 8,
    },
}


def parse_vector(text: str) -> np.ndarray:
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise DomainError(f"expected three comma-separated numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def parse_floats(text: str) -> list:
    return [float(p) for p in str(text).replace(" ", "").split(",") if p]


def pure_state(text: str, tol: float, what: str = "target") -> np.ndarray:
    """Parse a state and snap it onto the sphere if within ``tol`` of unit norm."""
    q = parse_vector(text)
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > tol:
        raise NonPureTarget(f"{what} state {q.tolist()} is not pure: |q| = {n:.12g}")
    return q / n


def read_config_file(path) -> dict:
    """Plain key=value lines; '#' starts a comment. Dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def format_config(cfg: dict) -> str:
    """Inverse of :func:`read_config_file` for an echoed config block."""
    lines = []
    for k, v in cfg.items():
        if v is None:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = format(v, ".17g")
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def _to_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"not a boolean: {v!r}")


def _coerce(key: str, value, template):
    """Convert a config-file string to the type of the default value."""
    if value is None or not isinstance(value, str):
        return value
    if key in ("gamma", "g", "kappa", "total_time", "epsilon", "dt", "delta", "omega_cap", "purity_tol", "phi"):
        return float(value)
    if isinstance(template, bool):
        return _to_bool(value)
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    return value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float, help="dephasing rate (excludes --g/--kappa)")
    p.add_argument("--g", type=float, help="noise coupling")
    p.add_argument("--kappa", type=float, help="noise spectral density")
    p.add_argument("--dt", type=float)
    p.add_argument("--n-total", dest="n_total", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--omega-cap", dest="omega_cap", type=float)
    p.add_argument("--output", dest="output_path")
    p.add_argument("--format", dest="output_format", choices=["json", "csv"])
    p.add_argument("--threads", type=int, default=1, help="worker hint; never changes results")


def _state_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", help="x,y,z of the target state")
    p.add_argument("--initial", help="x,y,z of the initial state")
    p.add_argument("--purity-tol", dest="purity_tol", type=float, help="allowed | |q| - 1 | before rejection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qstateprep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-mlp", help="closed-form most-likely-path control")
    _common(p)
    _state_args(p)

    p = sub.add_parser("optimize-mp", help="maximize mean-path fidelity")
    _common(p)
    _state_args(p)
    p.add_argument("--method", choices=["single", "grape", "crab"])
    p.add_argument("--segments", type=int)
    p.add_argument("--total-time", dest="total_time", type=float, help="defaults to the MLP optimal time")
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--basis", type=int, help="CRAB Fourier terms")

    p = sub.add_parser("simulate", help="unravelled trajectory ensemble")
    _common(p)
    _state_args(p)
    p.add_argument("--pulse", choices=["mlp", "mp", "inline", "file"])
    p.add_argument("--omegas", help="comma-separated segment drives for --pulse inline")
    p.add_argument("--total-time", dest="total_time", type=float)
    p.add_argument("--pulse-file", dest="pulse_file", help="JSON pulse, or an optimize-mp output")
    p.add_argument("--include-finals", dest="include_finals", action="store_const", const=True)

    p = sub.add_parser("bench", help="sweeps, multi-pulse table, tolerance calibration")
    _common(p)
    p.add_argument("--experiment", choices=["sweep", "table1", "tolerance", "regimes"])
    p.add_argument("--coarse", action="store_const", const=True, help="9x6 sweep grid at n_total=1000")
    p.add_argument("--z-plane", dest="z_plane", help="comma-separated z planes for the sweep")
    p.add_argument("--n-phi", dest="n_phi", type=int)
    p.add_argument("--n-gamma", dest="n_gamma", type=int)
    p.add_argument("--sizes", help="ensemble sizes for tolerance calibration")
    p.add_argument("--repeats", type=int)
    p.add_argument("--target", help="x,y,z target for tolerance/regimes")
    p.add_argument("--purity-tol", dest="purity_tol", type=float)
    p.add_argument("--phi", type=float, help="azimuth of the regimes target on the z plane")
    return parser


def resolve(ns: argparse.Namespace) -> tuple[RunConfig, dict]:
    """Merge defaults < config file < flags into a RunConfig and command options."""
    cmd = ns.command
    defaults = {**asdict(RunConfig()), **COMMAND_DEFAULTS[cmd]}
    if cmd == "bench" and ns.experiment == "sweep":
        defaults["output_format"] = "csv"
    merged = dict(defaults)
    if ns.config:
        for k, v in read_config_file(ns.config).items():
            if k not in defaults:
                raise DomainError(f"unknown config key {k!r} for {cmd}")
            merged[k] = _coerce(k, v, defaults[k])
    for k, v in vars(ns).items():
        if k in defaults and v is not None:
            merged[k] = v
    # a gamma flag overrides g from a file, a g flag overrides a file gamma
    if ns.gamma is not None and ns.g is None:
        merged["g"] = None
    elif ns.g is not None and ns.gamma is None:
        merged["gamma"] = None
    cfg = RunConfig(**{k: merged[k] for k in RUN_FIELDS}).resolve()
    opts = {k: merged[k] for k in COMMAND_DEFAULTS[cmd]}
    return cfg, opts


def _echo(cfg: RunConfig, opts: dict) -> dict:
    # the output location is not part of what was computed
    out = {k: v for k, v in asdict(cfg).items() if k != "output_path"}
    return {**out, **opts}


def _boundary(opts) -> BoundaryPair:
    tol = opts["purity_tol"]
    return BoundaryPair(pure_state(opts["initial"], tol, "initial"), pure_state(opts["target"], tol))


def _mlp_time(b, cfg) -> float:
    return solve_mlp(b, cfg.epsilon, cfg.omega_cap).time


def cmd_solve_mlp(cfg: RunConfig, opts: dict, threads: int = 1) -> dict:
    b = _boundary(opts)
    control = solve_mlp(b, cfg.epsilon, cfg.omega_cap)
    return {**control.to_dict(), "initial": b.initial, "target": b.target}


def cmd_optimize_mp(cfg: RunConfig, opts: dict, threads: int = 1) -> dict:
    b = _boundary(opts)
    T = opts["total_time"] if opts["total_time"] is not None else _mlp_time(b, cfg)
    problem = OptimizationProblem(
        b, cfg.params(), T, opts["segments"], (-cfg.omega_cap, cfg.omega_cap), cfg.dt
    )
    method = opts["method"]
    if method == "single":
        if opts["segments"] != 1:
            raise DomainError("--method single needs --segments 1")
        res = optimize_single_pulse(problem)
    elif method == "grape":
        res = grape_optimize(problem, opts["max_iters"], opts["restarts"], cfg.master_seed, threads=threads)
    else:
        res = crab_optimize(
            problem, opts["basis"], max(opts["max_iters"], 1), opts["restarts"], cfg.master_seed, threads=threads
        )
    return {**res.to_dict(), "problem": problem.to_dict()}


def _load_pulse(opts, cfg, b) -> ControlPulse:
    kind = opts["pulse"]
    if kind == "mlp":
        return solve_mlp(b, cfg.epsilon, cfg.omega_cap).pulse(cfg.omega_cap)
    if kind == "mp":
        T = opts["total_time"] if opts["total_time"] is not None else _mlp_time(b, cfg)
        problem = OptimizationProblem(b, cfg.params(), T, 1, (-cfg.omega_cap, cfg.omega_cap), cfg.dt)
        return optimize_single_pulse(problem).pulse
    if kind == "inline":
        if opts["omegas"] is None or opts["total_time"] is None:
            raise DomainError("--pulse inline needs --omegas and --total-time")
        return ControlPulse.piecewise(parse_floats(opts["omegas"]), opts["total_time"], cfg.omega_cap)
    if opts["pulse_file"] is None:
        raise DomainError("--pulse file needs --pulse-file")
    data = json.loads(Path(opts["pulse_file"]).read_text(encoding="utf-8"))
    data = data.get("result", data)
    data = data.get("pulse", data)
    return ControlPulse.from_dict(data, cfg.omega_cap)


def cmd_simulate(cfg: RunConfig, opts: dict, threads: int = 1) -> dict:
    b = _boundary(opts)
    pulse = _load_pulse(opts, cfg, b)
    ens = simulate_ensemble(
        b.initial, pulse, cfg.params(), cfg.dt, cfg.n_total, cfg.master_seed, target=b.target, threads=threads
    )
    deltas = sorted(set(STUDY_DELTAS) | {cfg.delta})
    out = {
        "pulse": pulse.to_dict(),
        "ensemble": ens.to_dict(include_finals=opts["include_finals"] or cfg.n_total == 1),
        "success": [success_rate(ens, b.target, d).to_dict() for d in deltas if ens.complete or d in STUDY_DELTAS],
        "histograms": {},
    }
    for ax in "xyz":
        h = final_state_histogram(ens, ax)
        out["histograms"][ax] = {"edges": h.edges, "counts": h.counts}
    return out


def _histogram_csvs(result: dict) -> dict:
    files = {}
    for ax, h in result["histograms"].items():
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
            lines.append(f"{lo:.17g},{hi:.17g},{int(c)}")
        files[ax] = "\n".join(lines) + "\n"
    return files


def cmd_bench(cfg: RunConfig, opts: dict, threads: int = 1):
    exp = opts["experiment"]
    params = cfg.params()
    if exp == "sweep":
        cells = []
        grids = []
        for z in parse_floats(opts["z_plane"]):
            if opts["coarse"]:
                grid = bench.SweepGrid.coarse(z, cfg.delta)
            else:
                grid = bench.SweepGrid.standard(z, opts["n_phi"], opts["n_gamma"], cfg.n_total, cfg.delta)
            grids.append(grid.to_dict())
            cells += bench.run_sweep(grid, params, cfg.master_seed, cfg.dt, cfg.omega_cap, threads)
        meta = bench.provenance(cfg.master_seed, cfg.dt, grids[0]["n_total"], grid=grids)
        return {"provenance": meta, "cells": [c.row() for c in cells], "csv": bench.sweep_csv(cells)}
    if exp == "table1":
        report = bench.run_table1(cfg.master_seed, cfg.n_total, dt=cfg.dt, threads=threads)
        report["table_text"] = bench.table1_text(report)
        return report
    target = bench.TOLERANCE_TARGET if opts["target"] is None else pure_state(opts["target"], opts["purity_tol"])
    if exp == "tolerance":
        b = BoundaryPair.from_ground(target)
        pulse = solve_mlp(b, cfg.epsilon, cfg.omega_cap).pulse(cfg.omega_cap)
        spec = bench.ToleranceCalibration(tuple(int(n) for n in parse_floats(opts["sizes"])), opts["repeats"])
        cal = bench.calibrate_tolerance(b.target, pulse, params, spec, cfg.master_seed, cfg.dt, threads)
        return {
            "provenance": bench.provenance(cfg.master_seed, cfg.dt, max(spec.ensemble_sizes), target=b.target),
            "pulse": pulse.to_dict(),
            "calibration": cal.to_dict(),
        }
    # regimes: default target sits on the first z plane at azimuth phi
    if opts["target"] is None:
        target = polar_target(parse_floats(opts["z_plane"])[0], opts["phi"])
    return bench.regime_diagnostics(target, cfg.gamma, params, cfg.master_seed, cfg.dt)


COMMANDS = {
    "solve-mlp": cmd_solve_mlp,
    "optimize-mp": cmd_optimize_mp,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def _emit(text: str, path: str | None, stdout) -> None:
    if path:
        write_text(path, text)
    else:
        stdout.write(text)


def _write_outputs(cmd, cfg, opts, result, stdout) -> None:
    echo = _echo(cfg, opts)
    path = cfg.output_path
    if cmd == "bench" and opts["experiment"] == "sweep" and cfg.output_format == "csv":
        _emit(result["csv"], path, stdout)
        if path:
            write_text(path + ".meta.json", dumps({"config": echo, "provenance": result["provenance"]}))
        return
    if cfg.output_format == "csv":
        raise DomainError(f"csv output is only available for the sweep experiment, not {cmd}")
    doc = {"command": cmd, "version": __version__, "config": echo, "result": result}
    if cmd == "bench" and opts["experiment"] == "sweep":
        result.pop("csv")
    _emit(dumps(doc), path, stdout)
    if path and cmd == "simulate":
        stem = str(Path(path).with_suffix(""))
        for ax, text in _histogram_csvs(result).items():
            write_text(f"{stem}_hist_{ax}.csv", text)
    if path and cmd == "bench" and opts["experiment"] == "table1":
        write_text(str(Path(path).with_suffix(".txt")), result["table_text"])


def _join_vector_args(argv):
    """Allow ``--target -0.8,0,-0.6``: argparse would read the value as a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in VECTOR_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    argv = _join_vector_args(list(sys.argv[1:] if argv is None else argv))
    ns = build_parser().parse_args(argv)
    try:
        cfg, opts = resolve(ns)
        result = COMMANDS[ns.command](cfg, opts, max(1, ns.threads))
        _write_outputs(ns.command, cfg, opts, result, stdout)
        return EXIT_OK
    except DomainError as exc:
        stdout.write(dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_DOMAIN}))
        return EXIT_DOMAIN
    except (ValueError, OSError) as exc:
        stdout.write(dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_DOMAIN}))
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        stdout.write(dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_INTERNAL}))
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
