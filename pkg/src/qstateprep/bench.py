"""Experiment harness: success-rate sweeps, the multi-pulse comparison table,
infidelity-tolerance calibration and per-regime trajectory bundles."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from . import __version__
from .bloch import (
    DEFAULT_DT,
    GROUND_STATE,
    OMEGA_CAP,
    ControlPulse,
    SystemParams,
    fidelity,
    lindblad_path,
    polar_target,
)
from .errors import DomainError
from .mlp import BoundaryPair, MlpControl, solve_mlp
from .mp import OptimizationProblem, crab_optimize, grape_optimize, optimize_single_pulse
from .rng import derive_seed, stream
from .trajectories import DEFAULT_DELTA, simulate_ensemble, simulate_trajectory, success_rate

REFERENCE_TARGET = np.array([-math.sin(2 * math.pi / 3), 0.0, -0.5])
TOLERANCE_TARGET = np.array([-0.16, -0.58, -0.8]) / np.linalg.norm([-0.16, -0.58, -0.8])

SWEEP_COLUMNS = ["z_F", "phi_F", "gamma", "s_mlp", "s_mp", "diff", "omega_mlp", "t_mlp", "omega_mp", "skip_reason"]


def provenance(seed: int, dt: float, n_total: int, **extra) -> dict:
    out = {"seed": seed, "dt": dt, "n_total": n_total, "version": __version__}
    out.update(extra)
    return out


@dataclass
class SweepGrid:
    z_plane: float
    phi_values: list
    gamma_values: list
    n_total: int = 10_000
    delta: float = DEFAULT_DELTA

    @classmethod
    def standard(cls, z_plane: float, n_phi: int = 25, n_gamma: int = 21, n_total: int = 10_000, delta: float = DEFAULT_DELTA):
        phis = np.linspace(math.pi / 2, 3 * math.pi / 2, n_phi).tolist()
        gammas = np.linspace(0.0, 1.0, n_gamma).tolist()
        return cls(z_plane, phis, gammas, n_total, delta)

    @classmethod
    def coarse(cls, z_plane: float, delta: float = DEFAULT_DELTA):
        return cls.standard(z_plane, n_phi=9, n_gamma=6, n_total=1_000, delta=delta)

    def to_dict(self) -> dict:
        return {
            "z_plane": self.z_plane,
            "phi_values": list(self.phi_values),
            "gamma_values": list(self.gamma_values),
            "n_total": self.n_total,
            "delta": self.delta,
        }


@dataclass
class SweepCell:
    target: np.ndarray
    phi: float
    gamma: float
    s_mlp: float = float("nan")
    s_mp: float = float("nan")
    mlp_control: MlpControl | None = None
    mp_omega: float = float("nan")
    skip_reason: str = ""

    @property
    def diff(self) -> float:
        return self.s_mlp - self.s_mp

    @property
    def skipped(self) -> bool:
        return bool(self.skip_reason)

    def row(self) -> dict:
        c = self.mlp_control
        return {
            "z_F": float(self.target[2]),
            "phi_F": self.phi,
            "gamma": self.gamma,
            "s_mlp": self.s_mlp,
            "s_mp": self.s_mp,
            "diff": self.diff,
            "omega_mlp": c.omega if c else float("nan"),
            "t_mlp": c.time if c else float("nan"),
            "omega_mp": self.mp_omega,
            "skip_reason": self.skip_reason,
        }


def _sweep_cell(grid, params, master_seed, i_phi, i_gamma, dt, omega_cap):
    phi, gamma = grid.phi_values[i_phi], grid.gamma_values[i_gamma]
    target = polar_target(grid.z_plane, phi)
    cell = SweepCell(target, phi, gamma)
    b = BoundaryPair.from_ground(target)
    try:
        cell.mlp_control = solve_mlp(b, params.epsilon, omega_cap)
    except DomainError as exc:
        cell.skip_reason = type(exc).__name__
        return cell
    p = params.with_gamma(gamma)
    problem = OptimizationProblem(b, p, cell.mlp_control.time, 1, (-omega_cap, omega_cap), dt)
    mp = optimize_single_pulse(problem)
    cell.mp_omega = mp.pulse.omegas[0]
    # common random numbers: both controls see the same noise realizations
    seed = derive_seed(master_seed, i_phi, i_gamma)
    for attr, pulse in (("s_mlp", cell.mlp_control.pulse(omega_cap)), ("s_mp", mp.pulse)):
        ens = simulate_ensemble(GROUND_STATE, pulse, p, dt, grid.n_total, seed)
        setattr(cell, attr, success_rate(ens, target, grid.delta).rate_percent)
    return cell


def run_sweep(
    grid: SweepGrid,
    params: SystemParams | None = None,
    master_seed: int = 0,
    dt: float = DEFAULT_DT,
    omega_cap: float = OMEGA_CAP,
    threads: int = 1,
) -> list:
    """Success-rate difference MLP - MP over (phi, gamma) for one z plane.

    Cells whose MLP control diverges or exceeds the cap are returned with a
    ``skip_reason`` and NaN rates.
    """
    params = params or SystemParams()
    jobs = [(i, j) for i in range(len(grid.phi_values)) for j in range(len(grid.gamma_values))]

    def job(ij):
        return _sweep_cell(grid, params, master_seed, ij[0], ij[1], dt, omega_cap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, jobs))
    return [job(ij) for ij in jobs]


def sweep_csv(cells) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for cell in cells:
        row = cell.row()
        lines.append(",".join(_csv_value(row[c]) for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def _csv_value(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _evaluate(pulse, target, params, dt, n_total, seed):
    ens = simulate_ensemble(GROUND_STATE, pulse, params, dt, n_total, seed, target=target)
    return {
        "avg_fidelity": ens.avg_fidelity,
        "s_0.01": success_rate(ens, target, 0.01).rate_percent,
        "s_0.005": success_rate(ens, target, 0.005).rate_percent,
        "omegas": list(pulse.omegas),
        "total_time": pulse.total_time,
    }


def run_table1(
    master_seed: int = 0,
    n_total: int = 10_000,
    gammas=(0.1, 0.8),
    target=REFERENCE_TARGET,
    dt: float = DEFAULT_DT,
    n_segments: int = 3,
    grape_restarts: int = 16,
    crab_restarts: int = 8,
    threads: int = 1,
) -> dict:
    """Average fidelity and success rates for MLP_1, MP_1, GRAPE_m and CRAB_m."""
    b = BoundaryPair.from_ground(target)
    mlp = solve_mlp(b)
    rows = {}
    for k, gamma in enumerate(gammas):
        p = SystemParams.from_gamma(gamma)
        single = OptimizationProblem(b, p, mlp.time, 1, dt=dt)
        multi = OptimizationProblem(b, p, mlp.time, n_segments, dt=dt)
        results = {
            "MLP_1": (mlp.pulse(), None),
            "MP_1": _opt_pair(optimize_single_pulse(single)),
            f"GRAPE_{n_segments}": _opt_pair(grape_optimize(multi, restarts=grape_restarts, seed=master_seed, threads=threads)),
            f"CRAB_{n_segments}": _opt_pair(crab_optimize(multi, restarts=crab_restarts, seed=master_seed, threads=threads)),
        }
        seed = derive_seed(master_seed, k)
        rows[repr(float(gamma))] = {
            name: {**_evaluate(pulse, b.target, p, dt, n_total, seed), "objective": obj}
            for name, (pulse, obj) in results.items()
        }
    return {
        "provenance": provenance(master_seed, dt, n_total, target=list(map(float, target)), gammas=list(gammas)),
        "mlp_control": mlp.to_dict(),
        "rows": rows,
    }


def _opt_pair(res):
    return res.pulse, res.objective


def table1_text(report: dict) -> str:
    lines = []
    for gamma, methods in report["rows"].items():
        lines.append(f"gamma = {float(gamma):g} eps")
        lines.append(f"{'method':<10}{'F_bar':>10}{'s(0.01)':>10}{'s(0.005)':>10}  omegas")
        for name, r in methods.items():
            om = ", ".join(f"{w:+.3f}" for w in r["omegas"])
            lines.append(f"{name:<10}{r['avg_fidelity']:>10.4f}{r['s_0.01']:>10.2f}{r['s_0.005']:>10.2f}  [{om}]")
        lines.append("")
    return "\n".join(lines)


@dataclass
class ToleranceCalibration:
    ensemble_sizes: tuple = (100, 1_000, 10_000)
    n_repeats: int = 100
    infidelity_range: dict = field(default_factory=dict)
    infidelity_sd: dict = field(default_factory=dict)
    mean_component_sd: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ensemble_sizes": list(self.ensemble_sizes),
            "n_repeats": self.n_repeats,
            "infidelity_range": {str(k): v for k, v in self.infidelity_range.items()},
            "infidelity_sd": {str(k): v for k, v in self.infidelity_sd.items()},
            "mean_component_sd": {str(k): v for k, v in self.mean_component_sd.items()},
        }


def calibrate_tolerance(
    target,
    pulse: ControlPulse,
    params: SystemParams,
    spec: ToleranceCalibration | None = None,
    master_seed: int = 0,
    dt: float = DEFAULT_DT,
    threads: int = 1,
) -> ToleranceCalibration:
    """Spread of the average infidelity over repeated independent ensembles.

    For each ensemble size N, ``n_repeats`` ensembles are drawn with disjoint
    seeds; the range (max - min) and standard deviation of their average
    infidelities measure finite-size fluctuations.
    """
    spec = spec or ToleranceCalibration()
    out = ToleranceCalibration(tuple(spec.ensemble_sizes), spec.n_repeats)
    for i, n in enumerate(out.ensemble_sizes):
        infid, means = [], []
        for r in range(out.n_repeats):
            ens = simulate_ensemble(
                GROUND_STATE, pulse, params, dt, n, derive_seed(master_seed, i, r), target=target, threads=threads
            )
            infid.append(1.0 - ens.avg_fidelity)
            means.append(ens.mean_final)
        infid = np.array(infid)
        out.infidelity_range[n] = float(infid.max() - infid.min())
        out.infidelity_sd[n] = float(infid.std(ddof=1))
        out.mean_component_sd[n] = np.std(means, axis=0, ddof=1).tolist()
    return out


def regime_diagnostics(
    target,
    gamma: float,
    params: SystemParams | None = None,
    master_seed: int = 0,
    dt: float = DEFAULT_DT,
    n_samples: int = 10,
    omega_cap: float = OMEGA_CAP,
) -> dict:
    """Sample trajectories and the Lindblad mean path under MLP and MP controls."""
    params = (params or SystemParams()).with_gamma(gamma)
    b = BoundaryPair.from_ground(target)
    mlp = solve_mlp(b, params.epsilon, omega_cap)
    problem = OptimizationProblem(b, params, mlp.time, 1, (-omega_cap, omega_cap), dt)
    mp = optimize_single_pulse(problem)
    out = {"provenance": provenance(master_seed, dt, n_samples, gamma=gamma, target=list(map(float, b.target)))}
    for name, pulse in (("mlp", mlp.pulse(omega_cap)), ("mp", mp.pulse)):
        samples = []
        for i in range(n_samples):
            _, _, states = simulate_trajectory(GROUND_STATE, pulse, params, dt, stream(master_seed, i), record=True)
            samples.append(states)
        times, mean_path = lindblad_path(GROUND_STATE, pulse, params, dt)
        out[name] = {
            "omega": pulse.omegas[0],
            "time": pulse.total_time,
            "times": times,
            "samples": np.array(samples),
            "mean_path": mean_path,
            "mean_final_norm": float(np.linalg.norm(mean_path[-1])),
            "mean_final_fidelity": float(fidelity(mean_path[-1], b.target)),
        }
    return out
