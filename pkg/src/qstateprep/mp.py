"""Mean-path control search: maximize the Lindblad final-state fidelity.

Three searches over piecewise-constant Rabi drives on a fixed horizon:
a 1-D grid plus golden-section search for a single pulse, GRAPE-style projected
gradient ascent with adjoint gradients, and a CRAB-style Nelder-Mead search
over a randomized Fourier basis.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .bloch import (
    DEFAULT_DT,
    OMEGA_CAP,
    ControlPulse,
    SystemParams,
    drive_derivative,
    fidelity,
    lindblad_evolve,
    lindblad_generator,
)
from .errors import GradientCheckFailed
from .mlp import BoundaryPair, solve_mlp
from .rng import stream

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GRID_POINTS = 401
FD_STEP = 1e-5
GRAD_RTOL = 1e-4


@dataclass
class OptimizationProblem:
    boundary: BoundaryPair
    params: SystemParams
    total_time: float | None = None
    n_segments: int = 1
    omega_bounds: tuple = (-OMEGA_CAP, OMEGA_CAP)
    dt: float = DEFAULT_DT
    method: str = "exact"

    def __post_init__(self):
        if self.total_time is None:
            self.total_time = solve_mlp(self.boundary, self.params.epsilon).time
        lo, hi = self.omega_bounds
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")
        if self.n_segments < 1:
            raise ValueError("n_segments must be at least 1")
        if not lo < hi or max(abs(lo), abs(hi)) > OMEGA_CAP:
            raise ValueError(f"bad omega bounds {self.omega_bounds}")
        self.omega_bounds = (float(lo), float(hi))

    def pulse(self, values) -> ControlPulse:
        return ControlPulse.piecewise(values, self.total_time)

    def clip(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), *self.omega_bounds)

    def to_dict(self) -> dict:
        return {
            "initial": self.boundary.initial.tolist(),
            "target": self.boundary.target.tolist(),
            "params": self.params.to_dict(),
            "total_time": self.total_time,
            "n_segments": self.n_segments,
            "omega_bounds": list(self.omega_bounds),
            "dt": self.dt,
            "method": self.method,
        }


@dataclass
class OptimizationResult:
    pulse: ControlPulse
    objective: float
    n_evaluations: int
    converged: bool
    restarts_used: int
    method: str = ""
    restart_objectives: list = field(default_factory=list)
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "pulse": self.pulse.to_dict(),
            "objective": self.objective,
            "n_evaluations": self.n_evaluations,
            "converged": self.converged,
            "restarts_used": self.restarts_used,
            "restart_objectives": list(self.restart_objectives),
        }


def objective(problem: OptimizationProblem, pulse: ControlPulse) -> float:
    """Fidelity of the Lindblad final state with the target."""
    q = lindblad_evolve(problem.boundary.initial, pulse, problem.params, problem.dt, method=problem.method)
    return float(fidelity(q, problem.boundary.target))


class _Counter:
    """Objective wrapper that counts evaluations."""

    def __init__(self, problem):
        self.problem = problem
        self.n = 0

    def __call__(self, values) -> float:
        self.n += 1
        return objective(self.problem, self.problem.pulse(values))


def golden_section_max(f, a: float, b: float, tol: float = 1e-10, max_iter: int = 200):
    """Maximize a unimodal f on [a, b]. Returns (x, f(x), n_evals, converged)."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        n += 1
    x, fx = (c, fc) if fc >= fd else (d, fd)
    return x, fx, n, abs(b - a) <= tol


def optimize_single_pulse(problem: OptimizationProblem, n_grid: int = GRID_POINTS, tol: float = 1e-10) -> OptimizationResult:
    """Coarse grid over the bounds, then golden-section refinement around the best point."""
    f = _Counter(problem)
    lo, hi = problem.omega_bounds
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([f([w]) for w in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    x, fx, _, converged = golden_section_max(lambda w: f([w]), a, b, tol=tol)
    if vals[i] > fx:
        x, fx = grid[i], vals[i]
    values = [float(x)] * problem.n_segments
    pulse = problem.pulse(values)
    return OptimizationResult(pulse, objective(problem, pulse), f.n, converged, 1, "single", [fx])


def _propagators(problem, values):
    h = problem.total_time / len(values)
    eps, gam = problem.params.epsilon, problem.params.gamma
    return [expm(lindblad_generator(w, gam, eps) * h) for w in values], h


def adjoint_gradient(problem: OptimizationProblem, values) -> tuple[float, np.ndarray]:
    """Objective and its gradient with respect to each segment value.

    Forward pass stores the state at every segment boundary; the costate is
    propagated backwards from q_F / 2. Per segment the gradient is the time
    integral of costate . (dA/dOmega) . state, evaluated exactly as the
    off-diagonal block of a block-triangular matrix exponential.
    """
    values = np.asarray(values, dtype=float)
    if problem.method == "euler":
        return _euler_adjoint(problem, values)
    props, h = _propagators(problem, values)
    eps, gam = problem.params.epsilon, problem.params.gamma
    B = drive_derivative()
    states = [problem.boundary.initial.copy()]
    for P in props:
        states.append(P @ states[-1])
    lam = 0.5 * problem.boundary.target
    F = 0.5 + float(lam @ states[-1])
    grad = np.empty(len(values))
    for j in range(len(values) - 1, -1, -1):
        A = lindblad_generator(values[j], gam, eps)
        block = np.zeros((6, 6))
        block[:3, :3] = A
        block[:3, 3:] = B
        block[3:, 3:] = A
        dP = expm(block * h)[:3, 3:]
        grad[j] = lam @ dP @ states[j]
        lam = props[j].T @ lam
    return F, grad


def _euler_adjoint(problem, values):
    """Discrete adjoint through the explicit-Euler mean-path map."""
    pulse = problem.pulse(values)
    widths, per_step = pulse.step_grid(problem.dt)
    eps, gam = problem.params.epsilon, problem.params.gamma
    B = drive_derivative()
    seg_of_step = np.repeat(np.arange(len(values)), pulse.segment_steps(problem.dt))
    states = [problem.boundary.initial.copy()]
    mats = []
    for h, w in zip(widths, per_step):
        M = np.eye(3) + h * lindblad_generator(w, gam, eps)
        mats.append(M)
        states.append(M @ states[-1])
    lam = 0.5 * problem.boundary.target
    F = 0.5 + float(lam @ states[-1])
    grad = np.zeros(len(values))
    for k in range(len(widths) - 1, -1, -1):
        grad[seg_of_step[k]] += widths[k] * (lam @ B @ states[k])
        lam = mats[k].T @ lam
    return F, grad


def finite_difference_gradient(problem: OptimizationProblem, values, step: float = FD_STEP) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    grad = np.empty(len(values))
    for j in range(len(values)):
        up, dn = values.copy(), values.copy()
        up[j] += step
        dn[j] -= step
        grad[j] = (objective(problem, problem.pulse(up)) - objective(problem, problem.pulse(dn))) / (2 * step)
    return grad


def gradient_check(problem: OptimizationProblem, values, step: float = FD_STEP) -> float:
    """Relative error between adjoint and central-difference gradients."""
    _, ga = adjoint_gradient(problem, values)
    gf = finite_difference_gradient(problem, values, step)
    scale = max(np.linalg.norm(gf), np.linalg.norm(ga), 1e-8)
    return float(np.linalg.norm(ga - gf) / scale)


def _initial_values(problem, rng, init_scale):
    lo, hi = problem.omega_bounds
    return rng.uniform(max(lo, -init_scale), min(hi, init_scale), problem.n_segments)


def _ascend(problem, x, max_iters, gtol, c1=1e-4):
    n_eval = 0
    F, g = adjoint_gradient(problem, x)
    n_eval += 1
    history = [F]
    converged = False
    for _ in range(max_iters):
        if np.linalg.norm(problem.clip(x + g) - x) < gtol:
            converged = True
            break
        s = 1.0
        while True:
            xn = problem.clip(x + s * g)
            Fn = objective(problem, problem.pulse(xn))
            n_eval += 1
            if Fn >= F + c1 * float(g @ (xn - x)):
                break
            s *= 0.5
            if s < 1e-14:
                xn = None
                break
        if xn is None:
            converged = True
            break
        x = xn
        F, g = adjoint_gradient(problem, x)
        n_eval += 1
        history.append(F)
    return x, F, n_eval, converged, history


def _best(results):
    # highest objective wins; ties go to the lowest restart index
    return max(range(len(results)), key=lambda i: (results[i][1], -i))


def _run_restarts(job, restarts, threads):
    if threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(restarts)))
    return [job(r) for r in range(restarts)]


def grape_optimize(
    problem: OptimizationProblem,
    max_iters: int = 500,
    restarts: int = 16,
    seed: int = 0,
    *,
    init_scale: float = 2.0,
    gtol: float = 1e-7,
    check_gradient: bool = True,
    threads: int = 1,
) -> OptimizationResult:
    """Projected gradient ascent from several random starting pulses.

    Starting values are uniform in [-init_scale, init_scale] (intersected with
    the bounds) drawn from ``stream(seed, restart)``. Steps use Armijo
    backtracking, halving from 1.
    """
    if check_gradient:
        x0 = _initial_values(problem, stream(seed, 0), init_scale)
        err = gradient_check(problem, x0)
        if err > GRAD_RTOL:
            raise GradientCheckFailed(f"adjoint vs finite-difference relative error {err:.3g}")

    def job(r):
        x0 = _initial_values(problem, stream(seed, r), init_scale)
        return _ascend(problem, x0, max_iters, gtol)

    results = _run_restarts(job, restarts, threads)
    i = _best(results)
    x, F, _, converged, history = results[i]
    pulse = problem.pulse(x)
    return OptimizationResult(
        pulse,
        objective(problem, pulse),
        sum(r[2] for r in results),
        converged,
        restarts,
        "grape",
        [r[1] for r in results],
        history,
    )


def crab_frequencies(n_basis: int, total_time: float, rng) -> np.ndarray:
    """nu_k = (2 pi k / T)(1 + u) with a single u ~ U[-0.5, 0.5]."""
    k = np.arange(1, n_basis + 1)
    return 2.0 * math.pi * k / total_time * (1.0 + rng.uniform(-0.5, 0.5))


def crab_segment_values(coeffs, freqs, total_time: float, n_segments: int) -> np.ndarray:
    """Average of a0 + sum a_k cos(nu_k t) + b_k sin(nu_k t) over each segment."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = len(freqs)
    a0, a, b = coeffs[0], coeffs[1 : n + 1], coeffs[n + 1 :]
    edges = np.linspace(0.0, total_time, n_segments + 1)
    t0, t1 = edges[:-1, None], edges[1:, None]
    span = t1 - t0
    cos_avg = (np.sin(freqs * t1) - np.sin(freqs * t0)) / (freqs * span)
    sin_avg = (np.cos(freqs * t0) - np.cos(freqs * t1)) / (freqs * span)
    return a0 + cos_avg @ a + sin_avg @ b


def crab_optimize(
    problem: OptimizationProblem,
    n_basis: int = 2,
    max_iters: int = 2000,
    restarts: int = 8,
    seed: int = 0,
    *,
    init_scale: float = 2.0,
    threads: int = 1,
) -> OptimizationResult:
    """Nelder-Mead over randomized Fourier coefficients.

    Each restart draws nu_k = (2 pi k / T)(1 + u), one u ~ U[-0.5, 0.5], and
    starting coefficients uniform in [-init_scale, init_scale]. The continuous
    drive is averaged onto the problem's segments and clipped to the bounds
    before evaluation. With ``n_basis=0`` the drive is a constant and the
    single-pulse search is used.
    """
    if n_basis < 0:
        raise ValueError("n_basis must be non-negative")
    if n_basis == 0:
        res = optimize_single_pulse(problem)
        res.method = "crab"
        return res
    T, m = problem.total_time, problem.n_segments

    def job(r):
        rng = stream(seed, r)
        freqs = crab_frequencies(n_basis, T, rng)
        c0 = rng.uniform(-init_scale, init_scale, 1 + 2 * n_basis)
        count = [0]
        trace = []

        def neg(c):
            count[0] += 1
            vals = problem.clip(crab_segment_values(c, freqs, T, m))
            return -objective(problem, problem.pulse(vals))

        def record(intermediate_result):
            trace.append(-float(intermediate_result.fun))

        res = minimize(
            neg,
            c0,
            method="Nelder-Mead",
            callback=record,
            options={"maxiter": max_iters, "xatol": 1e-10, "fatol": 1e-13, "adaptive": True},
        )
        vals = problem.clip(crab_segment_values(res.x, freqs, T, m))
        return vals, -float(res.fun), count[0], bool(res.success), trace

    results = _run_restarts(job, restarts, threads)
    i = _best(results)
    vals, F, _, converged, trace = results[i]
    pulse = problem.pulse(vals)
    return OptimizationResult(
        pulse,
        objective(problem, pulse),
        sum(r[2] for r in results),
        converged,
        restarts,
        "crab",
        [r[1] for r in results],
        trace,
    )
