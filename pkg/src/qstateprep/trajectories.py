"""Noise sampling, unravelled trajectory ensembles and success rates."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .bloch import (
    DEFAULT_DT,
    ControlPulse,
    SystemParams,
    exact_rotation_step,
    fidelity,
    require_pure,
    unravelled_step,
)
from .rng import derive_seed, stream

DEFAULT_DELTA = 0.005
STUDY_DELTAS = (0.001, 0.005, 0.01, 0.05)
DEFAULT_BINS = 61
MAX_RETAINED = 10**6
CHUNK = 2048


@dataclass
class NoisePath:
    """Discretized white noise: one xi value per step of width ``dt``."""

    values: np.ndarray
    dt: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.dt = np.broadcast_to(np.asarray(self.dt, dtype=float), self.values.shape).copy()

    def __len__(self):
        return len(self.values)

    @classmethod
    def zeros(cls, widths) -> "NoisePath":
        widths = np.asarray(widths, dtype=float)
        return cls(np.zeros_like(widths), widths)


def _noise_scale(widths, kappa: float):
    return np.sqrt(kappa / np.asarray(widths, dtype=float))


def sample_noise(n_steps: int, dt, kappa: float, rng: np.random.Generator) -> NoisePath:
    """i.i.d. N(0, kappa/dt) samples; ``dt`` may be a scalar or per-step widths."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    widths = np.broadcast_to(np.asarray(dt, dtype=float), (n_steps,))
    if np.any(widths <= 0):
        raise ValueError("dt must be positive")
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return NoisePath(rng.standard_normal(n_steps) * _noise_scale(widths, kappa), widths)


def path_log_likelihood(path: NoisePath, kappa: float) -> float:
    """Sum of -xi^2 dt / (2 kappa); the Gaussian normalization is dropped."""
    return float(-np.sum(path.values**2 * path.dt) / (2.0 * kappa))


def _propagate(q0, widths, values, xi, params, stepper, renormalize, record=False):
    """Advance a batch of states; ``xi`` has shape (batch, n_steps)."""
    q = np.broadcast_to(np.asarray(q0, dtype=float), (xi.shape[0], 3)).copy()
    history = [q.copy()] if record else None
    step = unravelled_step if stepper == "sde" else exact_rotation_step
    for k in range(len(widths)):
        q = step(q, xi[:, k], values[k], params, widths[k])
        if renormalize:
            q /= np.sqrt(np.sum(q * q, axis=1))[:, None]
        if record:
            history.append(q.copy())
    if record:
        return q, np.stack(history, axis=1)
    return q


def _check_stepper(stepper):
    if stepper not in ("sde", "exact"):
        raise ValueError(f"unknown stepper {stepper!r}")


def simulate_trajectory(
    q0,
    pulse: ControlPulse,
    params: SystemParams,
    dt: float = DEFAULT_DT,
    rng: np.random.Generator | None = None,
    *,
    noise: NoisePath | None = None,
    renormalize: bool = True,
    stepper: str = "sde",
    strict: bool = False,
    record: bool = False,
):
    """One unravelled trajectory.

    Returns ``(final_state, noise_path)``, or ``(final_state, noise_path,
    states)`` with ``record=True`` where ``states`` has one row per grid time.
    A prescribed ``noise`` path replaces sampling.
    """
    _check_stepper(stepper)
    widths, values = pulse.step_grid(dt, strict=strict)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = sample_noise(len(widths), widths, params.kappa, rng)
    elif len(noise) != len(widths):
        raise ValueError(f"noise path has {len(noise)} steps, pulse grid has {len(widths)}")
    out = _propagate(q0, widths, values, noise.values[None, :], params, stepper, renormalize, record)
    if record:
        final, states = out
        return final[0], noise, states[0]
    return out[0], noise


@dataclass
class EnsembleResult:
    """Final states of an ensemble of unravelled trajectories.

    ``finals`` holds every final state when ``n_total <= max_retained``;
    otherwise it is a uniform reservoir sample and the statistics below were
    accumulated in streaming fashion.
    """

    finals: np.ndarray
    mean_final: np.ndarray
    std_final: np.ndarray
    n_total: int
    seed: int
    target: np.ndarray | None = None
    avg_fidelity: float | None = None
    complete: bool = True
    success_counts: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)

    def to_dict(self, include_finals: bool = True) -> dict:
        out = {
            "n_total": self.n_total,
            "seed": self.seed,
            "mean_final": self.mean_final.tolist(),
            "std_final": self.std_final.tolist(),
            "target": None if self.target is None else self.target.tolist(),
            "avg_fidelity": self.avg_fidelity,
            "complete": self.complete,
        }
        if include_finals:
            out["finals"] = self.finals.tolist()
        return out


@dataclass
class SuccessRateReport:
    delta: float
    n_success: int
    n_total: int

    @property
    def rate_percent(self) -> float:
        return 100.0 * self.n_success / self.n_total

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "n_success": self.n_success,
            "n_total": self.n_total,
            "rate_percent": self.rate_percent,
        }


@dataclass
class Histogram:
    axis: str
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{lo:.17g},{hi:.17g},{int(c)}")
        return "\n".join(lines) + "\n"


def _histogram(values, n_bins):
    return np.histogram(np.clip(values, -1.0, 1.0), bins=n_bins, range=(-1.0, 1.0))


def _run_chunk(q0, widths, values, params, master_seed, start, stop, renormalize, stepper):
    scale = _noise_scale(widths, params.kappa)
    z = np.empty((stop - start, len(widths)))
    for row, i in enumerate(range(start, stop)):
        z[row] = stream(master_seed, i).standard_normal(len(widths))
    return _propagate(q0, widths, values, z * scale, params, stepper, renormalize)


def simulate_ensemble(
    q0,
    pulse: ControlPulse,
    params: SystemParams,
    dt: float = DEFAULT_DT,
    n_total: int = 10_000,
    master_seed: int = 0,
    *,
    target=None,
    renormalize: bool = True,
    stepper: str = "sde",
    threads: int = 1,
    strict: bool = False,
    max_retained: int = MAX_RETAINED,
) -> EnsembleResult:
    """Simulate ``n_total`` independent trajectories.

    Trajectory i samples its noise from ``stream(master_seed, i)``, so the
    result is bit-identical for any ``threads`` value. Reductions run in
    trajectory order after all chunks finish.
    """
    if n_total < 1:
        raise ValueError("n_total must be at least 1")
    _check_stepper(stepper)
    if target is not None:
        target = require_pure(target)
    widths, values = pulse.step_grid(dt, strict=strict)
    bounds = [(s, min(s + CHUNK, n_total)) for s in range(0, n_total, CHUNK)]

    def job(b):
        return _run_chunk(q0, widths, values, params, master_seed, b[0], b[1], renormalize, stepper)

    if n_total <= max_retained:
        if threads > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(job, bounds))
        else:
            parts = [job(b) for b in bounds]
        finals = np.concatenate(parts, axis=0)
        mean = finals.mean(axis=0)
        std = finals.std(axis=0, ddof=1) if n_total > 1 else np.zeros(3)
        avg_f = None if target is None else float(np.mean(fidelity(finals, target)))
        return EnsembleResult(finals, mean, std, n_total, master_seed, target, avg_f)
    return _streaming_ensemble(job, bounds, n_total, master_seed, target, max_retained, threads)


def _streaming_ensemble(job, bounds, n_total, master_seed, target, max_retained, threads):
    total = np.zeros(3)
    total_sq = np.zeros(3)
    fid_sum = 0.0
    success = {d: 0 for d in STUDY_DELTAS}
    hist = {ax: np.zeros(DEFAULT_BINS, dtype=np.int64) for ax in "xyz"}
    edges = np.linspace(-1.0, 1.0, DEFAULT_BINS + 1)
    reservoir = np.empty((max_retained, 3))
    picker = stream(derive_seed(master_seed, 0xBEEF), 0)
    seen = 0
    # process a bounded window of chunks at a time to cap memory
    window = max(1, threads)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for w in range(0, len(bounds), window):
            batch = bounds[w : w + window]
            parts = list(pool.map(job, batch)) if pool else [job(b) for b in batch]
            for part in parts:
                total += part.sum(axis=0)
                total_sq += (part * part).sum(axis=0)
                for a, ax in enumerate("xyz"):
                    hist[ax] += _histogram(part[:, a], DEFAULT_BINS)[0]
                if target is not None:
                    f = fidelity(part, target)
                    fid_sum += float(f.sum())
                    for d in STUDY_DELTAS:
                        success[d] += int(np.count_nonzero(f >= 1.0 - d))
                for row in part:
                    if seen < max_retained:
                        reservoir[seen] = row
                    else:
                        j = picker.integers(0, seen + 1)
                        if j < max_retained:
                            reservoir[j] = row
                    seen += 1
    finally:
        if pool:
            pool.shutdown()
    mean = total / n_total
    var = (total_sq - n_total * mean**2) / (n_total - 1)
    result = EnsembleResult(
        reservoir,
        mean,
        np.sqrt(np.maximum(var, 0.0)),
        n_total,
        master_seed,
        target,
        None if target is None else fid_sum / n_total,
        complete=False,
        success_counts=success if target is not None else {},
        histograms={ax: Histogram(ax, edges, c) for ax, c in hist.items()},
    )
    return result


def success_rate(result: EnsembleResult, target, delta: float = DEFAULT_DELTA) -> SuccessRateReport:
    """Share of final states with fidelity at least 1 - delta to ``target``."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    target = require_pure(target)
    if not result.complete:
        same_target = result.target is not None and np.array_equal(result.target, target)
        if not (same_target and delta in result.success_counts):
            raise ValueError(
                "streamed ensemble only keeps success counts for its own target "
                f"and delta in {STUDY_DELTAS}"
            )
        return SuccessRateReport(delta, result.success_counts[delta], result.n_total)
    f = fidelity(result.finals, target)
    return SuccessRateReport(delta, int(np.count_nonzero(f >= 1.0 - delta)), result.n_total)


def final_state_histogram(result: EnsembleResult, axis: str = "x", n_bins: int = DEFAULT_BINS) -> Histogram:
    """Counts of final-state components over [-1, 1]."""
    if axis not in ("x", "y", "z"):
        raise ValueError("axis must be one of x, y, z")
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    if not result.complete:
        if n_bins != DEFAULT_BINS:
            raise ValueError(f"streamed ensemble only keeps {DEFAULT_BINS}-bin histograms")
        return result.histograms[axis]
    counts, edges = _histogram(result.finals[:, "xyz".index(axis)], n_bins)
    return Histogram(axis, edges, counts)


def expected_noise_variance(kappa: float, dt: float) -> float:
    return kappa / dt


def chi_square_band(n: int, variance: float, n_sigma: float = 5.0) -> tuple[float, float]:
    """Band for a sample variance of n normal draws (normal approximation)."""
    half = n_sigma * variance * math.sqrt(2.0 / (n - 1))
    return variance - half, variance + half
