"""Bloch-vector state evolution for a dephased, Rabi-driven qubit.

The qubit Hamiltonian is (eps/2) sz - (Omega/2) sx + g xi sz, so a Bloch vector
q rotates as dq/dt = w x q with w = (-Omega, 0, eps + 2 g xi). Pure dephasing at
rate gamma = 2 g^2 kappa shrinks the x and y components of the noise-averaged
state.

All functions accept a single state of shape (3,) or a batch of shape (N, 3);
noise values broadcast against the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import expm

from .errors import ControlCapExceeded, NonPureTarget, SegmentGridMismatch

PURITY_TOL = 1e-9
OMEGA_CAP = 20.0
DEFAULT_DT = 0.01
GRID_TOL = 1e-6

GROUND_STATE = np.array([0.0, 0.0, -1.0])


def bloch_vector(x, y=None, z=None) -> np.ndarray:
    """Build a validated Bloch vector from three numbers or a length-3 sequence."""
    if y is None and z is None:
        q = np.asarray(x, dtype=float).reshape(3)
    else:
        q = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"Bloch vector has non-finite components: {q}")
    if q @ q > 1.0 + PURITY_TOL:
        raise ValueError(f"Bloch vector {q} lies outside the unit ball")
    return q


def is_pure(q, tol: float = PURITY_TOL) -> bool:
    q = np.asarray(q, dtype=float)
    return abs(float(q @ q) - 1.0) <= tol


def require_pure(q, what: str = "target", tol: float = PURITY_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(3)
    if not is_pure(q, tol):
        raise NonPureTarget(
            f"{what} state {q.tolist()} is not pure: |q| = {np.linalg.norm(q):.12g}"
        )
    return q


def polar_target(z_plane: float, phi: float) -> np.ndarray:
    """Pure state at height ``z_plane`` and azimuth ``phi``."""
    s = math.sin(math.acos(z_plane))
    return np.array([s * math.cos(phi), s * math.sin(phi), z_plane])


@dataclass(frozen=True)
class SystemParams:
    """Physical constants. Frequencies in units of epsilon, times in 1/epsilon."""

    epsilon: float = 1.0
    g: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.g >= 0:
            raise ValueError("g must be non-negative")

    @property
    def gamma(self) -> float:
        return 2.0 * self.g**2 * self.kappa

    @classmethod
    def from_gamma(cls, gamma: float, epsilon: float = 1.0, kappa: float = 1.0) -> "SystemParams":
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        return cls(epsilon=epsilon, g=math.sqrt(gamma / (2.0 * kappa)), kappa=kappa)

    def with_gamma(self, gamma: float) -> "SystemParams":
        return SystemParams.from_gamma(gamma, epsilon=self.epsilon, kappa=self.kappa)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "g": self.g, "kappa": self.kappa, "gamma": self.gamma}


@dataclass(frozen=True)
class ControlPulse:
    """Piecewise-constant Rabi drive, right-continuous on [0, total_time)."""

    durations: tuple
    omegas: tuple
    omega_cap: float = OMEGA_CAP

    def __post_init__(self):
        durations = tuple(float(d) for d in self.durations)
        omegas = tuple(float(w) for w in self.omegas)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "omegas", omegas)
        if len(durations) == 0 or len(durations) != len(omegas):
            raise ValueError("pulse needs one omega per segment and at least one segment")
        if any(not d > 0 for d in durations):
            raise ValueError(f"segment durations must be positive: {durations}")
        for w in omegas:
            if not math.isfinite(w) or abs(w) > self.omega_cap:
                raise ControlCapExceeded(
                    f"|omega| = {abs(w):.6g} exceeds the Rabi cap {self.omega_cap:g}"
                )

    @classmethod
    def constant(cls, omega: float, total_time: float, omega_cap: float = OMEGA_CAP) -> "ControlPulse":
        return cls((total_time,), (omega,), omega_cap)

    @classmethod
    def piecewise(cls, omegas, total_time: float, omega_cap: float = OMEGA_CAP) -> "ControlPulse":
        """Equal-length segments spanning ``total_time``."""
        omegas = tuple(float(w) for w in np.ravel(omegas))
        return cls((total_time / len(omegas),) * len(omegas), omegas, omega_cap)

    @property
    def total_time(self) -> float:
        return float(math.fsum(self.durations))

    @property
    def n_segments(self) -> int:
        return len(self.omegas)

    @property
    def segments(self) -> list:
        return list(zip(self.durations, self.omegas))

    def __call__(self, t: float) -> float:
        if not 0.0 <= t < self.total_time:
            raise ValueError(f"t = {t} outside [0, {self.total_time})")
        edge = 0.0
        for d, w in zip(self.durations, self.omegas):
            edge += d
            if t < edge:
                return w
        return self.omegas[-1]

    def segment_steps(self, dt: float = DEFAULT_DT) -> list:
        return [max(1, int(round(d / dt))) for d in self.durations]

    def step_grid(self, dt: float = DEFAULT_DT, strict: bool = False):
        """Per-step widths and drive values covering the pulse.

        Each segment is split into round(d/dt) equal steps. With ``strict`` the
        nominal dt must tile every segment to one part in 1e6.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        widths, values = [], []
        for d, w, k in zip(self.durations, self.omegas, self.segment_steps(dt)):
            if strict and abs(k * dt - d) > GRID_TOL * d:
                raise SegmentGridMismatch(
                    f"dt = {dt:g} does not tile a segment of duration {d:.12g}"
                )
            widths.append(np.full(k, d / k))
            values.append(np.full(k, w))
        return np.concatenate(widths), np.concatenate(values)

    def to_dict(self) -> dict:
        return {
            "durations": list(self.durations),
            "omegas": list(self.omegas),
            "total_time": self.total_time,
        }

    @classmethod
    def from_dict(cls, data: dict, omega_cap: float = OMEGA_CAP) -> "ControlPulse":
        if "durations" in data:
            return cls(tuple(data["durations"]), tuple(data["omegas"]), omega_cap)
        return cls.piecewise(data["omegas"], data["total_time"], omega_cap)


def _split(q):
    q = np.asarray(q, dtype=float)
    return q[..., 0], q[..., 1], q[..., 2]


def unravelled_step(q, xi, omega, params: SystemParams, dt: float):
    """Second-order expansion of one noisy unitary step (no renormalization)."""
    x, y, z = _split(q)
    et = params.epsilon + 2.0 * params.g * np.asarray(xi, dtype=float)
    h2 = 0.5 * dt * dt
    x1 = x - dt * y * et - h2 * (z * omega * et + x * et * et)
    y1 = y + dt * (x * et + z * omega) - h2 * (y * omega * omega + y * et * et)
    z1 = z - dt * y * omega - h2 * (x * omega * et + z * omega * omega)
    return np.stack([x1, y1, z1], axis=-1)


def exact_rotation_step(q, xi, omega, params: SystemParams, dt: float):
    """Rotate q about w = (-omega, 0, eps + 2 g xi) by |w| dt (Rodrigues formula)."""
    q = np.asarray(q, dtype=float)
    et = params.epsilon + 2.0 * params.g * np.asarray(xi, dtype=float)
    om = np.broadcast_to(np.asarray(omega, dtype=float), np.shape(et))
    wnorm = np.hypot(om, et)
    safe = np.where(wnorm > 0, wnorm, 1.0)
    n = np.stack([-om / safe, np.zeros_like(safe), et / safe], axis=-1)
    angle = (wnorm * dt)[..., None]
    c, s = np.cos(angle), np.sin(angle)
    n_dot_q = np.sum(n * q, axis=-1, keepdims=True)
    out = q * c + np.cross(n, q) * s + n * n_dot_q * (1.0 - c)
    return np.where((wnorm > 0)[..., None], out, q)


def ito_mean_step(q, omega, params: SystemParams, dt: float):
    """Explicit-Euler step of the noise-averaged (Lindblad) Bloch equations."""
    x, y, z = _split(q)
    eps, gam = params.epsilon, params.gamma
    x1 = x - dt * (y * eps + gam * x)
    y1 = y + dt * (x * eps + z * omega - gam * y)
    z1 = z - dt * y * omega
    return np.stack([x1, y1, z1], axis=-1)


def lindblad_generator(omega: float, gamma: float, epsilon: float = 1.0) -> np.ndarray:
    """Matrix A with dq/dt = A q for the dephased, driven qubit."""
    return np.array(
        [
            [-gamma, -epsilon, 0.0],
            [epsilon, -gamma, omega],
            [0.0, -omega, 0.0],
        ]
    )


def drive_derivative() -> np.ndarray:
    """dA/dOmega, constant because the drive enters the generator linearly."""
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


def lindblad_evolve(
    q0,
    pulse: ControlPulse,
    params: SystemParams,
    dt: float = DEFAULT_DT,
    method: str = "exact",
    strict: bool = False,
) -> np.ndarray:
    """Final mean state after ``pulse``.

    ``method="exact"`` propagates each constant segment with the matrix
    exponential of the Bloch generator; ``method="euler"`` applies
    :func:`ito_mean_step` on the dt grid.
    """
    q = np.asarray(q0, dtype=float).reshape(3)
    widths, values = pulse.step_grid(dt, strict=strict)
    if method == "euler":
        for h, w in zip(widths, values):
            q = ito_mean_step(q, w, params, h)
        return q
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    for d, w in pulse.segments:
        q = expm(lindblad_generator(w, params.gamma, params.epsilon) * d) @ q
    return q


def lindblad_path(q0, pulse: ControlPulse, params: SystemParams, dt: float = DEFAULT_DT):
    """Times and mean states on the dt grid, using exact per-step propagators."""
    widths, values = pulse.step_grid(dt)
    states = np.empty((len(widths) + 1, 3))
    states[0] = q0
    cache = {}
    for i, (h, w) in enumerate(zip(widths, values)):
        key = (h, w)
        if key not in cache:
            cache[key] = expm(lindblad_generator(w, params.gamma, params.epsilon) * h)
        states[i + 1] = cache[key] @ states[i]
    times = np.concatenate([[0.0], np.cumsum(widths)])
    return times, states


def fidelity(q, target) -> np.ndarray | float:
    """Overlap (1 + q . q_F)/2 with a pure target; vectorized over q."""
    t = require_pure(target)
    f = 0.5 * (1.0 + np.asarray(q, dtype=float) @ t)
    return float(f) if np.ndim(f) == 0 else f
