"""Most-likely-path controls: the zero-noise single pulse joining two pure states.

With xi = 0 and a constant drive the state rotates about the fixed axis
(-Omega, 0, eps)/omega, omega = sqrt(Omega^2 + eps^2). The drive is fixed by
requiring both boundary states to share the same axial component, and the time
is the rotation angle between them divided by omega.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .bloch import (
    OMEGA_CAP,
    ControlPulse,
    GROUND_STATE,
    SystemParams,
    exact_rotation_step,
    require_pure,
)
from .errors import ControlCapExceeded, DivergentControl, DomainError, ResidualExceeded

SINGULAR_TOL = 1e-6
ARCCOS_TOL = 1e-9
ENDPOINT_TOL = 1e-6
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BoundaryPair:
    initial: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial", require_pure(self.initial, "initial"))
        object.__setattr__(self, "target", require_pure(self.target, "target"))

    @classmethod
    def from_ground(cls, target) -> "BoundaryPair":
        return cls(GROUND_STATE.copy(), target)


@dataclass(frozen=True)
class MlpControl:
    omega: float
    time: float
    quadrant_corrected: bool = False

    def pulse(self, omega_cap: float = OMEGA_CAP) -> ControlPulse:
        return ControlPulse.constant(self.omega, self.time, omega_cap)

    def to_dict(self) -> dict:
        return {"omega": self.omega, "time": self.time, "quadrant_corrected": self.quadrant_corrected}


def _check_rabi(omega: float, omega_cap: float) -> float:
    if abs(omega) > omega_cap:
        raise ControlCapExceeded(
            f"optimal Rabi drive {omega:.6g} exceeds the cap {omega_cap:g}"
        )
    return omega


def _divergent(dx: float) -> DivergentControl:
    return DivergentControl(
        f"x_F - x_I = {dx:.3g}: targets on the x_F = x_I plane are unreachable "
        "with a single constant pulse (the optimal Rabi drive diverges)"
    )


def optimal_rabi(
    b: BoundaryPair,
    epsilon: float = 1.0,
    omega_cap: float = OMEGA_CAP,
    singular_tol: float = SINGULAR_TOL,
) -> float:
    """eps (z_F - z_I) / (x_F - x_I)."""
    dx = b.target[0] - b.initial[0]
    if abs(dx) <= singular_tol:
        raise _divergent(dx)
    return _check_rabi(epsilon * (b.target[2] - b.initial[2]) / dx, omega_cap)


def _clamped_arccos(arg: float) -> float:
    if abs(arg) > 1.0 + ARCCOS_TOL:
        raise DomainError(f"arccos argument {arg:.12g} outside [-1, 1]")
    return math.acos(min(1.0, max(-1.0, arg)))


def _rotate(q, omega: float, epsilon: float, t: float) -> np.ndarray:
    return exact_rotation_step(q, 0.0, omega, SystemParams(epsilon=epsilon), t)


def _endpoint_error(b: BoundaryPair, omega: float, epsilon: float, t: float) -> float:
    return float(np.linalg.norm(_rotate(b.initial, omega, epsilon, t) - b.target))


def _raw_angle(b: BoundaryPair, omega: float, epsilon: float) -> float:
    """Unsigned rotation angle in [0, pi] from the closed-form boundary solution."""
    xi_, yi, zi = b.initial
    xf, yf, _ = b.target
    w = math.hypot(omega, epsilon)
    # alpha_1 and alpha_2 both carry a factor omega; dividing it out of the
    # numerator and denominator keeps the ratio accurate as omega -> 0
    b1 = (omega * zi + epsilon * xi_) / w**2
    b2 = -yi / w
    a3 = (epsilon**2 * zi - epsilon * omega * xi_) / w**2
    den = epsilon * w * (b1**2 + b2**2)
    if den == 0.0:
        # initial state on the rotation axis: it never moves
        return 0.0
    num = w * xf * b1 - epsilon * yf * b2 + b1 * a3 * omega * w / epsilon
    return _clamped_arccos(num / den)


def solve_mlp(
    b: BoundaryPair,
    epsilon: float = 1.0,
    omega_cap: float = OMEGA_CAP,
    singular_tol: float = SINGULAR_TOL,
) -> MlpControl:
    """Closed-form optimal drive and time.

    The arccos only resolves angles in [0, pi]; targets in the first and third
    quadrants of the x-y plane need the complementary angle 2 pi - theta. The
    chosen branch is confirmed by propagating the exact rotation; if it misses
    the target, the other branch is used.
    """
    omega = optimal_rabi(b, epsilon, omega_cap, singular_tol)
    w = math.hypot(omega, epsilon)
    theta = _raw_angle(b, omega, epsilon)
    xf, yf = b.target[0], b.target[1]
    corrected = xf * yf > 0.0
    order = [corrected, not corrected]
    candidates = []
    for flag in order:
        angle = TWO_PI - theta if flag else theta
        t = angle / w
        candidates.append((_endpoint_error(b, omega, epsilon, t), flag, t))
    err, flag, t = candidates[0]
    if err > ENDPOINT_TOL and candidates[1][0] < err:
        err, flag, t = candidates[1]
    if err > ENDPOINT_TOL:
        raise DomainError(f"no rotation branch reaches the target (miss {err:.3g})")
    if t <= 0.0:
        # coincident boundary states: one full revolution
        t = TWO_PI / w
    return MlpControl(float(omega), float(t), bool(flag))


def optimal_time(b: BoundaryPair, epsilon: float = 1.0, omega_cap: float = OMEGA_CAP) -> float:
    return solve_mlp(b, epsilon, omega_cap).time


def geometric_solve(
    b: BoundaryPair,
    epsilon: float = 1.0,
    omega_cap: float = OMEGA_CAP,
    singular_tol: float = SINGULAR_TOL,
) -> MlpControl:
    """Solve from the rotation geometry instead of the closed-form solution.

    The axis tilt phi is the elevation angle from q_I to q_F in the x-z plane,
    so Omega = eps tan(phi). The rotation angle is measured between the two
    boundary states relative to the centre of their common circle; its sense
    follows the sign of (q'_I x q'_F) . axis.
    """
    qi, qf = b.initial, b.target
    dx, dz = qf[0] - qi[0], qf[2] - qi[2]
    if abs(dx) <= singular_tol:
        raise _divergent(dx)
    phi = math.atan2(dz, dx)
    omega = _check_rabi(epsilon * math.tan(phi), omega_cap)
    w = math.hypot(omega, epsilon)
    axis = np.array([-omega, 0.0, epsilon]) / w
    centre = (qi @ axis) * axis
    ui, uf = qi - centre, qf - centre
    ni, nf = np.linalg.norm(ui), np.linalg.norm(uf)
    if ni == 0.0 or nf == 0.0:
        return MlpControl(omega, TWO_PI / w, False)
    theta = _clamped_arccos(float(ui @ uf) / (ni * nf))
    corrected = float(np.cross(ui, uf) @ axis) < 0.0
    if corrected:
        theta = TWO_PI - theta
    if theta <= 0.0:
        theta = TWO_PI
    return MlpControl(omega, theta / w, corrected)


def ground_state_angle(x_f: float, z_f: float) -> float:
    """Unsigned rotation angle from the ground state, in terms of x_F and z_F.

    phi is the elevation angle atan2(z_F + 1, x_F); only valid for q_I = (0, 0, -1).
    """
    phi = math.atan2(z_f + 1.0, x_f)
    s, c = math.sin(phi), math.cos(phi)
    arg = (-z_f * s - x_f * c) / math.sqrt(1.0 + c * c + 2.0 * c * (z_f * c - x_f * s))
    return _clamped_arccos(arg)


def analytic_path(b: BoundaryPair, epsilon: float = 1.0, n_points: int = 101, omega_cap: float = OMEGA_CAP):
    """Zero-noise path sampled at ``n_points`` uniform times on [0, T].

    Returns ``(times, states)``. The endpoints are pinned to the boundary
    states exactly.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    ctrl = solve_mlp(b, epsilon, omega_cap)
    times = np.linspace(0.0, ctrl.time, n_points)
    states = path_states(b.initial, ctrl.omega, epsilon, times)
    states[0] = b.initial
    states[-1] = b.target
    return times, states


def path_states(q0, omega: float, epsilon: float, times) -> np.ndarray:
    """Closed-form zero-noise trajectory under a constant drive."""
    times = np.asarray(times, dtype=float)
    x0, y0, z0 = np.asarray(q0, dtype=float)
    if omega == 0.0:
        c, s = np.cos(epsilon * times), np.sin(epsilon * times)
        return np.stack([x0 * c - y0 * s, x0 * s + y0 * c, np.full_like(times, z0)], axis=1)
    w = math.hypot(omega, epsilon)
    a1 = (omega**2 * z0 + epsilon * omega * x0) / w**2
    a2 = -y0 * omega / w
    a3 = (epsilon**2 * z0 - epsilon * omega * x0) / w**2
    c, s = np.cos(w * times), np.sin(w * times)
    x = a1 * epsilon / omega * c + a2 * epsilon / omega * s - a3 * omega / epsilon
    y = a1 * w / omega * s - a2 * w / omega * c
    z = a1 * c + a2 * s + a3
    return np.stack([x, y, z], axis=1)


@dataclass
class ResidualReport:
    constraint_yz: float
    constraint_xz: float
    noise_stationarity: float
    path_deviation: float
    endpoint_miss: float
    n_steps: int
    tol: float

    @property
    def max_residual(self) -> float:
        return max(self.constraint_yz, self.constraint_xz, self.noise_stationarity)

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "constraint_yz": self.constraint_yz,
            "constraint_xz": self.constraint_xz,
            "noise_stationarity": self.noise_stationarity,
            "path_deviation": self.path_deviation,
            "endpoint_miss": self.endpoint_miss,
            "n_steps": self.n_steps,
            "tol": self.tol,
        }


def verify_variational_solution(
    b: BoundaryPair,
    epsilon: float = 1.0,
    params: SystemParams | None = None,
    dt: float = 1e-4,
    *,
    p0=None,
    omega: float | None = None,
    tol: float = 1e-6,
    raise_on_failure: bool = True,
) -> ResidualReport:
    """Integrate the state and conjugate equations with xi = 0 and check stationarity.

    The six first-order difference equations are stepped with explicit Euler.
    Residuals are the two conjugate constraints p_y z - p_z y and
    p_x z - p_z x and the noise stationarity value 2 g kappa (p_y x - p_x y),
    which must vanish for the zero-noise path. ``p0`` defaults to q_I, a
    consistent (parallel) choice. ``omega`` overrides the optimal drive for
    sensitivity probes; the endpoint miss is measured with the exact rotation.
    """
    params = params or SystemParams(epsilon=epsilon)
    ctrl = solve_mlp(b, epsilon)
    om = ctrl.omega if omega is None else float(omega)
    n = max(1, int(round(ctrl.time / dt)))
    h = ctrl.time / n
    x, y, z = b.initial
    px, py, pz = b.initial if p0 is None else np.asarray(p0, dtype=float)
    coupling = 2.0 * params.g * params.kappa
    r_yz = abs(py * z - pz * y)
    r_xz = abs(px * z - pz * x)
    r_xi = abs(coupling * (py * x - px * y))
    dev = 0.0
    times = np.arange(1, n + 1) * h
    exact = path_states(b.initial, om, epsilon, times)
    for k in range(n):
        x, y, z = x - h * y * epsilon, y + h * (x * epsilon + z * om), z - h * y * om
        px, py, pz = px - h * py * epsilon, py + h * (px * epsilon + pz * om), pz - h * py * om
        r_yz = max(r_yz, abs(py * z - pz * y))
        r_xz = max(r_xz, abs(px * z - pz * x))
        r_xi = max(r_xi, abs(coupling * (py * x - px * y)))
        dev = max(dev, abs(x - exact[k, 0]), abs(y - exact[k, 1]), abs(z - exact[k, 2]))
    miss = float(np.linalg.norm(_rotate(b.initial, om, epsilon, ctrl.time) - b.target))
    report = ResidualReport(r_yz, r_xz, r_xi, dev, miss, n, tol)
    if raise_on_failure and not report.ok:
        raise ResidualExceeded(f"variational residual {report.max_residual:.3g} exceeds {tol:g}")
    return report
