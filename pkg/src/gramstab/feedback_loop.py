"""Linear closed loop ``y' = A y + B u``, ``u = -B* Q^{-1} proj y``.

Two time steppers (RK4, matrix exponential) integrate the loop directly.
The co-state oracle avoids time stepping altogether: the co-state
``Q^{-1} y`` obeys ``y~' = (A - 2 lambda) y~``, so it is a rotation times
``exp(-2 lambda t)`` and ``y = Q y~`` is available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import AliasingError, ContractError, DomainError
from .gramian import generator_matrix, gramian_solve, input_matrix
from .spectral_core import (
    bstar_apply,
    deinterleave,
    h3_norm,
    project_h1sharp,
    third_derivative_boundary_vector,
)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution: interleaved states, scalar controls, optional co-states.

    ``log_h_norm`` / ``log_qinv_norm`` carry natural logs of the H-norms when
    the run was computed in extended precision and the float64 states may
    have underflowed.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    meta: dict = field(default_factory=dict)
    costates: np.ndarray | None = None
    stage: np.ndarray | None = None
    log_h_norm: np.ndarray | None = None
    log_qinv_norm: np.ndarray | None = None
    gaps: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ContractError("times must start at 0 and increase strictly")
        if len(self.states) != t.size or len(self.controls) != t.size:
            raise ContractError("states/controls must match the time grid")

    @property
    def n_modes(self):
        return self.states.shape[1] // 2

    def h3_norms(self):
        if self.log_h_norm is not None:
            return np.exp(self.log_h_norm)
        return h3_norm(self.states)

    def complex_coeffs(self):
        return deinterleave(self.states)


# ---------------------------------------------------------------------------


def feedback_value(Q, coupling, y):
    """``u = -B* Q^{-1} proj_{H_{1,#}} y``."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != 2 * coupling.n_modes or coupling.n_modes != Q.n_modes:
        raise ContractError("state, coupling and Gramian dimensions disagree")
    return -bstar_apply(coupling, gramian_solve(Q, project_h1sharp(y)))


def closed_loop_matrix(Q, coupling):
    """Interleaved-coordinate matrix of ``A - B B* Q^{-1} proj``."""
    A = generator_matrix(coupling, reduced=False)
    return A - np.outer(coupling.input_vector(), Q.feedback_gain(coupling))


def _time_grid(T, dt):
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T!r}")
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt!r}")
    if dt > T:
        raise DomainError(f"time step {dt} exceeds horizon {T}")
    steps = max(1, math.ceil(T / dt - 1e-9))
    return np.linspace(0.0, T, steps + 1), T / steps


def simulate_linear(y0, Q, coupling, T, dt, integrator="rk4"):
    """Integrate the closed loop from ``y0`` (its Phi^1_1 part is dropped).

    ``integrator`` is ``"rk4"`` or ``"expm"``.  For a linear autonomous
    system one classical RK4 step equals multiplication by the degree-4
    Taylor polynomial of ``exp(h K)``, which is what is applied here; the
    ``"expm"`` stepper applies the exact propagator, computed once.
    """
    times, h = _time_grid(T, dt)
    y0 = project_h1sharp(np.asarray(y0, dtype=float))
    K = closed_loop_matrix(Q, coupling)
    hK = h * K
    if integrator == "rk4":
        eye = np.eye(K.shape[0])
        step = eye + hK @ (eye + hK @ (eye + hK @ (eye + hK / 4.0) / 3.0) / 2.0)
    elif integrator == "expm":
        step = expm(hK)
    else:
        raise DomainError(f"unknown integrator {integrator!r}")
    states = np.empty((times.size, y0.size))
    states[0] = y0
    for n in range(1, times.size):
        states[n] = step @ states[n - 1]
    gain = Q.feedback_gain(coupling)
    controls = -states @ gain
    meta = {"lambda": Q.lam, "N": Q.n_modes, "integrator": integrator, "dt": h}
    return Trajectory(times, states, controls, meta)


def _rotate_orthonormal(z0, omega_red, t):
    """``e^{tA}`` on reduced orthonormal coordinates for an array of times."""
    t = np.asarray(t, dtype=float)[:, None]
    # reduced index 0 is Phi^2_1 (frequency 0): it does not move
    out = np.empty((t.shape[0], z0.size))
    out[:, 0] = z0[0]
    c = z0[1::2] + 1j * z0[2::2]
    rot = c[None, :] * np.exp(-1j * omega_red[None, :] * t)
    out[:, 1::2] = rot.real
    out[:, 2::2] = rot.imag
    return out


def costate_oracle(y0, Q, coupling, T, dt, times=None):
    """Closed-form closed-loop trajectory through the co-state ``Q^{-1} y``.

    ``times`` (starting at 0) overrides the uniform grid built from ``T, dt``.
    """
    if times is None:
        times, h = _time_grid(T, dt)
    else:
        times = np.asarray(times, dtype=float)
        h = float(np.diff(times).mean()) if times.size > 1 else 0.0
    if Q.extended:
        traj, _ = costate_oracle_extended(y0, Q, coupling, times)
        return traj
    y0 = project_h1sharp(np.asarray(y0, dtype=float))
    z0 = Q.to_orthonormal(gramian_solve(Q, y0))
    zt = _rotate_orthonormal(z0, coupling.omega[1:], times) * np.exp(-2.0 * Q.lam * times)[:, None]
    states = Q.from_orthonormal(zt @ Q.mat.T)
    costates = Q.from_orthonormal(zt)
    controls = -bstar_apply(coupling, costates)
    with np.errstate(divide="ignore"):
        log_q = np.log(np.linalg.norm(Q.to_orthonormal(Q.solve(states)), axis=1))
    meta = {"lambda": Q.lam, "N": Q.n_modes, "integrator": "oracle", "dt": h}
    return Trajectory(times, states, controls, meta, costates=costates, log_qinv_norm=log_q)


def costate_oracle_extended(y0, Q, coupling, times, y0_mp=None):
    """Oracle for Gramians factored in extended precision.

    Returns ``(trajectory, y_end_mp)`` where ``y_end_mp`` is the orthonormal
    state at the last sample kept in extended precision; ``y0_mp`` (same
    representation) overrides ``y0`` to hand over state between stages
    without float64 round-off.
    """
    ctx = Q.ctx
    n = Q.dim
    if y0_mp is None:
        y0 = project_h1sharp(np.asarray(y0, dtype=float))
        y0_mp = Q._np_to_mp(Q.to_orthonormal(y0))
    z0 = Q.solve_orthonormal_mp(y0_mp)
    om = [ctx.pi**2 * (k * k - 1) for k in range(2, Q.n_modes + 1)]
    bvec = [ctx.mpf(v) for v in input_matrix(coupling)]
    lam = ctx.mpf(Q.lam)
    states = np.zeros((len(times), n + 1))
    costates = np.zeros_like(states)
    controls = np.zeros(len(times))
    log_h = np.empty(len(times))
    log_q = np.empty(len(times))
    log_u = np.empty(len(times))
    y_mp = y0_mp
    t0 = ctx.mpf(float(times[0]))
    for idx, t in enumerate(times):
        tau = ctx.mpf(float(t)) - t0
        decay = ctx.exp(-2 * lam * tau)
        zt = ctx.matrix(n, 1)
        zt[0] = z0[0] * decay
        for m, w in enumerate(om):
            cs, sn = ctx.cos(w * tau), ctx.sin(w * tau)
            re, im = z0[1 + 2 * m], z0[2 + 2 * m]
            zt[1 + 2 * m] = (re * cs + im * sn) * decay
            zt[2 + 2 * m] = (im * cs - re * sn) * decay
        y_mp = Q.apply_orthonormal_mp(zt)
        u = -ctx.fsum(bvec[a] * zt[a] for a in range(n))
        qback = Q.solve_orthonormal_mp(y_mp)
        log_h[idx] = float(ctx.log(ctx.norm(y_mp))) if ctx.norm(y_mp) > 0 else -math.inf
        log_q[idx] = float(ctx.log(ctx.norm(qback))) if ctx.norm(qback) > 0 else -math.inf
        states[idx] = Q.from_orthonormal(np.array([float(v) for v in y_mp]))
        costates[idx] = Q.from_orthonormal(np.array([float(v) for v in zt]))
        controls[idx] = float(u)
        log_u[idx] = float(ctx.log(abs(u))) if u != 0 else -math.inf
    dt = float(np.diff(times).mean()) if len(times) > 1 else 0.0
    meta = {"lambda": Q.lam, "N": Q.n_modes, "integrator": "oracle", "dt": dt, "log_abs_u": log_u}
    rel_times = np.asarray(times, dtype=float) - float(times[0])
    traj = Trajectory(rel_times, states, controls, meta, costates=costates, log_h_norm=log_h, log_qinv_norm=log_q)
    return traj, y_mp


def free_evolution(y0, coupling, T, dt):
    """Uncontrolled rotation ``e^{tA} y0`` sampled on a uniform grid."""
    times, h = _time_grid(T, dt)
    a0 = deinterleave(np.asarray(y0, dtype=float))
    a = a0[None, :] * np.exp(-1j * coupling.omega[None, :] * times[:, None])
    states = np.empty((times.size, 2 * coupling.n_modes))
    states[:, 0::2] = a.real
    states[:, 1::2] = a.imag
    meta = {"lambda": 0.0, "N": coupling.n_modes, "integrator": "free", "dt": h}
    return Trajectory(times, states, np.zeros(times.size), meta)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayCertificate:
    fitted_rate: float
    theoretical_rate: float
    max_identity_violation: float
    max_relative_violation: float
    C1: float
    C2: float
    rate_defined: bool = True

    def to_dict(self, lam, n_modes):
        return {
            "lambda": lam,
            "N": n_modes,
            "fitted_rate": self.fitted_rate,
            "theoretical_rate": self.theoretical_rate,
            "max_identity_violation": self.max_identity_violation,
            "max_relative_violation": self.max_relative_violation,
            "C1": self.C1,
            "C2": self.C2,
            "rate_defined": self.rate_defined,
        }


def qinv_log_norms(traj, Q):
    if traj.log_qinv_norm is not None:
        return np.asarray(traj.log_qinv_norm)
    x = Q.to_orthonormal(gramian_solve(Q, project_h1sharp(traj.states)))
    with np.errstate(divide="ignore"):
        return np.log(np.linalg.norm(x, axis=1))


def certify_decay(traj, Q):
    """Measure the decay of ``||Q^{-1} y(t)||_H`` and the norm sandwich constants.

    ``fitted_rate`` is minus the least-squares slope of ``ln ||Q^{-1} y||``.
    ``max_identity_violation`` is ``sup |q(t) - e^{-2 lam t} q(0)| / q(0)`` and
    ``max_relative_violation`` is ``sup |q(t) e^{2 lam t} / q(0) - 1|``.
    """
    t = traj.times
    lam = Q.lam
    log_q = qinv_log_norms(traj, Q)
    if not np.isfinite(log_q[0]):
        nan = math.nan
        return DecayCertificate(nan, 2 * lam, 0.0, 0.0, nan, nan, rate_defined=False)
    excess = log_q + 2.0 * lam * t - log_q[0]
    rel = float(np.max(np.abs(np.expm1(excess))))
    absv = float(np.max(np.abs(np.exp(log_q - log_q[0]) - np.exp(-2.0 * lam * t))))
    rate = -float(np.polyfit(t, log_q, 1)[0]) if t.size > 1 else math.nan
    if traj.log_h_norm is not None:
        log_h = np.asarray(traj.log_h_norm)
    else:
        with np.errstate(divide="ignore"):
            log_h = np.log(h3_norm(traj.states))
    scaled = np.exp(log_h + 2.0 * lam * t - log_h[0])
    return DecayCertificate(rate, 2 * lam, absv, rel, float(scaled.min()), float(scaled.max()))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceReport:
    window: tuple
    norms: dict      # endpoint -> L^2(window) norm of t -> Psi_xxx(t, endpoint)
    ratios: dict     # endpoint -> norm / ||y0||_H
    h3_norm0: float


def boundary_trace_diagnostic(traj, window=None, endpoints=(0, 1)):
    """L^2-in-time norm of the third space derivative at the boundary.

    Requires the sampling step to resolve the highest retained frequency:
    ``dt <= 1 / (4 f_max)`` with ``f_max = omega_N / (2 pi)``.
    """
    t = traj.times
    n = traj.n_modes
    omega_max = math.pi**2 * (n * n - 1)
    dt = float(np.max(np.diff(t)))
    if dt > math.pi / (2.0 * omega_max) * (1 + 1e-12):
        raise AliasingError(
            f"sampling step {dt:.3g} too coarse for omega_N={omega_max:.4g} "
            f"(need <= {math.pi / (2 * omega_max):.3g})"
        )
    if window is None:
        window = (0.0, float(t[-1]))
    lo, hi = window
    if not (0 <= lo < hi <= t[-1] * (1 + 1e-12)):
        raise DomainError(f"window {window} outside the trajectory")
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    a = traj.complex_coeffs()[sel]
    y0_norm = float(h3_norm(traj.states[0]))
    norms, ratios = {}, {}
    for x0 in endpoints:
        trace = a @ third_derivative_boundary_vector(n, x0)
        val = math.sqrt(float(np.trapezoid(np.abs(trace) ** 2, t[sel])))
        norms[x0] = val
        ratios[x0] = val / y0_norm if y0_norm > 0 else math.nan
    return TraceReport((lo, hi), norms, ratios, y0_norm)


def trajectory_table(traj, Q=None, extra=None):
    """Rows for the trajectory CSV ``t,u,re_a1,im_a1,...,h3_norm,qinv_norm``.

    ``extra`` maps additional column names to per-sample arrays.
    """
    n = traj.n_modes
    header = ["t", "u"]
    for k in range(1, n + 1):
        header += [f"re_a{k}", f"im_a{k}"]
    header += ["h3_norm", "qinv_norm"]
    h = traj.h3_norms()
    if traj.log_qinv_norm is not None:
        q = np.exp(traj.log_qinv_norm)
    elif Q is not None:
        q = np.exp(qinv_log_norms(traj, Q))
    else:
        q = np.full(traj.times.size, math.nan)
    extra = extra or {}
    header += list(extra)
    rows = []
    for idx in range(traj.times.size):
        row = [traj.times[idx], traj.controls[idx], *traj.states[idx], h[idx], q[idx]]
        row += [extra[name][idx] for name in extra]
        rows.append(row)
    return header, rows
