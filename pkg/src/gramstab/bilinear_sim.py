"""Full bilinear closed loop ``i a' = (D - u M) a`` with the Gramian feedback.

The state is integrated as a deviation ``z = a - e_1`` from the ground
state (``e_1`` is stationary in the rotating frame since omega_1 = 0).  Each
step is a Strang splitting: half a phase rotation, a Cayley (Crank-Nicolson)
kick for the ``u M`` term with ``u`` frozen at the mid-step state, half a
phase rotation.  Both pieces are unitary, so ``||e_1 + z||_{L^2}`` is kept to
round-off, and working with ``z`` keeps round-off relative to the gap
instead of relative to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, IntegratorError
from .feedback_loop import Trajectory, feedback_value
from .parallel import ordered_map
from .spectral_core import (
    SpectralState,
    coordinate_weights,
    interleave,
    sobolev_weights,
)


@dataclass(frozen=True)
class NonlinearRunConfig:
    epsilon: float
    lam: float
    lam_hat: float
    T: float
    N: int
    dt: float | None = None
    normalize: bool = True

    def __post_init__(self):
        if not 0 < self.lam_hat < self.lam:
            raise DomainError(f"need 0 < lambda_hat < lambda, got {self.lam_hat}, {self.lam}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T}")
        if self.N < 2:
            raise DomainError(f"need at least 2 modes, got {self.N}")
        if self.dt is not None and not 0 < self.dt <= self.max_dt:
            raise DomainError(f"dt must lie in (0, {self.max_dt:.3g}], got {self.dt}")

    @property
    def max_dt(self):
        return min(1e-2, 0.1 / (math.pi**2 * (self.N**2 - 1)))

    @property
    def step(self):
        return self.dt if self.dt is not None else self.max_dt


def _kick_factory(coupling, h):
    """Return ``kick(z, u)`` applying the Cayley map of ``i h u M`` to ``e_1 + z``.

    With ``M = V diag(m) V^T`` the Cayley factor is diagonal in the
    eigenbasis, ``c = (1 + i h u m / 2) / (1 - i h u m / 2)``, of modulus one.
    """
    m, V = np.linalg.eigh(coupling.mu_mat)
    v1 = V[0].astype(complex)

    def kick(z, u):
        x = 0.5j * h * u * m
        cm1 = 2.0 * x / (1.0 - x)  # c - 1 without cancellation
        return z + V @ (cm1 * (v1 + V.T @ z))

    return kick


def simulate_bilinear(y0, cfg, Q, coupling, sample_every=1, gap=None):
    """Integrate the bilinear loop from the normalized state ``y0``.

    ``y0`` is a :class:`SpectralState` (or complex coefficient array).  The
    control ``u = -B* Q^{-1} proj (y - Phi_1)`` is re-evaluated every step.
    Passing the exact deviation ``gap = y0 - Phi_1`` (complex) avoids the
    rounding of ``y0`` near ``Phi_1``; ``y0`` may then be None.
    """
    n = coupling.n_modes
    if gap is not None:
        z = np.array(gap, dtype=complex)
        norm_dev = 2.0 * z[0].real + float(np.vdot(z, z).real)
        if abs(norm_dev) > 1e-12:
            raise ContractError(f"initial state has squared L2 norm 1 + {norm_dev:.3e}")
    else:
        a0 = np.asarray(y0.coeffs if isinstance(y0, SpectralState) else y0, dtype=complex)
        norm0 = float(np.linalg.norm(a0))
        if abs(norm0 - 1.0) > 1e-12:
            if not cfg.normalize:
                raise ContractError(f"initial state has L2 norm {norm0:.15g}, expected 1")
            a0 = a0 / norm0
        z = a0.copy()
        z[0] -= 1.0
    if z.size != n or Q.n_modes != n or cfg.N != n:
        raise ContractError("state, config, coupling and Gramian must share N")

    h = cfg.step
    steps = max(1, math.ceil(cfg.T / h - 1e-9))
    h = cfg.T / steps
    gain = Q.feedback_gain(coupling)
    g_re, g_im = gain[0::2], gain[1::2]
    half_phase = np.exp(-0.5j * h * coupling.omega)
    kick = _kick_factory(coupling, h)

    def control(z):
        return -(g_re @ z.real + g_im @ z.imag)

    n_samples = steps // sample_every + 1
    times = np.empty(n_samples)
    zs = np.empty((n_samples, n), dtype=complex)
    us = np.empty(n_samples)
    drift = 0.0
    times[0], zs[0], us[0] = 0.0, z, control(z)
    j = 1
    for s in range(1, steps + 1):
        zh = half_phase * z
        u0 = control(zh)
        u1 = control(0.5 * (zh + kick(zh, u0)))
        z = half_phase * kick(zh, u1)
        if s % sample_every == 0:
            # ||e1 + z||^2 - 1 without cancellation
            dev = 2.0 * z[0].real + float(np.vdot(z, z).real)
            drift = max(drift, abs(dev) / (1.0 + math.sqrt(max(1.0 + dev, 0.0))))
            if not math.isfinite(dev) or drift > 1e-3:
                raise IntegratorError(f"L2 norm drifted by {drift:.3e} at t={s * h:.6g}")
            times[j], zs[j], us[j] = s * h, z, control(z)
            j += 1
    times, zs, us = times[:j], zs[:j], us[:j]

    gaps = zs
    states = interleave(gaps)
    states[:, 0] += 1.0
    meta = {
        "lambda": Q.lam,
        "lambda_hat": cfg.lam_hat,
        "N": n,
        "integrator": "strang-cayley",
        "dt": h,
        "max_l2_drift": drift,
    }
    return Trajectory(times, states, us, meta, gaps=interleave(gaps))


def gap_states(traj):
    """Interleaved ``y(t) - Phi_1`` without the cancellation of ``states - e_1``."""
    if traj.gaps is not None:
        return traj.gaps
    out = traj.states.copy()
    out[:, 0] -= 1.0
    return out


@dataclass(frozen=True)
class GroundStateGap:
    h3_gap: float
    l2_gap: float
    b_component: float


def ground_state_gap(state):
    """Split ``y = b Phi_1 + y_P`` and measure the distance to ``Phi_1``."""
    a = np.asarray(state.coeffs if isinstance(state, SpectralState) else state, dtype=complex)
    dev = a.copy()
    dev[0] -= 1.0
    w = sobolev_weights(a.size)
    return GroundStateGap(
        float(np.sqrt(np.sum(w * np.abs(dev) ** 2))),
        float(np.linalg.norm(dev)),
        float(a[0].real),
    )


def gap_series(traj):
    """Per-sample ``(h3_gap, l2_gap, b - 1, ||y_P||_{L^2})`` of a bilinear run."""
    g = gap_states(traj)
    w = coordinate_weights(traj.n_modes)
    h3 = np.sqrt(np.sum(w * g * g, axis=1))
    l2 = np.sqrt(np.sum(g * g, axis=1))
    yp = g.copy()
    yp[:, 0] = 0.0
    return h3, l2, g[:, 0], np.sqrt(np.sum(yp * yp, axis=1))


def fit_rate(times, values, window):
    """Minus the least-squares slope of ``ln values`` over ``window``."""
    lo, hi = window
    sel = (times >= lo) & (times <= hi) & (values > 0)
    if np.count_nonzero(sel) < 2:
        return math.nan
    return -float(np.polyfit(times[sel], np.log(values[sel]), 1)[0])


@dataclass(frozen=True)
class RunSummary:
    rate: float
    prefactor: float
    max_l2_drift: float
    control_l2: float


def summarize_run(traj, lam_hat, window=None):
    """Decay rate over ``window`` (default second half) and the prefactor ``C``.

    ``C = sup_t gap(t) e^{2 lam_hat t} / gap(0)``.
    """
    t = traj.times
    h3, *_ = gap_series(traj)
    if window is None:
        window = (0.5 * t[-1], t[-1])
    rate = fit_rate(t, h3, window)
    pref = float(np.max(h3 * np.exp(2.0 * lam_hat * t)) / h3[0]) if h3[0] > 0 else 0.0
    ctrl = math.sqrt(float(np.trapezoid(traj.controls**2, t)))
    return RunSummary(rate, pref, float(traj.meta["max_l2_drift"]), ctrl)


def random_gap(n_modes, epsilon, rng):
    """Deviation ``z = y0 - Phi_1`` of a random unit-L2 state at H-distance ``epsilon``.

    Direction: complex Gaussian coefficients weighted by ``k^-4`` with the
    real part of mode 1 removed.  The state ``c Phi_1 + s p`` with
    ``c = sqrt(1 - s^2 |p|^2)`` is tuned in ``s`` to hit the requested gap.
    """
    from scipy.optimize import brentq

    z = np.zeros(n_modes, dtype=complex)
    if epsilon == 0:
        return z
    k = np.arange(1, n_modes + 1)
    p = (rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)) / k**4
    p[0] = 1j * p[0].imag
    w = sobolev_weights(n_modes)
    p = p / np.linalg.norm(p)
    p_h3 = float(np.sqrt(np.sum(w * np.abs(p) ** 2)))

    def one_minus_c(s):
        return s * s / (1.0 + math.sqrt(1.0 - s * s))

    def gap(s):
        return math.sqrt(w[0] * one_minus_c(s) ** 2 + s * s * p_h3**2) - epsilon

    if gap(1.0) < 0:
        raise DomainError(f"epsilon={epsilon} is too large for a unit-norm perturbation")
    s = brentq(gap, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    z = s * p
    z[0] -= one_minus_c(s)
    return z


def random_perturbation(n_modes, epsilon, rng):
    """Random unit-L2 state at H-distance ``epsilon`` from ``Phi_1``."""
    a = random_gap(n_modes, epsilon, rng)
    a[0] += 1.0
    return SpectralState(a)


@dataclass(frozen=True)
class BasinRow:
    epsilon: float
    trials: int
    successes: int
    worst_C: float
    median_rate: float

    @property
    def success_rate(self):
        return self.successes / self.trials


def basin_probe(epsilons, cfg, Q, coupling, trials, seed):
    """Empirical basin of attraction: success means the fitted rate over
    ``[T/2, T]`` reaches ``2 lambda_hat``."""
    if trials < 1:
        raise DomainError("need at least one trial")
    rows = []
    for idx, eps in enumerate(epsilons):
        seeds = np.random.SeedSequence([seed, idx]).spawn(trials)
        if eps == 0:
            rows.append(BasinRow(0.0, trials, trials, 1.0, math.inf))
            continue
        run_cfg = NonlinearRunConfig(eps, cfg.lam, cfg.lam_hat, cfg.T, cfg.N, cfg.dt, cfg.normalize)

        def one(ss):
            z0 = random_gap(cfg.N, eps, np.random.default_rng(ss))
            try:
                traj = simulate_bilinear(None, run_cfg, Q, coupling, gap=z0)
            except IntegratorError:
                return math.nan, math.inf
            summ = summarize_run(traj, cfg.lam_hat)
            return summ.rate, summ.prefactor

        results = ordered_map(one, seeds)
        rates = np.array([r for r, _ in results])
        prefs = np.array([p for _, p in results])
        ok = np.isfinite(rates) & (rates >= 2.0 * cfg.lam_hat)
        rows.append(
            BasinRow(float(eps), trials, int(np.count_nonzero(ok)), float(np.max(prefs)), float(np.nanmedian(rates)) if np.any(np.isfinite(rates)) else math.nan)
        )
    return rows


def bilinear_extra_columns(traj):
    h3, l2, bm1, _ = gap_series(traj)
    l2_norm = np.sqrt(np.sum(traj.states**2, axis=1))
    return {"l2_norm": l2_norm, "b_component": 1.0 + bm1, "h3_gap": h3}


def check_feedback_forms(Q, coupling, traj, atol=1e-12):
    """Largest mismatch between ``u`` computed from ``y`` and from ``y - Phi_1``."""
    worst = 0.0
    gaps = gap_states(traj)
    for y, g in zip(traj.states, gaps):
        u_full = feedback_value(Q, coupling, y)
        u_gap = feedback_value(Q, coupling, g)
        worst = max(worst, abs(u_full - u_gap) / max(1.0, abs(u_gap)))
    if worst > atol:
        raise IntegratorError(f"feedback forms disagree by {worst:.3e}")
    return worst
