"""Piecewise-constant Gramian feedback driving the linear loop to rest at time T.

Stage ``n`` runs on ``[t_n, t_{n+1})`` with gain ``lambda_n``; the last stage
ends at ``T``.  The state norm falls by roughly ``e^{-2 s_n}`` over the
schedule, far below float64 range, so all stage arithmetic is carried out
with the Gramians' mpmath factorizations and norms are stored as logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .errors import ContractError, DomainError, PositivityError, ScheduleError
from .feedback_loop import Trajectory, costate_oracle_extended
from .gramian import build_gramian, input_matrix
from .spectral_core import project_h1sharp

DEFAULT_LAMBDA_CAP = 1e4
DEFAULT_MAX_STAGES = 8
_STAGE_DPS = 30  # floor for stages whose Gramian would otherwise be float64

_FMT = mpmath.MPContext()
_FMT.dps = 20


def exp_mp(log_value):
    """``exp(log_value)`` as an mpf, so underflowing magnitudes stay printable."""
    if log_value == -math.inf:
        return _FMT.mpf(0)
    return _FMT.exp(_FMT.mpf(log_value))


@dataclass(frozen=True)
class StageSchedule:
    T: float
    t: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    gamma_check: np.ndarray
    gamma: float = 1.0
    lambda_cap: float = DEFAULT_LAMBDA_CAP
    capped: np.ndarray = field(default=None)
    gamma_warning: bool = False
    gamma_violations: tuple = ()
    symbolic_ok: bool | None = None
    as2_increasing: bool = True

    @property
    def n_stages(self):
        return self.t.size

    @property
    def ends(self):
        return np.append(self.t[1:], self.T)


def _check_increasing(name, values, strict=True):
    d = np.diff(values)
    if np.any(d <= 0 if strict else d < 0):
        raise ScheduleError(f"{name} must be {'strictly ' if strict else ''}increasing: {list(values)}")


def _symbolic_gamma(T, n_stages, p, q, gamma):
    """Exact check of ``(t_{n+1}-t_n) lambda_n >= gamma sqrt(lambda_n)`` for the
    uncapped power rule, ``n >= 1``; None when the exponents are not integers."""
    if p != int(p) or q != int(q) or q % 2:
        return None
    Tf, g2 = Fraction(T), Fraction(gamma) ** 2
    for n in range(1, n_stages - 1):
        a, b = (n + 1) ** int(p), (n + 2) ** int(p)
        dt = Tf * Fraction(b - a, a * b)
        if dt * dt * (n + 1) ** int(q) < g2:
            return False
    return True


def build_schedule(
    T,
    n_stages,
    rule=None,
    lambda_cap=DEFAULT_LAMBDA_CAP,
    gamma=1.0,
    times=None,
    lambdas=None,
    max_stages=DEFAULT_MAX_STAGES,
):
    """Stage knots and gains.

    ``rule`` is ``{"power_time": p, "power_gain": q}`` giving
    ``t_n = T - T/(n+1)^p`` and ``lambda_n = min((n+1)^q, lambda_cap)``
    (default ``p=2, q=8``).  Explicit ``times``/``lambdas`` bypass the rule.
    """
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T!r}")
    if not lambda_cap > 0 or not gamma > 0:
        raise DomainError("lambda_cap and gamma must be positive")
    if n_stages < 2:
        raise ScheduleError(f"need at least 2 stages, got {n_stages}")
    if n_stages > max_stages:
        raise ScheduleError(f"{n_stages} stages exceeds the configured maximum {max_stages}")

    symbolic = None
    if times is not None or lambdas is not None:
        if times is None or lambdas is None:
            raise ScheduleError("explicit schedules need both times and lambdas")
        t = np.asarray(times, dtype=float)
        lam = np.asarray(lambdas, dtype=float)
        if t.size != n_stages or lam.size != n_stages:
            raise ScheduleError("times and lambdas must have n_stages entries")
        capped = np.zeros(n_stages, dtype=bool)
    else:
        rule = {"power_time": 2, "power_gain": 8, **(rule or {})}
        p, q = rule["power_time"], rule["power_gain"]
        if not p > 0 or not q > 0:
            raise ScheduleError(f"rule exponents must be positive, got {rule}")
        n = np.arange(n_stages)
        t = T - T / (n + 1.0) ** p
        raw = (n + 1.0) ** q
        lam = np.minimum(raw, lambda_cap)
        capped = raw > lambda_cap
        symbolic = _symbolic_gamma(T, n_stages, p, q, gamma)

    if t[0] != 0.0:
        raise ScheduleError(f"first knot must be 0, got {t[0]}")
    _check_increasing("knots", np.append(t, T))
    if np.any(lam <= 0):
        raise ScheduleError("gains must be positive")
    _check_increasing("gains", lam, strict=False)
    top = lam.max()
    below = lam[lam < top]
    _check_increasing("gains below the cap", below)
    if np.count_nonzero(lam == top) > 1 and not (capped.any() or times is not None):
        raise ScheduleError("gains repeat before reaching the cap")

    dt = np.diff(np.append(t, T))
    s = np.concatenate([[0.0], np.cumsum(lam * dt)])
    gamma_check = dt * np.sqrt(lam)
    later = gamma_check[1:]
    violations = tuple(int(i) + 1 for i in np.flatnonzero(later < gamma))
    warning = bool(later.size) and bool(np.all(later < gamma))
    # trend of s_n / (n + sqrt(lambda_{n+1})) for the stages that have a successor
    idx = np.arange(1, n_stages)
    as2 = s[idx] / (idx + np.sqrt(lam[idx]))
    as2_ok = bool(np.all(np.diff(as2) > 0))
    return StageSchedule(
        T=float(T),
        t=t,
        lam=lam,
        s=s,
        gamma_check=gamma_check,
        gamma=float(gamma),
        lambda_cap=float(lambda_cap),
        capped=capped,
        gamma_warning=warning,
        gamma_violations=violations,
        symbolic_ok=symbolic,
        as2_increasing=as2_ok,
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    n: int
    t_start: float
    t_end: float
    lam: float
    s: float
    dps: int
    cond: float
    log_ynorm: float        # ln ||y(t_n)||_H
    log_ysup: float         # ln sup over the stage
    log_usup: float         # ln sup |u| over the stage
    log_yend: float         # ln ||y(t_{n+1}^-)||_H
    identity_violation: float   # sup |q(t) e^{2 lam (t-t_n)} / q(t_n) - 1|
    identity_violation_abs: float  # sup |q(t)/q(t_n) - e^{-2 lam (t-t_n)}|
    knot_jump: float        # relative mismatch between this stage's start and the previous end


@dataclass(frozen=True)
class FiniteTimeRun:
    trajectory: Trajectory
    stages: tuple
    schedule: StageSchedule
    mode: str

    @property
    def log_y0(self):
        return self.stages[0].log_ynorm

    @property
    def knot_log_norms(self):
        """``ln ||y||_H`` at ``t_0, ..., t_{n-1}`` and at ``T``."""
        return np.array([st.log_ynorm for st in self.stages] + [self.stages[-1].log_yend])


def _stage_gramians(schedule, coupling):
    out = {}
    for n, lam in enumerate(schedule.lam):
        key = float(lam)
        if key in out:
            continue
        try:
            Q = build_gramian(coupling, key)
            if not Q.extended:
                Q = build_gramian(coupling, key, precision=_STAGE_DPS)
        except PositivityError as exc:
            raise PositivityError(f"stage {n}: {exc}", exc.smallest_eigenvalue, stage=n) from exc
        out[key] = Q
    return out


def _mp_log_norm(ctx, v):
    nv = ctx.norm(v)
    return float(ctx.log(nv)) if nv > 0 else -math.inf


def _convert(ctx, v):
    return ctx.matrix([ctx.mpf(x) for x in v])


def _stage_grid(t0, t1, h):
    m = max(1, math.ceil((t1 - t0) / h - 1e-9))
    return np.linspace(t0, t1, m + 1)


def _rk4_stage(Q, coupling, y_mp, times, steps_per_sample):
    """RK4 for the stage closed loop, evaluated in co-state coordinates.

    The loop matrix is ``K = Q (A - 2 lam) Q^{-1}``, hence the RK4 step
    matrix satisfies ``P(hK) = Q P(h(A - 2 lam)) Q^{-1}``.  The right-hand
    factor is formed and powered in the Gramian's working precision with the
    same frequencies the Gramian was built from, so ``y = Q z`` carries only
    the RK4 truncation error.
    """
    ctx = Q.ctx
    dim = Q.dim
    h = ctx.mpf(float(times[-1] - times[0])) / ((len(times) - 1) * steps_per_sample)
    M = ctx.matrix(dim, dim)
    for m in range(Q.n_modes - 1):
        w = ctx.pi**2 * ((m + 2) ** 2 - 1)
        M[1 + 2 * m, 2 + 2 * m] = w
        M[2 + 2 * m, 1 + 2 * m] = -w
    M = (M - 2 * ctx.mpf(Q.lam) * ctx.eye(dim)) * h
    P = ctx.eye(dim)
    term = ctx.eye(dim)
    for j in range(1, 5):
        term = term * M / j
        P = P + term
    Pk = P**steps_per_sample

    bvec = [ctx.mpf(v) for v in input_matrix(coupling)]
    z = Q.solve_orthonormal_mp(y_mp)
    m = len(times)
    out = {k: np.empty(m) for k in ("log_h", "log_q", "log_u", "u")}
    states = np.zeros((m, dim))
    costates = np.zeros((m, dim))
    for idx in range(m):
        if idx:
            z = Pk * z
        y_mp = Q.apply_orthonormal_mp(z)
        u = -ctx.fsum(bvec[a] * z[a] for a in range(dim))
        out["log_h"][idx] = _mp_log_norm(ctx, y_mp)
        out["log_q"][idx] = _mp_log_norm(ctx, z)
        out["log_u"][idx] = float(ctx.log(abs(u))) if u != 0 else -math.inf
        out["u"][idx] = float(u)
        states[idx] = [float(x) for x in y_mp]
        costates[idx] = [float(x) for x in z]
    return out, states, costates, y_mp


def simulate_finite_time(y0, schedule, coupling, mode="oracle", dt0=None, max_samples_per_stage=400):
    """Run the stage schedule from ``y0`` (interleaved, in the truncated H_{1,#}).

    ``dt0`` sets the stage step ``dt_n = dt0 / sqrt(lambda_n)``; defaults
    are 1e-2 for the exact oracle and 1e-3 for RK4.  In RK4 mode only every
    few steps are sampled so that a stage has at most
    ``max_samples_per_stage`` samples.
    """
    if mode not in ("oracle", "rk4"):
        raise DomainError(f"unknown finite-time mode {mode!r}")
    if dt0 is None:
        dt0 = 1e-2 if mode == "oracle" else 1e-3
    if not dt0 > 0:
        raise DomainError(f"dt0 must be positive, got {dt0!r}")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (2 * coupling.n_modes,):
        raise ContractError(f"expected {2 * coupling.n_modes} coordinates")
    scale = float(np.max(np.abs(y0))) if y0.size else 0.0
    if abs(y0[0]) > 1e-12 * max(scale, 1e-300):
        raise ContractError("initial state has a Phi^1_1 component")
    y0 = project_h1sharp(y0)

    gramians = _stage_gramians(schedule, coupling)
    ends = schedule.ends
    times, states, costates, controls, stage_ids = [], [], [], [], []
    log_h, log_q, records = [], [], []
    y_mp = None
    prev_end = None
    for n in range(schedule.n_stages):
        Q = gramians[float(schedule.lam[n])]
        ctx = Q.ctx
        if y_mp is None:
            y_mp = Q._np_to_mp(Q.to_orthonormal(y0))
        else:
            y_mp = _convert(ctx, y_mp)
        t0, t1 = float(schedule.t[n]), float(ends[n])
        h = dt0 / math.sqrt(schedule.lam[n])
        if mode == "oracle":
            grid = _stage_grid(t0, t1, h)
            traj, y_end = costate_oracle_extended(None, Q, coupling, grid, y0_mp=y_mp)
            st_log_h = traj.log_h_norm
            st_log_q = traj.log_qinv_norm
            st_log_u = traj.meta["log_abs_u"]
            st_u = traj.controls
            st_states = Q.to_orthonormal(traj.states)
            st_costates = Q.to_orthonormal(traj.costates)
        else:
            steps = max(1, math.ceil((t1 - t0) / h - 1e-9))
            every = max(1, math.ceil(steps / max_samples_per_stage))
            steps = every * math.ceil(steps / every)
            grid = np.linspace(t0, t1, steps // every + 1)
            out, st_states, st_costates, y_end = _rk4_stage(Q, coupling, y_mp, grid, every)
            st_log_h, st_log_q, st_log_u, st_u = out["log_h"], out["log_q"], out["log_u"], out["u"]

        tau = grid - t0
        if math.isfinite(st_log_q[0]):
            excess = st_log_q + 2.0 * Q.lam * tau - st_log_q[0]
            viol = float(np.max(np.abs(np.expm1(excess))))
            viol_abs = float(np.max(np.abs(np.exp(st_log_q - st_log_q[0]) - np.exp(-2.0 * Q.lam * tau))))
        else:
            viol = viol_abs = 0.0
        jump = 0.0
        if prev_end is not None:
            start = Q.apply_orthonormal_mp(Q.solve_orthonormal_mp(y_mp))
            diff = ctx.norm(start - _convert(ctx, prev_end))
            ref = ctx.norm(start)
            jump = float(diff / ref) if ref > 0 else float(diff)
        records.append(
            StageRecord(
                n=n,
                t_start=t0,
                t_end=t1,
                lam=float(Q.lam),
                s=float(schedule.s[n]),
                dps=int(Q.dps),
                cond=float(Q.cond),
                log_ynorm=float(st_log_h[0]),
                log_ysup=float(np.max(st_log_h)),
                log_usup=float(np.max(st_log_u)),
                log_yend=float(st_log_h[-1]),
                identity_violation=viol,
                identity_violation_abs=viol_abs,
                knot_jump=jump,
            )
        )
        keep = slice(None) if n == schedule.n_stages - 1 else slice(0, -1)
        times.append(grid[keep])
        states.append(np.asarray(st_states)[keep])
        costates.append(np.asarray(st_costates)[keep])
        controls.append(np.asarray(st_u)[keep])
        log_h.append(np.asarray(st_log_h)[keep])
        log_q.append(np.asarray(st_log_q)[keep])
        stage_ids.append(np.full(len(grid[keep]), n))
        y_mp = y_end
        prev_end = y_end

    ref = gramians[float(schedule.lam[0])]
    traj = Trajectory(
        times=np.concatenate(times),
        states=ref.from_orthonormal(np.concatenate(states)),
        controls=np.concatenate(controls),
        meta={"mode": mode, "N": coupling.n_modes, "T": schedule.T, "dt0": dt0},
        costates=ref.from_orthonormal(np.concatenate(costates)),
        stage=np.concatenate(stage_ids),
        log_h_norm=np.concatenate(log_h),
        log_qinv_norm=np.concatenate(log_q),
    )
    return FiniteTimeRun(traj, tuple(records), schedule, mode)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundAudit:
    C: float
    rows: tuple   # per stage: dict of log-domain quantities

    def table(self):
        header = ["n", "t_n", "lambda_n", "s_n", "ynorm", "unorm_sup", "bound_state", "bound_control", "slack"]
        body = [
            [
                r["n"],
                r["t_n"],
                r["lambda_n"],
                r["s_n"],
                exp_mp(r["log_ynorm"]),
                exp_mp(r["log_usup"]),
                exp_mp(r["log_bound_state"]),
                exp_mp(r["log_bound_control"]),
                r["slack"],
            ]
            for r in self.rows
        ]
        return header, body


def stage_bound_audit(run):
    """Fit the smallest ``C`` with, on every stage ``n`` (counted from 0),

    ``sup ||y|| <= e^{-s_n + C(n+1)} ||y_0||`` and
    ``sup |u| <= e^{-s_n/4 + C(n+1)} ||y_0||``.

    ``slack`` is the smaller of the two log-margins at that ``C``.
    """
    stages = run.stages
    log_y0 = stages[0].log_ynorm
    if not math.isfinite(log_y0):
        rows = tuple(
            dict(n=st.n, t_n=st.t_start, lambda_n=st.lam, s_n=st.s, log_ynorm=-math.inf, log_usup=-math.inf,
                 log_bound_state=-math.inf, log_bound_control=-math.inf, slack=0.0)
            for st in stages
        )
        return BoundAudit(0.0, rows)
    need = []
    for st in stages:
        k = st.n + 1
        need.append((st.log_ysup - log_y0 + st.s) / k)
        need.append((st.log_usup - log_y0 + st.s / 4.0) / k)
    C = max(0.0, max(need))
    rows = []
    for st in stages:
        k = st.n + 1
        bs = -st.s + C * k + log_y0
        bc = -st.s / 4.0 + C * k + log_y0
        slack = min(bs - st.log_ysup, bc - st.log_usup)
        rows.append(
            dict(n=st.n, t_n=st.t_start, lambda_n=st.lam, s_n=st.s, log_ynorm=st.log_ynorm,
                 log_usup=st.log_usup, log_bound_state=bs, log_bound_control=bc, slack=slack)
        )
    return BoundAudit(C, tuple(rows))


def finite_time_trajectory_table(run):
    """Trajectory CSV rows with a trailing ``stage`` column; norms printed from logs."""
    traj = run.trajectory
    n = traj.n_modes
    header = ["t", "u"]
    for k in range(1, n + 1):
        header += [f"re_a{k}", f"im_a{k}"]
    header += ["h3_norm", "qinv_norm", "stage"]
    rows = []
    for i, t in enumerate(traj.times):
        rows.append(
            [t, traj.controls[i], *traj.states[i], exp_mp(traj.log_h_norm[i]), exp_mp(traj.log_qinv_norm[i]), int(traj.stage[i])]
        )
    return header, rows
