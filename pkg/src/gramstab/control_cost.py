"""Minimal-energy steering of the truncated linear system and its cost in T.

With ``phi_a(t) = B* e^{tA} Phi_a`` for the reduced labels ``a``, the
control ``u = sum_a eta_a phi_a`` moves ``source`` to ``target`` in time T
exactly when ``G_T eta = W d``, where ``G_T = int_0^T phi phi^T`` and
``d = e^{-TA} target - source``.  It is the L2-smallest such control and
``||u||^2 = eta^T G_T eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from .errors import ConditioningError, ContractError, DomainError, GramstabError
from .gramian import _combine, _label_arrays, build_gramian
from .parallel import ordered_map
from .spectral_core import (
    basis_vector,
    coordinate_weights,
    deinterleave,
    gl_panel_nodes,
    h3_norm,
    interleave,
)

COND_LIMIT = 1e14
MP_COND = 1e6  # above this the solve and replay run in mpmath
MIN_SAMPLES = 2048


def _cos_integral(x, T):
    """``int_0^T cos(x s) ds``."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, T, np.sin(x * T) / safe)


def _sin_integral(x, T):
    """``int_0^T sin(x s) ds``, written without cancellation."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 0.0, 2.0 * np.sin(0.5 * x * T) ** 2 / safe)


def finite_horizon_gramian(coupling, T, N=None, basis="raw"):
    """``G_T`` on the reduced labels ``(2,1), (1,2), (2,2), ...``.

    ``basis="raw"`` gives ``int_0^T phi_a phi_b`` for the unnormalized
    eigenvectors; ``"orthonormal"`` rescales to the H-orthonormal basis, the
    same coordinates as the damped Gramian Q(lambda).
    """
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T!r}")
    if N is not None and N != coupling.n_modes:
        coupling = coupling.truncate(N)
    i, k = _label_arrays(coupling.n_modes)
    om = coupling.omega[k - 1]
    diff = om[:, None] - om[None, :]
    summ = om[:, None] + om[None, :]
    kern = _combine(
        i[:, None],
        i[None, :],
        _cos_integral(diff, T),
        _cos_integral(summ, T),
        _sin_integral(diff, T),
        _sin_integral(summ, T),
    )
    scale = coupling.beta[k - 1]
    if basis == "orthonormal":
        scale = scale / np.sqrt(coupling.weights[k - 1])
    elif basis != "raw":
        raise DomainError(f"unknown basis {basis!r}")
    G = scale[:, None] * kern * scale[None, :]
    return 0.5 * (G + G.T)


def observation_functions(coupling, t):
    """Rows ``phi_a(t)`` for the reduced labels, shape ``(2N-1, len(t))``."""
    i, k = _label_arrays(coupling.n_modes)
    arg = coupling.omega[k - 1][:, None] * np.asarray(t, dtype=float)[None, :]
    beta = coupling.beta[k - 1][:, None]
    return np.where((i == 1)[:, None], -beta * np.sin(arg), beta * np.cos(arg))


@dataclass(frozen=True)
class SteeringProblem:
    T: float
    N: int
    coupling: object
    target: np.ndarray
    source: np.ndarray | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T!r}")
        if self.N < 1:
            raise DomainError(f"need at least one mode, got {self.N}")
        if self.coupling.n_modes < self.N:
            raise ContractError(f"coupling has {self.coupling.n_modes} modes, need {self.N}")
        if self.coupling.n_modes != self.N:
            object.__setattr__(self, "coupling", self.coupling.truncate(self.N))
        for name in ("target", "source"):
            v = getattr(self, name)
            if v is None:
                v = np.zeros(2 * self.N)
            v = np.asarray(v, dtype=float)
            if v.shape != (2 * self.N,):
                raise ContractError(f"{name} must have {2 * self.N} coordinates")
            scale = float(np.max(np.abs(v))) if v.size else 0.0
            if abs(v[0]) > 1e-12 * max(scale, 1e-300):
                raise ContractError(f"{name} has a Phi^1_1 component, which is unreachable")
            object.__setattr__(self, name, v)


def _rotate(y, omega, t):
    """``e^{tA} y`` on interleaved coordinates."""
    return interleave(deinterleave(y) * np.exp(-1j * omega * t))


@dataclass(frozen=True)
class ControlResult:
    times: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    cost: float
    l1_norm: float
    cond: float
    terminal_error: float
    terminal_state: np.ndarray
    replay_nodes: int

    def table(self):
        return ["t", "u"], [[t, v] for t, v in zip(self.times, self.u)]


def equilibrated_cond(G):
    """2-norm condition number of ``D G D`` with ``D = diag(G)^{-1/2}``.

    This is the matrix the steering solve actually factors; the raw ``G_T``
    carries an extra, harmless spread from the mode weights.
    """
    d = 1.0 / np.sqrt(np.diag(G))
    ev = eigvalsh(d[:, None] * G * d[None, :])
    return float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf


def _solve_equilibrated(G, rhs):
    d = 1.0 / np.sqrt(np.diag(G))
    Gs = d[:, None] * G * d[None, :]
    try:
        fac = cho_factor(Gs, lower=True)
    except np.linalg.LinAlgError:
        raise ConditioningError("G_T is not numerically positive definite; reduce N or enlarge T") from None
    return d * cho_solve(fac, d * rhs)


def _replay(problem, eta, n_nodes=20, tol=1e-14, max_panels=2**14, engine=None):
    """Terminal state of the open loop under ``u = eta . phi`` by Duhamel's formula.

    The drift is integrated exactly in the interaction picture; the input
    integral ``int_0^T e^{-tA} B u(t) dt`` uses composite Gauss-Legendre with
    panel doubling from at least ``MIN_SAMPLES`` nodes.
    """
    cpl = problem.coupling
    T = problem.T
    omega = cpl.omega
    b = cpl.b

    def pulled_back(panels):
        x, w = gl_panel_nodes(0.0, T, panels, n_nodes)
        if engine is not None:
            parts, mag = engine.pulled_back(eta, x, w)
            return np.array([complex(float(re), float(im)) for re, im in parts]), parts, mag
        u = eta @ observation_functions(cpl, x)
        # B u adds i b_k u to each complex coefficient; e^{-tA} multiplies by e^{i omega t}
        phase = np.exp(1j * omega[:, None] * x[None, :])
        vals = 1j * b * ((phase * u[None, :]) @ w)
        return vals, None, float(np.abs(u) @ w)

    panels = max(8, -(-MIN_SAMPLES // n_nodes))
    prev, _, _ = pulled_back(panels)
    bmax = float(np.max(np.abs(b)))
    while True:
        panels *= 2
        cur, parts, mag = pulled_back(panels)
        change = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        # measured against int |B u|: the integrand oscillates and cancels
        scale = max(float(np.max(np.abs(cur))), bmax * mag, 1e-300)
        if change <= tol * scale or panels >= max_panels:
            break
        prev = cur
    if engine is None:
        a_T = (deinterleave(problem.source) + cur) * np.exp(-1j * omega * T)
        return interleave(a_T), panels * n_nodes
    # add the source and rotate back in extended precision, then round once
    ctx = engine.ctx
    src = deinterleave(problem.source)
    out = []
    for k, (re, im) in enumerate(parts):
        re = re + ctx.mpf(float(src[k].real))
        im = im + ctx.mpf(float(src[k].imag))
        c, s = ctx.cos_sin(engine.omega[k] * engine.T)
        # multiply by e^{-i omega T}
        out.append(complex(float(re * c + im * s), float(im * c - re * s)))
    return interleave(np.array(out)), panels * n_nodes


def _l1_norm(problem, eta, n_nodes=20, engine=None):
    """``int_0^T |u|`` on a fine composite rule (u changes sign, so refine generously)."""
    cpl = problem.coupling
    panels = max(256, int(4 * cpl.omega[-1] * problem.T / math.pi) + 1)
    x, w = gl_panel_nodes(0.0, problem.T, panels, n_nodes)
    if engine is not None:
        return engine.l1(eta, x, w)
    return float(np.abs(eta @ observation_functions(cpl, x)) @ w)


class _MPSteering:
    """Extended-precision twin of the float steering path for ill-conditioned ``G_T``.

    Quadrature nodes stay float64 but are converted exactly, so all terms of
    ``u = sum eta_a phi_a`` are evaluated at the same point and their large
    mutual cancellation is carried out in ``dps`` digits.
    """

    def __init__(self, coupling, T, dps):
        ctx = mpmath.MPContext()
        ctx.dps = dps
        self.ctx = ctx
        self.T = ctx.mpf(T)
        n = coupling.n_modes
        self.omega = [ctx.pi**2 * (k * k - 1) for k in range(1, n + 1)]
        self.beta = [ctx.mpf(v) for v in coupling.beta]
        self.b = [ctx.mpf(v) for v in coupling.b]
        self.labels = list(zip(*_label_arrays(n)))

    def gramian(self):
        ctx, T = self.ctx, self.T

        def ci(x):
            return T if x == 0 else ctx.sin(x * T) / x

        def si(x):
            return ctx.mpf(0) if x == 0 else 2 * ctx.sin(x * T / 2) ** 2 / x

        m = len(self.labels)
        G = ctx.matrix(m, m)
        for a, (i, k) in enumerate(self.labels):
            for c, (j, l) in enumerate(self.labels[a:], start=a):
                wk, wl = self.omega[k - 1], self.omega[l - 1]
                fd, fs, gd, gs = ci(wk - wl), ci(wk + wl), si(wk - wl), si(wk + wl)
                if i == 1 and j == 1:
                    v = (fd - fs) / 2
                elif i == 2 and j == 2:
                    v = (fd + fs) / 2
                elif i == 1:
                    v = -(gs + gd) / 2
                else:
                    v = -(gs - gd) / 2
                G[a, c] = G[c, a] = self.beta[k - 1] * self.beta[l - 1] * v
        return G

    def solve(self, rhs):
        ctx = self.ctx
        G = self.gramian()
        eta = ctx.cholesky_solve(G, ctx.matrix([ctx.mpf(float(v)) for v in rhs]))
        cost = ctx.sqrt(ctx.fdot(eta, G * eta))
        return eta, cost

    def _modes(self, t):
        return [self.ctx.cos_sin(w * t) for w in self.omega]

    def control(self, eta, t):
        cs = self._modes(t)
        return self._u(eta, cs), cs

    def _u(self, eta, cs):
        terms = []
        for a, (i, k) in enumerate(self.labels):
            c, s = cs[k - 1]
            terms.append(eta[a] * self.beta[k - 1] * (-s if i == 1 else c))
        return self.ctx.fsum(terms)

    def samples(self, eta, times):
        return np.array([float(self.control(eta, self.ctx.mpf(float(t)))[0]) for t in times])

    def pulled_back(self, eta, x, w):
        ctx = self.ctx
        n = len(self.omega)
        acc_re = [[] for _ in range(n)]
        acc_im = [[] for _ in range(n)]
        mag = []
        for xi, wi in zip(x, w):
            u, cs = self.control(eta, ctx.mpf(float(xi)))
            uw = u * ctx.mpf(float(wi))
            mag.append(abs(uw))
            for k in range(n):
                c, s = cs[k]
                acc_re[k].append(uw * c)
                acc_im[k].append(uw * s)
        # i b_k (re + i im)
        parts = [(-self.b[k] * ctx.fsum(acc_im[k]), self.b[k] * ctx.fsum(acc_re[k])) for k in range(n)]
        return parts, float(ctx.fsum(mag))

    def l1(self, eta, x, w):
        ctx = self.ctx
        return float(ctx.fsum(abs(self.control(eta, ctx.mpf(float(xi)))[0]) * ctx.mpf(float(wi)) for xi, wi in zip(x, w)))


def min_energy_control(problem, n_samples=MIN_SAMPLES, cond_limit=COND_LIMIT, precision="auto"):
    """Minimal-L2 control steering ``problem.source`` to ``problem.target``.

    Returns the control sampled at ``n_samples + 1`` uniform times, its L2
    cost and L1 norm, and the relative H-error of the replayed terminal state.
    ``precision`` is ``"auto"`` (float64 while the equilibrated condition
    number stays below ``MP_COND``), ``"double"``, or an mpmath digit count.
    """
    cpl = problem.coupling
    T = problem.T
    G = finite_horizon_gramian(cpl, T)
    cond = equilibrated_cond(G)
    if not cond <= cond_limit:
        raise ConditioningError(
            f"cond(G_T) = {cond:.3e} exceeds {cond_limit:.0e} at N={problem.N}, T={T}; "
            "use fewer modes or a longer horizon"
        )
    d = _rotate(problem.target, cpl.omega, -T) - problem.source
    rhs = (coordinate_weights(problem.N) * d)[1:]
    times = np.linspace(0.0, T, n_samples + 1)
    if not np.any(rhs):
        eta = np.zeros_like(rhs)
        zero = np.zeros_like(times)
        return ControlResult(times, zero, eta, 0.0, 0.0, cond, 0.0, problem.target.copy(), 0)

    if precision == "auto":
        precision = "double" if cond <= MP_COND else 30 + int(math.log10(cond))
    if precision == "double":
        eta = _solve_equilibrated(G, rhs)
        cost = math.sqrt(max(float(eta @ G @ eta), 0.0))
        u = eta @ observation_functions(cpl, times)
        y_T, nodes = _replay(problem, eta)
        l1 = _l1_norm(problem, eta)
    else:
        mp = _MPSteering(cpl, T, int(precision))
        eta_mp, cost_mp = mp.solve(rhs)
        eta = np.array([float(v) for v in eta_mp])
        cost = float(cost_mp)
        u = mp.samples(eta_mp, times)
        y_T, nodes = _replay(problem, eta_mp, engine=mp)
        l1 = _l1_norm(problem, eta_mp, engine=mp)
    ref = float(h3_norm(problem.target))
    err = float(h3_norm(y_T - problem.target))
    if ref > 0:
        err /= ref
    return ControlResult(times, u, eta, cost, l1, cond, err, y_T, nodes)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostCell:
    N: int
    T: float
    ln_cost: float
    ln_l1: float
    cond: float
    terminal_error: float
    status: str


@dataclass(frozen=True)
class CostScaling:
    cells: tuple
    slopes: dict           # N -> least-squares slope of ln cost against 1/T
    lower_bound_C: float   # smallest C with ln ||u||_L1 >= 1/(4T) - C ln(1/T) at the largest N
    lower_bound_N: int

    def table(self):
        header = ["N", "T", "inv_T", "ln_cost", "cond_GT", "terminal_err"]
        rows = [[c.N, c.T, 1.0 / c.T, c.ln_cost, c.cond, c.terminal_error] for c in self.cells]
        return header, rows


def default_target(N):
    """``Phi^2_1``."""
    return basis_vector(N, 2, 1)


def cost_scaling_experiment(coupling, Ns, Ts, target=None):
    """ln cost of steering 0 to ``target`` (default ``Phi^2_1``) on the grid ``Ns x Ts``.

    Cells that fail (conditioning, replay) are kept with ``status`` set and
    NaN values.  ``target`` may be a callable ``N -> vector``.
    """
    Ns = [int(n) for n in Ns]
    Ts = [float(t) for t in Ts]
    if not Ns or not Ts:
        raise DomainError("empty experiment grid")
    if any(t <= 0 for t in Ts):
        raise DomainError(f"horizons must be positive, got {Ts}")
    if any(n < 2 for n in Ns) or max(Ns) > coupling.n_modes:
        raise DomainError(f"mode counts must lie in 2..{coupling.n_modes}, got {Ns}")

    def cell(nt):
        n, T = nt
        tgt = default_target(n) if target is None else (target(n) if callable(target) else target)
        try:
            res = min_energy_control(SteeringProblem(T, n, coupling, tgt))
        except GramstabError as exc:
            return CostCell(n, T, math.nan, math.nan, math.nan, math.nan, type(exc).__name__)
        ln_cost = math.log(res.cost) if res.cost > 0 else -math.inf
        ln_l1 = math.log(res.l1_norm) if res.l1_norm > 0 else -math.inf
        return CostCell(n, T, ln_cost, ln_l1, res.cond, res.terminal_error, "ok")

    cells = tuple(ordered_map(cell, [(n, T) for n in Ns for T in Ts]))
    slopes = {}
    for n in Ns:
        ok = [c for c in cells if c.N == n and c.status == "ok" and math.isfinite(c.ln_cost)]
        if len(ok) >= 2:
            x = np.array([1.0 / c.T for c in ok])
            y = np.array([c.ln_cost for c in ok])
            slopes[n] = float(np.polyfit(x, y, 1)[0])
        else:
            slopes[n] = math.nan
    top = max(Ns)
    ok = [c for c in cells if c.N == top and c.status == "ok" and c.T < 1 and math.isfinite(c.ln_l1)]
    C = max(((1.0 / (4.0 * c.T) - c.ln_l1) / math.log(1.0 / c.T) for c in ok), default=math.nan)
    return CostScaling(cells, slopes, float(C), top)


def gramian_scaling_consistency(coupling, lambdas):
    """Affine fit of ``ln sigma_min(G_{1/sqrt(lam)})`` against ``ln sigma_min(Q(lam))``.

    Both Gramians in the H-orthonormal basis.  Returns
    ``(slope, intercept, max_residual, x, y)``; diagnostic only.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    x = np.array([math.log(build_gramian(coupling, lam).sigma_min) for lam in lambdas])
    y = np.array(
        [math.log(eigvalsh(finite_horizon_gramian(coupling, 1.0 / math.sqrt(lam), basis="orthonormal"))[0]) for lam in lambdas]
    )
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + intercept))))
    return float(slope), float(intercept), resid, x, y
