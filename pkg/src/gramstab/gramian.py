"""Damped Gramian Q(lambda) of the linearized system on the truncated H_{1,#}.

Matrices act on the orthonormal basis ``{Phi^2_1, Phi^1_2, Phi^2_2, ...}/sqrt(w_k)``
of H_{1,#}; the Phi^1_1 direction is excluded because every Gramian entry
touching it vanishes (omega_1 = 0 kills ``B* e^{sA} Phi^1_1``).  Reduced
index ``r`` corresponds to interleaved coordinate ``r + 1``.

Entries are the closed-form Laplace transforms of products of sines and
cosines.  For large gains the matrix becomes extremely ill-conditioned
(cond ~ 1e58 at lambda = 1e4, N = 8), so factorization falls back to
mpmath with enough digits to keep solves accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ContractError, DomainError, PositivityError
from .spectral_core import coordinate_weights

#: double-precision condition number above which factorization switches to mpmath
DOUBLE_COND_LIMIT = 1e11
MAX_DPS = 1600


def reduced_labels(n_modes):
    """Basis labels (i, k) of the reduced H_{1,#} coordinates, in order."""
    return [(2, 1)] + [(i, k) for k in range(2, n_modes + 1) for i in (1, 2)]


def _label_arrays(n_modes):
    labels = reduced_labels(n_modes)
    i = np.array([lab[0] for lab in labels])
    k = np.array([lab[1] for lab in labels])
    return i, k


def mode_trajectory_bstar(coupling, i, k, s):
    """``B* e^{sA} Phi^i_k``: ``-beta_k sin(omega_k s)`` for i=1, ``beta_k cos(omega_k s)`` for i=2."""
    if i not in (1, 2):
        raise DomainError(f"component index must be 1 or 2, got {i!r}")
    if not 1 <= k <= coupling.n_modes:
        raise DomainError(f"mode {k} outside 1..{coupling.n_modes}")
    arg = coupling.omega[k - 1] * np.asarray(s, dtype=float)
    if i == 1:
        return -coupling.beta[k - 1] * np.sin(arg)
    return coupling.beta[k - 1] * np.cos(arg)


def _combine(i, j, f_diff, f_sum, g_diff, g_sum):
    """Integral of ``X_i(a s) X_j(b s)`` with X_1 = -sin, X_2 = cos.

    ``f_*`` are the cosine transforms and ``g_*`` the sine transforms at the
    difference ``a - b`` and sum ``a + b`` frequencies.
    """
    ss = 0.5 * (f_diff - f_sum)
    cc = 0.5 * (f_diff + f_sum)
    sc = -0.5 * (g_sum + g_diff)
    cs = -0.5 * (g_sum - g_diff)
    return np.where(
        i == 1, np.where(j == 1, ss, sc), np.where(j == 1, cs, cc)
    )


def _laplace_cos(x, lam):
    return 2.0 * lam / (4.0 * lam * lam + x * x)


def _laplace_sin(x, lam):
    return x / (4.0 * lam * lam + x * x)


def _kernel(coupling, lam, i, k, j, l):
    om_k = coupling.omega[k - 1]
    om_l = coupling.omega[l - 1]
    d, s = om_k - om_l, om_k + om_l
    return _combine(
        i, j, _laplace_cos(d, lam), _laplace_cos(s, lam), _laplace_sin(d, lam), _laplace_sin(s, lam)
    )


def gramian_entry(coupling, lam, i, j, k, l):
    """``d^{i,j}_{k,l} = <Q Phi^i_k, Phi^j_l>_H`` in closed form."""
    if not lam > 0:
        raise DomainError(f"decay gain must be positive, got {lam!r}")
    n = coupling.n_modes
    if not (1 <= k <= n and 1 <= l <= n) or i not in (1, 2) or j not in (1, 2):
        raise DomainError(f"bad entry label ({i},{j},{k},{l}) for {n} modes")
    if (i == 1 and k == 1) or (j == 1 and l == 1):
        return 0.0
    val = _kernel(coupling, lam, np.asarray(i), k, np.asarray(j), l)
    return float(coupling.beta[k - 1] * coupling.beta[l - 1] * val)


def _orthonormal_matrix(coupling, kernel_fn):
    i, k = _label_arrays(coupling.n_modes)
    kern = kernel_fn(i[:, None], k[:, None], i[None, :], k[None, :])
    scale = coupling.beta[k - 1] / np.sqrt(coupling.weights[k - 1])
    mat = scale[:, None] * kern * scale[None, :]
    return 0.5 * (mat + mat.T)


def gramian_matrix(coupling, lam):
    """Dense float64 matrix of Q(lambda) in the orthonormal reduced basis."""
    if not lam > 0:
        raise DomainError(f"decay gain must be positive, got {lam!r}")
    return _orthonormal_matrix(
        coupling, lambda i, k, j, l: _kernel(coupling, lam, i, k, j, l)
    )


def _gramian_matrix_mp(coupling, lam, dps):
    """Same matrix as :func:`gramian_matrix` assembled in ``dps``-digit arithmetic.

    The coupling numbers ``b_k`` are taken as exact binary values; only the
    frequency kernel is evaluated in extended precision.  The result is the
    exact Gramian of the float64 coupling, which is what the simulators use.
    """
    ctx = mpmath.MPContext()
    ctx.dps = dps
    labels = reduced_labels(coupling.n_modes)
    lam = ctx.mpf(lam)
    pi2 = ctx.pi**2
    om = [pi2 * (kk * kk - 1) for kk in range(1, coupling.n_modes + 1)]
    wts = [1 + pi2 * kk * kk + (pi2 * kk * kk) ** 2 + (pi2 * kk * kk) ** 3 for kk in range(1, coupling.n_modes + 1)]
    scale = [ctx.mpf(coupling.b[kk - 1]) * ctx.sqrt(wts[kk - 1]) for (_, kk) in labels]
    n = len(labels)
    mat = ctx.matrix(n, n)
    four_l2 = 4 * lam * lam
    for a, (ia, ka) in enumerate(labels):
        for c in range(a, n):
            ic, kc = labels[c]
            d = om[ka - 1] - om[kc - 1]
            s = om[ka - 1] + om[kc - 1]
            fd, fs = 2 * lam / (four_l2 + d * d), 2 * lam / (four_l2 + s * s)
            gd, gs = d / (four_l2 + d * d), s / (four_l2 + s * s)
            if ia == 1 and ic == 1:
                v = (fd - fs) / 2
            elif ia == 2 and ic == 2:
                v = (fd + fs) / 2
            elif ia == 1:
                v = -(gs + gd) / 2
            else:
                v = -(gs - gd) / 2
            mat[a, c] = mat[c, a] = scale[a] * v * scale[c]
    return ctx, mat


@dataclass(frozen=True, eq=False)
class GramianMatrix:
    """Factored Q(lambda) on the truncated H_{1,#}.

    ``mat`` is always the float64 matrix.  When ``dps`` is not None the
    factorization (and every solve/apply routed through it) is done in
    ``dps``-digit arithmetic because float64 cannot resolve the spectrum.
    """

    lam: float
    n_modes: int
    mu_id: str
    mat: np.ndarray
    sigma_min: float
    sigma_max: float
    dps: int | None = None
    _chol: tuple | None = field(default=None, repr=False)
    _ctx: object = field(default=None, repr=False)
    _mp_mat: object = field(default=None, repr=False)
    _mp_chol: object = field(default=None, repr=False)

    @property
    def dim(self):
        return 2 * self.n_modes - 1

    @property
    def extended(self):
        return self.dps is not None

    @property
    def factored(self):
        return self._chol is not None or self._mp_chol is not None

    @property
    def cond(self):
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else math.inf

    # -- coordinate maps -------------------------------------------------
    def _sqrt_w(self):
        return np.sqrt(coordinate_weights(self.n_modes)[1:])

    def to_orthonormal(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != 2 * self.n_modes:
            raise ContractError(f"expected {2 * self.n_modes} coordinates, got {y.shape[-1]}")
        return y[..., 1:] * self._sqrt_w()

    def from_orthonormal(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (2 * self.n_modes,))
        out[..., 1:] = z / self._sqrt_w()
        return out

    def _check_h1sharp(self, y):
        y = np.asarray(y, dtype=float)
        scale = np.max(np.abs(y)) if y.size else 0.0
        if np.any(np.abs(y[..., 0]) > 1e-12 * max(scale, 1e-300)):
            raise ContractError("vector has a Phi^1_1 component; project onto H_{1,#} first")
        return y

    # -- float64 operator interface (interleaved coordinates) --------------
    def apply(self, y):
        """``Q y`` for interleaved coordinates ``y`` (Phi^1_1 component ignored)."""
        z = self.to_orthonormal(y)
        if self.extended:
            return self.from_orthonormal(self._mp_to_np(self._mp_mat * self._np_to_mp(z)))
        return self.from_orthonormal(z @ self.mat.T)

    def solve(self, y):
        """``Q^{-1} y`` for ``y`` in the truncated H_{1,#} (interleaved coordinates)."""
        y = self._check_h1sharp(y)
        z = self.to_orthonormal(y)
        if self.extended:
            if z.ndim != 1:
                return np.stack([self.solve(row) for row in y])
            return self.from_orthonormal(self._mp_to_np(self.solve_orthonormal_mp(self._np_to_mp(z))))
        if self._chol is None:
            raise PositivityError("Gramian was built without a factorization", self.sigma_min)
        return self.from_orthonormal(cho_solve(self._chol, z.T).T)

    # -- extended precision helpers --------------------------------------
    @property
    def ctx(self):
        if self._ctx is None:
            raise ContractError("Gramian has no extended-precision representation")
        return self._ctx

    def _np_to_mp(self, z):
        return self.ctx.matrix([self.ctx.mpf(float(v)) for v in np.ravel(z)])

    def _mp_to_np(self, v):
        return np.array([float(x) for x in v])

    def mp_matrix(self):
        """The matrix in extended precision (builds one on demand for float64 Gramians)."""
        if self._mp_mat is not None:
            return self._mp_mat
        ctx = mpmath.MPContext()
        ctx.dps = 30
        return ctx.matrix(self.mat.tolist())

    def apply_orthonormal_mp(self, z):
        return self._mp_mat * z

    def solve_orthonormal_mp(self, z):
        if self._mp_chol is None:
            raise PositivityError("Gramian has no extended-precision factorization", self.sigma_min)
        ctx = self.ctx
        L = self._mp_chol
        n = L.rows
        # mpmath's L_solve assumes a unit diagonal, so substitute by hand
        w = [ctx.mpf(0)] * n
        for i in range(n):
            w[i] = (z[i] - ctx.fsum(L[i, j] * w[j] for j in range(i))) / L[i, i]
        x = [ctx.mpf(0)] * n
        for i in reversed(range(n)):
            x[i] = (w[i] - ctx.fsum(L[j, i] * x[j] for j in range(i + 1, n))) / L[i, i]
        return ctx.matrix(x)

    # -- feedback ---------------------------------------------------------
    def feedback_gain(self, coupling):
        """Interleaved vector ``g`` with ``-B* Q^{-1} proj y = -g . y``."""
        if coupling.n_modes != self.n_modes:
            raise ContractError("coupling and Gramian truncation levels differ")
        b_on = np.zeros(2 * self.n_modes)
        b_on[1::2] = coupling.b
        b_orth = b_on[1:] * self._sqrt_w()
        if self.extended:
            x = self._mp_to_np(self.solve_orthonormal_mp(self._np_to_mp(b_orth)))
        else:
            x = cho_solve(self._chol, b_orth)
        g = np.zeros(2 * self.n_modes)
        g[1:] = x * self._sqrt_w()
        return g


def _surrogate_violation(coupling):
    b = np.abs(coupling.b)
    tiny = 1e-14 * max(np.max(b), 1e-300)
    bad = [k + 1 for k in range(coupling.n_modes) if b[k] <= tiny]
    return bad


def build_gramian(coupling, lam, precision="auto", require_positive=True):
    """Assemble and factor Q(lambda).

    ``precision`` is ``"auto"`` (float64 unless the condition number exceeds
    :data:`DOUBLE_COND_LIMIT`), ``"double"``, or an explicit mpmath digit count.
    With ``require_positive=False`` a singular matrix is returned unfactored.
    """
    if not lam > 0:
        raise DomainError(f"decay gain must be positive, got {lam!r}")
    lam = float(lam)
    mat = gramian_matrix(coupling, lam)
    eig = np.linalg.eigvalsh(mat)
    smin, smax = float(eig[0]), float(eig[-1])
    common = dict(lam=lam, n_modes=coupling.n_modes, mu_id=coupling.mu_id, mat=mat)

    bad = _surrogate_violation(coupling)
    if bad or smax <= 0:
        if require_positive:
            raise PositivityError(
                f"Gramian is singular (smallest eigenvalue {smin:.3e}); "
                f"uncontrollable modes {bad}",
                smallest_eigenvalue=smin,
            )
        return GramianMatrix(sigma_min=smin, sigma_max=smax, **common)

    if precision == "double" or (precision == "auto" and smin > smax / DOUBLE_COND_LIMIT):
        try:
            chol = cho_factor(mat, lower=True)
        except LinAlgError:
            raise PositivityError(
                f"Cholesky factorization failed (smallest eigenvalue {smin:.3e})",
                smallest_eigenvalue=smin,
            ) from None
        if smin <= 0:
            raise PositivityError(f"smallest eigenvalue {smin:.3e} is not positive", smin)
        return GramianMatrix(sigma_min=smin, sigma_max=smax, _chol=chol, **common)

    dps = 50 if precision == "auto" else int(precision)
    while True:
        ctx, mp_mat = _gramian_matrix_mp(coupling, lam, dps)
        ev = ctx.eigsy(mp_mat, eigvals_only=True)
        ev = sorted(ev)
        mp_min, mp_max = ev[0], ev[-1]
        resolved = mp_min > 0 and mp_min > mp_max * ctx.mpf(10) ** (-(dps - 25))
        if resolved or precision != "auto" or dps >= MAX_DPS:
            break
        dps *= 2
    if not mp_min > 0:
        raise PositivityError(
            f"Gramian not positive at {dps} digits (smallest eigenvalue {mpmath.nstr(mp_min, 5)})",
            smallest_eigenvalue=float(mp_min),
        )
    chol = ctx.cholesky(mp_mat)
    return GramianMatrix(
        sigma_min=float(mp_min),
        sigma_max=float(mp_max),
        dps=dps,
        _ctx=ctx,
        _mp_mat=mp_mat,
        _mp_chol=chol,
        **common,
    )


def gramian_solve(Q, y):
    """``x`` with ``Q x = y``; raises :class:`PositivityError` if Q is not factored."""
    if not Q.factored:
        raise PositivityError("Gramian is not positive definite", Q.sigma_min)
    return Q.solve(y)


def generator_matrix(coupling, reduced=True):
    """Coordinate matrix of A: block ``[[0, omega_k], [-omega_k, 0]]`` per mode.

    The blocks are identical in interleaved and orthonormal coordinates since
    both coordinates of one mode share the weight ``w_k``.
    """
    n = coupling.n_modes
    A = np.zeros((2 * n, 2 * n))
    for k in range(n):
        A[2 * k, 2 * k + 1] = coupling.omega[k]
        A[2 * k + 1, 2 * k] = -coupling.omega[k]
    return A[1:, 1:] if reduced else A


def input_matrix(coupling):
    """Orthonormal reduced coordinates of B: ``sqrt(w_k) b_k`` on every Phi^2_k."""
    b = coupling.input_vector()
    return b[1:] * np.sqrt(coordinate_weights(coupling.n_modes)[1:])


def lyapunov_residual(Q, coupling, relative=False):
    """Max-norm of ``A Q + Q A^T - B B^T + 2 lambda Q`` on the truncation.

    With ``relative=True`` the residual is divided by ``max |B B^T|``.
    """
    if relative:
        ref = float(np.max(input_matrix(coupling) ** 2))
        return lyapunov_residual(Q, coupling) / ref if ref > 0 else math.inf
    if coupling.n_modes != Q.n_modes:
        raise ContractError("coupling and Gramian truncation levels differ")
    A = generator_matrix(coupling)
    B = input_matrix(coupling)
    if Q.extended:
        ctx = Q.ctx
        Am = ctx.matrix(A.tolist())
        Bm = ctx.matrix(B.tolist())
        M = Q._mp_mat
        R = Am * M + M * Am.T - Bm * Bm.T + 2 * ctx.mpf(Q.lam) * M
        return float(max(abs(x) for x in R))
    R = A @ Q.mat + Q.mat @ A.T - np.outer(B, B) + 2.0 * Q.lam * Q.mat
    return float(np.max(np.abs(R)))


@dataclass(frozen=True)
class LambdaScan:
    lambdas: np.ndarray
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    slope_sqrt: float  # fit of ln sigma_min ~ a - slope * sqrt(lambda)
    slope_log: float   # fit of ln sigma_min ~ a - slope * ln(lambda)
    c_bound: float     # smallest C >= 0 with ln sigma_min >= -C sqrt(lambda)

    @property
    def ln_sigma_min(self):
        return np.log(self.sigma_min)

    def rows(self):
        return [
            [lam, smin, smax, math.log(smin)]
            for lam, smin, smax in zip(self.lambdas, self.sigma_min, self.sigma_max)
        ]


def lambda_scaling_scan(coupling, lambdas):
    lambdas = np.asarray(list(lambdas), dtype=float)
    if lambdas.size == 0 or np.any(~(lambdas > 0)):
        raise DomainError("lambda scan needs positive gains")
    smin, smax = [], []
    for lam in lambdas:
        Q = build_gramian(coupling, lam)
        smin.append(Q.sigma_min)
        smax.append(Q.sigma_max)
    smin = np.array(smin)
    smax = np.array(smax)
    ln = np.log(smin)
    if lambdas.size >= 2:
        slope_sqrt = -np.polyfit(np.sqrt(lambdas), ln, 1)[0]
        slope_log = -np.polyfit(np.log(lambdas), ln, 1)[0]
    else:
        slope_sqrt = slope_log = math.nan
    c_bound = max(0.0, float(np.max(-ln / np.sqrt(lambdas))))
    return LambdaScan(lambdas, smin, smax, float(slope_sqrt), float(slope_log), c_bound)


def gramian_sidecar(Q):
    return {
        "lambda": Q.lam,
        "N": Q.n_modes,
        "sigma_min": Q.sigma_min,
        "sigma_max": Q.sigma_max,
        "mu_id": Q.mu_id,
        "dps": Q.dps,
    }
