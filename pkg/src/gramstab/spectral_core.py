"""Modal (sine-basis) realization of the state space, operators and dipole data.

States live in the Dirichlet eigenbasis ``phi_k(x) = sqrt(2) sin(k pi x)`` of
``-d^2/dx^2`` on (0, 1).  A complex wave function is stored by its modal
coefficients ``a_k``; the real-pair space used by the feedback is stored as an
interleaved real vector::

    [Re a_1, Im a_1, Re a_2, Im a_2, ..., Re a_N, Im a_N]

so that the "Phi^1_1" direction (real part of the ground mode) is index 0.
All H^3 inner products are diagonal in this basis with weights
``w_k = 1 + l_k + l_k**2 + l_k**3``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import ContractError, DomainError, QuadratureError

SQRT2 = math.sqrt(2.0)


def eigenvalue(k):
    """Dirichlet eigenvalue ``pi^2 k^2``."""
    if int(k) != k or k < 1:
        raise DomainError(f"mode index must be a positive integer, got {k!r}")
    return math.pi**2 * k * k


def eigenvalues(n_modes):
    k = np.arange(1, n_modes + 1, dtype=float)
    return np.pi**2 * k * k


def eigenfunction(k, x):
    return SQRT2 * np.sin(k * np.pi * np.asarray(x, dtype=float))


def eigenfunction_third_derivative_at_boundary(k, endpoint):
    """Value of ``phi_k'''`` at ``x = 0`` or ``x = 1``."""
    if int(k) != k or k < 1:
        raise DomainError(f"mode index must be a positive integer, got {k!r}")
    if endpoint not in (0, 1):
        raise DomainError(f"endpoint must be 0 or 1, got {endpoint!r}")
    val = -SQRT2 * (k * math.pi) ** 3
    if endpoint == 1 and k % 2 == 1:
        val = -val
    return val


def third_derivative_boundary_vector(n_modes, endpoint):
    return np.array(
        [eigenfunction_third_derivative_at_boundary(k, endpoint) for k in range(1, n_modes + 1)]
    )


def sobolev_weights(n_modes):
    """``w_k = ||phi_k||_{H^3}^2`` for k = 1..N."""
    lam = eigenvalues(n_modes)
    return 1.0 + lam + lam**2 + lam**3


# ---------------------------------------------------------------------------
# coordinates


def _check_modes(n_modes):
    if int(n_modes) != n_modes or n_modes < 2:
        raise DomainError(f"need at least 2 modes, got {n_modes!r}")
    return int(n_modes)


def coord_index(i, k):
    """Position of ``Phi^i_k`` (i=1 real, i=2 imaginary part) in the interleaved layout."""
    if i not in (1, 2) or k < 1:
        raise DomainError(f"bad basis label (i={i!r}, k={k!r})")
    return 2 * (k - 1) + (i - 1)


def basis_vector(n_modes, i, k):
    v = np.zeros(2 * n_modes)
    v[coord_index(i, k)] = 1.0
    return v


def interleave(a):
    """Complex modal vector (..., N) -> real interleaved vector (..., 2N)."""
    a = np.asarray(a)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
    out[..., 0::2] = a.real
    out[..., 1::2] = a.imag
    return out


def deinterleave(y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] % 2:
        raise ContractError("interleaved vector must have even length")
    return y[..., 0::2] + 1j * y[..., 1::2]


def coordinate_weights(n_modes):
    """H^3 weight of every interleaved coordinate (each w_k appears twice)."""
    return np.repeat(sobolev_weights(n_modes), 2)


def h3_inner(x, y):
    """H^3 inner product of two interleaved real coordinate vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape[-1] % 2:
        raise ContractError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.sum(coordinate_weights(x.shape[-1] // 2) * x * y))


def h3_norm(y):
    y = np.asarray(y, dtype=float)
    w = coordinate_weights(y.shape[-1] // 2)
    return np.sqrt(np.sum(w * y * y, axis=-1))


def project_h1sharp(y):
    """Remove the Phi^1_1 coordinate (real part of mode 1); everything else is kept."""
    out = np.array(y, dtype=float, copy=True)
    out[..., 0] = 0.0
    return out


@dataclass(frozen=True)
class SpectralState:
    """Complex modal coefficients ``a_k = <Psi, phi_k>`` of a wave function."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1:
            raise ContractError("coeffs must be one-dimensional")
        _check_modes(c.size)
        if not np.all(np.isfinite(c)):
            raise ContractError("state coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self):
        return self.coeffs.size

    @classmethod
    def from_real(cls, y):
        return cls(deinterleave(y))

    def to_real(self):
        return interleave(self.coeffs)

    def l2_norm_sq(self):
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def h3_norm_sq(self):
        return float(np.sum(sobolev_weights(self.n_modes) * np.abs(self.coeffs) ** 2))


def ground_state(n_modes):
    a = np.zeros(_check_modes(n_modes), dtype=complex)
    a[0] = 1.0
    return SpectralState(a)


# ---------------------------------------------------------------------------
# dipole profiles

_POLY_RE = re.compile(r"^poly:(\[.*\])$")
_BUILTINS = {"xsq": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class DipoleProfile:
    """Real dipole moment ``mu`` on [0, 1].

    Either polynomial (``coeffs`` in increasing degree) or an arbitrary
    vectorized callable with optional first/second derivatives.
    """

    ident: str
    coeffs: Optional[tuple] = None
    func: Optional[Callable] = field(default=None, compare=False)
    derivs: tuple = field(default=(), compare=False)

    @classmethod
    def polynomial(cls, coeffs, ident=None):
        coeffs = tuple(float(c) for c in coeffs)
        if not coeffs:
            raise DomainError("polynomial dipole needs at least one coefficient")
        if ident is None:
            ident = "poly:" + json.dumps(list(coeffs))
        return cls(ident=ident, coeffs=coeffs)

    @classmethod
    def from_callable(cls, func, ident="custom", derivs=()):
        return cls(ident=ident, func=func, derivs=tuple(derivs))

    @property
    def is_polynomial(self):
        return self.coeffs is not None

    def __call__(self, x):
        if self.is_polynomial:
            return Polynomial(self.coeffs)(np.asarray(x, dtype=float))
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x, order=1):
        if order == 0:
            return self(x)
        if self.is_polynomial:
            return Polynomial(self.coeffs).deriv(order)(np.asarray(x, dtype=float))
        if order <= len(self.derivs):
            return np.asarray(self.derivs[order - 1](np.asarray(x, dtype=float)), dtype=float)
        raise DomainError(f"derivative of order {order} not available for {self.ident!r}")


def parse_dipole(ident):
    """Parse ``"poly:[c0,c1,...]"`` or ``"builtin:<name>"``."""
    if not isinstance(ident, str):
        raise DomainError(f"dipole identifier must be a string, got {ident!r}")
    if ident.startswith("builtin:"):
        name = ident[len("builtin:"):]
        if name not in _BUILTINS:
            raise DomainError(f"unknown builtin dipole {name!r}")
        return DipoleProfile.polynomial(_BUILTINS[name], ident=ident)
    m = _POLY_RE.match(ident.strip())
    if m is None:
        raise DomainError(f"malformed dipole identifier {ident!r}")
    try:
        coeffs = json.loads(m.group(1))
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed dipole identifier {ident!r}: {exc}") from None
    if not coeffs or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coeffs):
        raise DomainError(f"polynomial coefficients must be a non-empty list of numbers: {ident!r}")
    if not all(math.isfinite(c) for c in coeffs):
        raise DomainError(f"non-finite polynomial coefficient in {ident!r}")
    return DipoleProfile.polynomial(coeffs, ident=ident)


# ---------------------------------------------------------------------------
# quadrature


def gl_panel_nodes(a, b, panels, n_nodes=20):
    """Abscissae and weights of the composite Gauss-Legendre rule on ``panels`` panels."""
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    wts = (half[:, None] * wg[None, :]).ravel()
    return x, wts


def refine_panels(estimate, tol=1e-13, start_panels=8, max_panels=2**20):
    """Double the panel count until ``estimate(panels)`` changes by < ``tol`` everywhere.

    Returns ``(estimate, max_abs_change_per_component, panels)``.
    """
    panels = start_panels
    prev = np.asarray(estimate(panels))
    while True:
        panels *= 2
        cur = np.asarray(estimate(panels))
        change = np.abs(cur - prev)
        if np.all(change < tol) or panels >= max_panels:
            return cur, change, panels
        prev = cur


def gauss_legendre(f, a, b, tol=1e-13, n_nodes=20, start_panels=8, max_panels=2**20):
    """Adaptive composite Gauss-Legendre integral of a vectorized ``f`` over [a, b].

    ``f`` may return extra leading axes; the last axis must run over the abscissae.
    """
    def estimate(panels):
        x, wts = gl_panel_nodes(a, b, panels, n_nodes)
        return np.asarray(f(x)) @ wts

    return refine_panels(estimate, tol, start_panels, max_panels)


def _poly_cos_moments(coeffs, m):
    """``int_0^1 p(x) cos(m pi x) dx`` for integer m >= 0 (exact recursion)."""
    deg = len(coeffs) - 1
    if m == 0:
        return sum(c / (j + 1) for j, c in enumerate(coeffs))
    a = m * math.pi
    s = -1.0 if m % 2 else 1.0
    cos_m = [0.0] * (deg + 1)
    sin_m = [0.0] * (deg + 1)
    sin_m[0] = (1.0 - s) / a
    for j in range(1, deg + 1):
        cos_m[j] = -(j / a) * sin_m[j - 1]
        sin_m[j] = -s / a + (j / a) * cos_m[j - 1]
    return sum(c * cm for c, cm in zip(coeffs, cos_m))


# ---------------------------------------------------------------------------
# coupling data


@dataclass(frozen=True)
class DipoleCoupling:
    """Interaction data of a dipole profile truncated to N modes.

    ``b[k-1] = <mu phi_1, phi_k>``, ``mu_mat[k-1, l-1] = <mu phi_k, phi_l>``,
    ``beta = w * b`` (the coordinate form of B*), ``omega[k-1] = l_k - l_1``.
    """

    mu_id: str
    b: np.ndarray
    mu_mat: np.ndarray
    beta: np.ndarray
    omega: np.ndarray
    weights: np.ndarray

    @property
    def n_modes(self):
        return self.b.size

    def truncate(self, n_modes):
        n = _check_modes(n_modes)
        if n > self.n_modes:
            raise ContractError(f"cannot extend a {self.n_modes}-mode coupling to {n} modes")
        return DipoleCoupling(
            self.mu_id,
            self.b[:n].copy(),
            self.mu_mat[:n, :n].copy(),
            self.beta[:n].copy(),
            self.omega[:n].copy(),
            self.weights[:n].copy(),
        )

    def input_vector(self):
        """Interleaved coordinates of B (per unit control): ``b_k`` on every Phi^2_k."""
        v = np.zeros(2 * self.n_modes)
        v[1::2] = self.b
        return v

    def bstar_vector(self):
        """Row vector of B* acting on interleaved coordinates."""
        v = np.zeros(2 * self.n_modes)
        v[1::2] = self.beta
        return v


def build_coupling(mu, n_modes, tol=1e-12, method="auto"):
    """Compute the modal dipole data of ``mu`` for the first ``n_modes`` modes.

    Polynomial profiles use exact moment formulas unless ``method="quadrature"``;
    other profiles always go through adaptive Gauss-Legendre quadrature.
    """
    n = _check_modes(n_modes)
    if isinstance(mu, str):
        mu = parse_dipole(mu)
    if method not in ("auto", "closed", "quadrature"):
        raise DomainError(f"unknown coupling method {method!r}")
    if method == "closed" and not mu.is_polynomial:
        raise DomainError("closed-form coupling requires a polynomial dipole")

    ks = np.arange(1, n + 1)
    if mu.is_polynomial and method != "quadrature":
        moments = {m: _poly_cos_moments(mu.coeffs, m) for m in range(0, 2 * n + 1)}
        mat = np.empty((n, n))
        for k in range(1, n + 1):
            for l in range(k, n + 1):
                mat[k - 1, l - 1] = mat[l - 1, k - 1] = moments[abs(k - l)] - moments[k + l]
    else:
        def estimate(panels):
            x, wts = gl_panel_nodes(0.0, 1.0, panels)
            s = SQRT2 * np.sin(np.pi * ks[:, None] * x[None, :])
            return (s * (wts * mu(x))[None, :]) @ s.T

        qtol = min(tol, 1e-13)
        mat, change, _ = refine_panels(estimate, qtol, start_panels=4, max_panels=2**14)
        if not np.all(change < qtol):
            k, l = np.unravel_index(int(np.argmax(change)), change.shape)
            raise QuadratureError(
                f"quadrature did not converge for (k={k + 1}, l={l + 1})", k=k + 1, l=l + 1
            )
        mat = 0.5 * (mat + mat.T)

    if not np.all(np.isfinite(mat)):
        raise QuadratureError("non-finite coupling entries")
    w = sobolev_weights(n)
    b = mat[0].copy()
    lam = eigenvalues(n)
    return DipoleCoupling(
        mu_id=mu.ident, b=b, mu_mat=mat, beta=w * b, omega=lam - lam[0], weights=w
    )


def bstar_apply(coupling, v):
    """``B* v`` for an interleaved real coordinate vector ``v``.

    The boundary terms of the H^3 pairing cancel mode by mode, leaving
    ``sum_k beta_k v^2_k``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 2 * coupling.n_modes:
        raise ContractError(
            f"vector of length {v.shape[-1]} does not match {coupling.n_modes} modes"
        )
    return v[..., 1::2] @ coupling.beta


@dataclass(frozen=True)
class MuConditionReport:
    min_value: float
    argmin: int
    b1: float
    table: np.ndarray  # columns: k, b_k, k^3 |b_k|


def mu_condition_check(coupling):
    """Empirical constant of the lower bound ``|b_k| >= c / k^3``.

    The minimum runs over the non-ground modes 2..N; ``b1`` is reported on
    its own because mode 1 only enters through its imaginary direction.
    """
    ks = np.arange(1, coupling.n_modes + 1)
    scaled = ks.astype(float) ** 3 * np.abs(coupling.b)
    j = int(np.argmin(scaled[1:])) + 1
    table = np.column_stack([ks, coupling.b, scaled])
    return MuConditionReport(float(scaled[j]), int(ks[j]), float(coupling.b[0]), table)


def coupling_table(coupling):
    header = ["k", "b_k", "beta_k", "omega_k", "w_k"]
    rows = [
        [k + 1, coupling.b[k], coupling.beta[k], coupling.omega[k], coupling.weights[k]]
        for k in range(coupling.n_modes)
    ]
    return header, rows
