import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, quad_vec

from gramstab import build_coupling, build_gramian, parse_dipole
from gramstab.errors import ContractError, DomainError, PositivityError
from gramstab.gramian import (
    gramian_entry,
    gramian_matrix,
    gramian_sidecar,
    gramian_solve,
    lambda_scaling_scan,
    lyapunov_residual,
    mode_trajectory_bstar,
    reduced_labels,
)
from gramstab.spectral_core import basis_vector, h3_norm, project_h1sharp


def entry_matrix(cpl, lam):
    labels = reduced_labels(cpl.n_modes)
    return np.array([[gramian_entry(cpl, lam, i, j, k, l) for j, l in labels] for i, k in labels])


def test_mode_trajectory_examples(coupling8):
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 10, 100)
    assert not np.any(mode_trajectory_bstar(coupling8, 1, 1, s))
    np.testing.assert_array_equal(mode_trajectory_bstar(coupling8, 2, 1, s), coupling8.beta[0])
    quarter = math.pi / (2 * coupling8.omega[1])
    assert mode_trajectory_bstar(coupling8, 1, 2, quarter) == pytest.approx(-coupling8.beta[1], rel=1e-14)


def test_entry_examples(coupling8):
    b = coupling8.beta
    assert gramian_entry(coupling8, 2.0, 1, 2, 1, 3) == 0.0
    assert gramian_entry(coupling8, 2.0, 2, 2, 1, 1) == pytest.approx(b[0] ** 2 / 4.0, rel=1e-14)
    om = coupling8.omega[1]
    expected = b[1] ** 2 * 0.5 * (0.5 - 2.0 / (4.0 + 4.0 * om * om))
    assert gramian_entry(coupling8, 1.0, 1, 1, 2, 2) == pytest.approx(expected, rel=1e-12)
    ref, _ = quad(
        lambda s: math.exp(-2 * s) * math.sin(om * s) ** 2, 0, 40, limit=5000, epsabs=0, epsrel=1e-12
    )
    assert expected == pytest.approx(b[1] ** 2 * ref, rel=1e-10)
    with pytest.raises(DomainError):
        gramian_entry(coupling8, 0.0, 2, 2, 1, 1)


@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
def test_entries_match_quadrature(xsq, lam):
    cpl = build_coupling(xsq, 6)
    labels = reduced_labels(6)

    def integrand(s):
        v = np.array([mode_trajectory_bstar(cpl, i, k, s) for i, k in labels])
        return math.exp(-2 * lam * s) * np.outer(v, v)

    ref, _ = quad_vec(integrand, 0.0, 40.0 / lam, epsabs=0, epsrel=1e-13, limit=100000, norm="max")
    E = entry_matrix(cpl, lam)
    assert np.max(np.abs(ref - E) / np.abs(E)) <= 1e-8


def test_matrix_is_scaled_entries(coupling8):
    labels = reduced_labels(8)
    sw = np.array([math.sqrt(coupling8.weights[k - 1]) for _, k in labels])
    E = entry_matrix(coupling8, 2.0)
    np.testing.assert_allclose(gramian_matrix(coupling8, 2.0), E / np.outer(sw, sw), rtol=1e-13, atol=0)


def test_build_properties(gramian8):
    assert gramian8.mat.shape == (15, 15)
    assert np.max(np.abs(gramian8.mat - gramian8.mat.T)) <= 1e-12
    assert gramian8.sigma_min > 0 and not gramian8.extended
    side = gramian_sidecar(gramian8)
    assert set(side) >= {"lambda", "N", "sigma_min", "sigma_max", "mu_id"}


def test_uncontrollable_dipole_raises():
    cpl = build_coupling(parse_dipole("poly:[1]"), 4)
    with pytest.raises(PositivityError) as info:
        build_gramian(cpl, 1.0)
    assert info.value.smallest_eigenvalue is not None


def test_zero_dipole_degenerate():
    cpl = build_coupling(parse_dipole("poly:[0]"), 3)
    Q = build_gramian(cpl, 1.0, require_positive=False)
    assert not np.any(Q.mat)
    assert lyapunov_residual(Q, cpl) == 0.0


def test_solve_examples(gramian8):
    assert not np.any(gramian_solve(gramian8, np.zeros(16)))
    e = basis_vector(8, 2, 1)
    np.testing.assert_allclose(gramian_solve(gramian8, gramian8.apply(e)), e, atol=1e-12)
    with pytest.raises(ContractError):
        gramian_solve(gramian8, basis_vector(8, 1, 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_then_apply_round_trip(gramian8, seed):
    y = project_h1sharp(np.random.default_rng(seed).standard_normal(16))
    x = gramian_solve(gramian8, y)
    assert h3_norm(gramian8.apply(x) - y) <= 1e-10 * h3_norm(y)


@pytest.mark.parametrize("N", [2, 4, 8])
@pytest.mark.parametrize("lam", [1.0, 5.0])
def test_lyapunov_identity(xsq, N, lam):
    cpl = build_coupling(xsq, N)
    assert lyapunov_residual(build_gramian(cpl, lam), cpl, relative=True) <= 1e-9


def test_extended_precision_gramian(coupling8):
    Q = build_gramian(coupling8, 256.0)
    assert Q.extended and Q.cond > 1e11
    assert lyapunov_residual(Q, coupling8, relative=True) <= 1e-9
    # the round trip has to stay in extended precision: Q^{-1} y is ~1e15 times larger than y
    ctx = Q.ctx
    z = Q._np_to_mp(np.random.default_rng(1).standard_normal(15))
    back = Q.apply_orthonormal_mp(Q.solve_orthonormal_mp(z))
    assert ctx.norm(back - z) <= ctx.mpf("1e-25") * ctx.norm(z)


def test_diagonal_ratio(coupling8):
    # d^{ii}_{kk} ~ beta_k^2 / (4 lam) while 2 lam << omega_k (sin^2 and cos^2 average to 1/2)
    lam = 0.05
    for i, k in reduced_labels(8)[1:]:
        ratio = gramian_entry(coupling8, lam, i, i, k, k) * 4 * lam / coupling8.beta[k - 1] ** 2
        assert abs(ratio - 1) < 1e-3
    # mode 1 never oscillates: exactly beta_1^2 / (2 lam)
    assert gramian_entry(coupling8, lam, 2, 2, 1, 1) == pytest.approx(coupling8.beta[0] ** 2 / (2 * lam))


def test_lambda_scan(coupling8):
    scan = lambda_scaling_scan(coupling8, [1, 2, 4, 8, 16, 32, 64])
    assert np.all(scan.sigma_min > 0)
    assert np.all(np.diff(scan.sigma_min) < 0)
    assert scan.c_bound >= 0 and math.isfinite(scan.slope_sqrt)
    one = lambda_scaling_scan(coupling8, [3.0])
    assert len(one.rows()) == 1
    with pytest.raises(DomainError):
        lambda_scaling_scan(coupling8, [1.0, -1.0])


def test_lambda_doubling_drops_ln2(coupling8):
    # Q ~ diag / lam in the regime where the diagonal asymptotics hold
    scan = lambda_scaling_scan(coupling8, [0.0125, 0.025, 0.05, 0.1, 0.2])
    drops = -np.diff(np.log(scan.sigma_min))
    np.testing.assert_allclose(drops, math.log(2), atol=1e-3)
    # once lam passes the frequencies sigma_min falls much faster
    late = lambda_scaling_scan(coupling8, [16.0, 32.0])
    assert -np.diff(np.log(late.sigma_min))[0] > 1.0
