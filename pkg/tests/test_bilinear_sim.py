import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gramstab import build_coupling, build_gramian
from gramstab.bilinear_sim import (
    NonlinearRunConfig,
    basin_probe,
    check_feedback_forms,
    gap_series,
    ground_state_gap,
    random_gap,
    random_perturbation,
    simulate_bilinear,
    summarize_run,
)
from gramstab.errors import ContractError, DomainError
from gramstab.feedback_loop import costate_oracle
from gramstab.spectral_core import SpectralState, ground_state, h3_norm, interleave, sobolev_weights


def run(coupling, Q, eps, seed, T=2.0, dt=None, N=8):
    cfg = NonlinearRunConfig(eps, 2.0, 1.0, T, N, dt)
    z0 = random_gap(N, eps, np.random.default_rng(seed))
    return simulate_bilinear(None, cfg, Q, coupling, gap=z0), z0


def test_config_validation():
    with pytest.raises(DomainError):
        NonlinearRunConfig(1e-3, 2.0, 2.0, 1.0, 8)
    with pytest.raises(DomainError):
        NonlinearRunConfig(0.0, 2.0, 1.0, 1.0, 8)
    with pytest.raises(DomainError):
        NonlinearRunConfig(1e-3, 2.0, 1.0, 1.0, 8, dt=1e-3)
    cfg = NonlinearRunConfig(1e-3, 2.0, 1.0, 1.0, 8)
    assert cfg.step == pytest.approx(0.1 / (63 * math.pi**2))


def test_gap_examples():
    g = ground_state_gap(ground_state(4))
    assert (g.h3_gap, g.l2_gap, g.b_component) == (0.0, 0.0, 1.0)
    delta = 1e-3
    a = np.array([1.0, 1j * delta, 0, 0])
    g = ground_state_gap(SpectralState(a))
    assert g.h3_gap == pytest.approx(delta * math.sqrt(sobolev_weights(4)[1]), rel=1e-14)
    assert g.b_component == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 1e-1))
def test_random_gap_hits_radius(seed, eps):
    z = random_gap(6, eps, np.random.default_rng(seed))
    w = sobolev_weights(6)
    assert math.sqrt(np.sum(w * np.abs(z) ** 2)) == pytest.approx(eps, rel=1e-12)
    # 1 + z lies on the unit sphere: 2 Re z_1 + |z|^2 = 0
    assert abs(2 * z[0].real + np.sum(np.abs(z) ** 2)) <= 1e-15
    state = random_perturbation(6, eps, np.random.default_rng(seed))
    assert state.l2_norm_sq() == pytest.approx(1.0, abs=1e-15)


def test_equilibrium_is_exact(coupling8, gramian8):
    cfg = NonlinearRunConfig(1e-3, 2.0, 1.0, 1.0, 8)
    traj = simulate_bilinear(ground_state(8), cfg, gramian8, coupling8)
    h3, *_ = gap_series(traj)
    assert np.max(h3) <= 1e-12
    assert np.max(np.abs(traj.controls)) <= 1e-12


def test_non_unit_state_rejected(coupling8, gramian8):
    cfg = NonlinearRunConfig(1e-3, 2.0, 1.0, 1.0, 8, normalize=False)
    with pytest.raises(ContractError):
        simulate_bilinear(SpectralState(np.full(8, 0.5 + 0j)), cfg, gramian8, coupling8)


def test_l2_conservation_dt_1e3(xsq):
    # dt = 1e-3 is admissible only while 0.1 / omega_N >= 1e-3, i.e. N <= 3
    cpl = build_coupling(xsq, 3)
    traj, _ = run(cpl, build_gramian(cpl, 2.0), 1e-2, 0, dt=1e-3, N=3)
    l2 = np.sqrt(np.sum(traj.states**2, axis=1))
    assert np.max(np.abs(l2 - 1)) <= 1e-8


def test_decay_and_conservation(coupling8, gramian8):
    traj, _ = run(coupling8, gramian8, 1e-3, 7, T=4.0)
    s = summarize_run(traj, 1.0)
    assert s.max_l2_drift <= 1e-8
    assert s.rate >= 2.0
    assert s.prefactor <= 10
    assert check_feedback_forms(gramian8, coupling8, traj) <= 1e-12


def test_b_component_second_order(coupling8, gramian8):
    traj, _ = run(coupling8, gramian8, 1e-3, 2, T=3.0)
    h3, _, bm1, yp = gap_series(traj)
    # below ||y_P||^2 ~ 1e-20 the ratio is set by the rounding of Re z_1
    sel = (h3 < 0.25) & (yp**2 >= 1e-20)
    assert np.count_nonzero(sel) > 100
    assert np.all(np.abs(bm1[sel]) <= 2 * yp[sel] ** 2)


def test_linearization_consistency(coupling8, gramian8):
    traj, z0 = run(coupling8, gramian8, 1e-5, 4, T=2.0)
    lin = costate_oracle(interleave(z0), gramian8, coupling8, None, None, times=traj.times)
    diff = h3_norm(traj.gaps - lin.states)
    assert np.max(diff) / np.max(h3_norm(lin.states)) <= 1e-3


def test_control_smallness_stable(coupling8, gramian8):
    ratios = []
    for eps in (2e-4, 1e-4):
        traj, _ = run(coupling8, gramian8, eps, 9, T=2.0)
        ratios.append(summarize_run(traj, 1.0).control_l2 / eps)
    assert ratios[1] == pytest.approx(ratios[0], rel=1e-2)


def test_basin_probe(coupling8, gramian8):
    cfg = NonlinearRunConfig(1e-4, 2.0, 1.0, 2.0, 8)
    rows = basin_probe([0.0, 1e-4], cfg, gramian8, coupling8, trials=2, seed=5)
    assert rows[0].success_rate == 1.0
    assert rows[1].success_rate == 1.0 and rows[1].trials == 2
    again = basin_probe([0.0, 1e-4], cfg, gramian8, coupling8, trials=2, seed=5)
    assert again == rows
