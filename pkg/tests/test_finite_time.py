import math
from fractions import Fraction

import numpy as np
import pytest

from gramstab.errors import ContractError, DomainError, ScheduleError
from gramstab.finite_time import (
    build_schedule,
    finite_time_trajectory_table,
    simulate_finite_time,
    stage_bound_audit,
)
from gramstab.spectral_core import basis_vector


@pytest.fixture(scope="module")
def y0():
    return basis_vector(8, 2, 1) + 0.3 * basis_vector(8, 1, 2)


@pytest.fixture(scope="module")
def schedule():
    return build_schedule(1.0, 5, lambda_cap=1e4)


@pytest.fixture(scope="module")
def oracle_run(y0, schedule, coupling8):
    return simulate_finite_time(y0, schedule, coupling8)


def test_default_schedule(schedule):
    expected = [Fraction(0), Fraction(3, 4), Fraction(8, 9), Fraction(15, 16), Fraction(24, 25)]
    np.testing.assert_allclose(schedule.t, [float(f) for f in expected], rtol=0, atol=1e-16)
    np.testing.assert_array_equal(schedule.lam, [1, 256, 6561, 1e4, 1e4])
    assert schedule.capped.tolist() == [False, False, False, True, True]
    assert np.all(np.diff(schedule.s) > 0)
    assert schedule.symbolic_ok


def test_uncapped_gains():
    sched = build_schedule(1.0, 5, lambda_cap=1e12)
    np.testing.assert_array_equal(sched.lam, [1, 256, 6561, 65536, 390625])


def test_symbolic_gamma_rule():
    # T (2n+3) / ((n+1)^2 (n+2)^2) (n+1)^8 >= (n+1)^4 for the configured T
    for n in range(1, 8):
        lhs = Fraction(2 * n + 3, (n + 1) ** 2 * (n + 2) ** 2) * (n + 1) ** 8
        assert lhs >= (n + 1) ** 4
    assert build_schedule(1.0, 6, lambda_cap=1e30).symbolic_ok
    tiny = build_schedule(1e-6, 4, lambda_cap=1e30)
    assert tiny.symbolic_ok is False


def test_explicit_schedule_passes_through():
    sched = build_schedule(2.0, 3, times=[0, 1, 1.5], lambdas=[1, 4, 9])
    np.testing.assert_array_equal(sched.t, [0, 1, 1.5])
    np.testing.assert_array_equal(sched.lam, [1, 4, 9])
    np.testing.assert_allclose(sched.s, [0, 1, 3, 7.5])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_stages=9),
        dict(n_stages=1),
        dict(n_stages=3, times=[0, 0.5, 0.4], lambdas=[1, 2, 3]),
        dict(n_stages=3, times=[0.1, 0.5, 0.6], lambdas=[1, 2, 3]),
        dict(n_stages=3, times=[0, 0.5, 0.6], lambdas=[3, 2, 1]),
        dict(n_stages=3, times=[0, 0.5, 0.6]),
    ],
)
def test_schedule_errors(kwargs):
    with pytest.raises(ScheduleError):
        build_schedule(1.0, **kwargs)


def test_schedule_domain():
    with pytest.raises(DomainError):
        build_schedule(0.0, 3)


def test_zero_run(schedule, coupling8):
    run = simulate_finite_time(np.zeros(16), schedule, coupling8)
    assert not np.any(run.trajectory.states)
    assert stage_bound_audit(run).C == 0.0


def test_ground_component_rejected(schedule, coupling8):
    with pytest.raises(ContractError):
        simulate_finite_time(basis_vector(8, 1, 1), schedule, coupling8)


def test_stagewise_identity(oracle_run):
    assert max(st.identity_violation for st in oracle_run.stages) <= 1e-10
    assert max(st.knot_jump for st in oracle_run.stages) <= 1e-12


def test_knot_norms_decrease(oracle_run):
    knots = oracle_run.knot_log_norms
    assert np.all(np.diff(knots) < 0)
    assert knots[-1] - knots[0] <= math.log(1e-6)


def test_control_vanishes_at_the_end(oracle_run):
    usup = [st.log_usup for st in oracle_run.stages]
    assert usup[-1] < usup[-2] < usup[-3]


def test_ground_coordinate_stays_zero(oracle_run):
    assert np.max(np.abs(oracle_run.trajectory.states[:, 0])) <= 1e-12


def test_audit_stable_under_refinement(y0, schedule, coupling8, oracle_run):
    fine = simulate_finite_time(y0, schedule, coupling8, dt0=5e-3)
    c0, c1 = stage_bound_audit(oracle_run).C, stage_bound_audit(fine).C
    assert math.isfinite(c0) and c1 == pytest.approx(c0, rel=1e-2)


def test_rk4_mode_agrees(y0, schedule, coupling8, oracle_run):
    run = simulate_finite_time(y0, schedule, coupling8, mode="rk4")
    assert max(st.identity_violation_abs for st in run.stages) <= 1e-5
    np.testing.assert_allclose(run.knot_log_norms, oracle_run.knot_log_norms, rtol=1e-2)


def test_tables(oracle_run):
    header, rows = stage_bound_audit(oracle_run).table()
    assert header == ["n", "t_n", "lambda_n", "s_n", "ynorm", "unorm_sup", "bound_state", "bound_control", "slack"]
    assert len(rows) == 5
    header, rows = finite_time_trajectory_table(oracle_run)
    assert header[-1] == "stage" and header[-3:-1] == ["h3_norm", "qinv_norm"]
    assert {r[-1] for r in rows} == {0, 1, 2, 3, 4}
