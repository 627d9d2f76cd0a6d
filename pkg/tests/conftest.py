import numpy as np
import pytest
from scipy.integrate import quad

from gramstab import build_coupling, build_gramian, parse_dipole


@pytest.fixture(scope="session")
def xsq():
    return parse_dipole("builtin:xsq")


@pytest.fixture(scope="session")
def coupling8(xsq):
    return build_coupling(xsq, 8)


@pytest.fixture(scope="session")
def coupling4(xsq):
    return build_coupling(xsq, 4)


@pytest.fixture(scope="session")
def gramian8(coupling8):
    return build_gramian(coupling8, 2.0)


def sine_inner(f, k, l):
    """Reference ``int_0^1 f(x) phi_k(x) phi_l(x) dx`` by adaptive quadrature."""
    val, _ = quad(
        lambda x: 2.0 * f(x) * np.sin(k * np.pi * x) * np.sin(l * np.pi * x),
        0.0,
        1.0,
        epsabs=1e-14,
        epsrel=1e-13,
        limit=200,
    )
    return val


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
