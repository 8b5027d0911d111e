import numpy as np
import pytest

from manyserver import cqlf, lyapunov as ly, phasetype as pt


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def expo():
    return pt.PhaseTypeParams.exponential(1.0)


@pytest.fixture(scope="session")
def erlang2():
    # p = (1, 0), nu = (2, 2), P_12 = 1: unit mean
    return pt.PhaseTypeParams.erlang(2, 2.0)


@pytest.fixture(scope="session")
def h2():
    return pt.PhaseTypeParams.hyperexponential([0.4, 0.6], [2.0, 0.5])


def make_fn(params, beta, alpha, seed=0):
    d = pt.derive(params)
    res = cqlf.build(d.R, params.p, d.gamma, alpha, d.mu, seed=seed)
    return ly.LyapunovFn.from_service(d, params, res, beta, alpha)


@pytest.fixture(scope="session")
def fn_erlang(erlang2):
    return make_fn(erlang2, 0.5, 0.5)


@pytest.fixture(scope="session")
def fn_expo(expo):
    return make_fn(expo, 0.5, 0.5)


# one verdict line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS = {}


def record_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
