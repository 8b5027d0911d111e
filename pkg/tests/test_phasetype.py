import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manyserver import phasetype as pt


def test_scalar_case():
    d = pt.derive(pt.PhaseTypeParams([1.0], [3.0], [[0.0]]))
    np.testing.assert_array_equal(d.R, [[3.0]])
    assert d.mu == pytest.approx(3.0, abs=1e-14)
    np.testing.assert_allclose(d.gamma, [1.0], atol=1e-14)


def test_erlang2_matrices(erlang2):
    d = pt.derive(erlang2)
    np.testing.assert_array_equal(d.R, [[2.0, 0.0], [-2.0, 2.0]])
    assert d.mu == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(d.gamma, [0.5, 0.5], atol=1e-14)


def test_h2_mean(h2):
    d = pt.derive(h2)
    assert d.mu == pytest.approx(1 / 1.4, rel=1e-14)
    np.testing.assert_allclose(d.gamma, d.mu * np.array([0.2, 1.2]), atol=1e-14)


def test_r_definition_random(rng):
    for K in (1, 2, 3, 5):
        prm = pt.random_params(rng, K)
        d = pt.derive(prm)
        np.testing.assert_array_equal(d.R, (np.eye(K) - prm.P.T) * prm.nu[None, :])
        assert d.gamma.sum() == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(d.gamma, d.mu * np.linalg.solve(d.R, prm.p), atol=1e-10)


@pytest.mark.parametrize("name,mean,var", [
    ("expo3", 1 / 3, 1 / 9),
    ("erlang2", 1.0, 0.5),
    ("h2", 1.4, None),
])
def test_sampling_moments(name, mean, var):
    prm = {"expo3": pt.PhaseTypeParams.exponential(3.0),
           "erlang2": pt.PhaseTypeParams.erlang(2, 2.0),
           "h2": pt.PhaseTypeParams.hyperexponential([0.4, 0.6], [2.0, 0.5])}[name]
    n = 10**6
    x = pt.sample_service_times(prm, np.random.default_rng(11), n)
    se = x.std(ddof=1) / np.sqrt(n)
    assert abs(x.mean() - mean) < 3 * se
    if var is not None:
        # SE of the sample variance from the fourth central moment
        c = x - x.mean()
        se_v = np.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / n)
        assert abs(x.var(ddof=1) - var) < 3 * se_v


def test_sample_service_path_consistent(erlang2):
    rng = np.random.default_rng(3)
    for _ in range(200):
        total, phases = pt.sample_service(erlang2, rng)
        assert [k for k, _ in phases] == [0, 1]
        assert total == pytest.approx(sum(s for _, s in phases), rel=1e-15)
        assert all(s > 0 for _, s in phases)


def test_sample_service_scalar_mean(h2):
    rng = np.random.default_rng(5)
    x = np.array([pt.sample_service(h2, rng)[0] for _ in range(20000)])
    assert abs(x.mean() - 1.4) < 4 * x.std() / np.sqrt(len(x))


def test_random_params_mean_within_4se():
    rng = np.random.default_rng(8)
    for K in (2, 4):
        prm = pt.random_params(rng, K)
        x = pt.sample_service_times(prm, rng, 10**6)
        assert abs(x.mean() - pt.mean_service_time(prm)) < 4 * x.std() / 1e3


def test_validate_ok(erlang2):
    cert = pt.validate(erlang2)
    assert cert.ok and cert.K == 2 and cert.spectral_radius == 0.0


def test_substochastic_error():
    prm = pt.PhaseTypeParams([0.5, 0.5], [1.0, 1.0], [[0.0, 1.2], [0.3, 0.0]])
    with pytest.raises(pt.SubStochasticError, match="sub-stochasticity violated"):
        pt.validate(prm)


def test_singular_error():
    # periodic routing never absorbs
    prm = pt.PhaseTypeParams([1.0, 0.0], [1.0, 1.0], [[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(pt.SingularError, match="I-P singular"):
        pt.validate(prm)
    with pytest.raises(pt.ParameterError):
        pt.derive(prm)


@pytest.mark.parametrize("p,nu,P,err", [
    ([0.5, 0.6], [1, 1], np.zeros((2, 2)), pt.InitialLawError),
    ([1.5, -0.5], [1, 1], np.zeros((2, 2)), pt.InitialLawError),
    ([1.0, 0.0], [1, 0], np.zeros((2, 2)), pt.RateError),
    ([1.0, 0.0], [1, 1], [[0.5, 0.0], [0.0, 0.0]], pt.RoutingError),
    ([1.0, 0.0], [1, 1], [[0.0, -0.1], [0.0, 0.0]], pt.RoutingError),
    ([1.0, 0.0], [1, 1, 1], np.zeros((2, 2)), pt.ShapeError),
    ([1.0, 0.0], [1, 1], np.zeros((3, 3)), pt.ShapeError),
])
def test_validate_errors(p, nu, P, err):
    with pytest.raises(err):
        pt.validate(pt.PhaseTypeParams(p, nu, P))


def test_dict_roundtrip(h2):
    again = pt.PhaseTypeParams.from_dict(h2.to_dict())
    for a in ("p", "nu", "P"):
        np.testing.assert_array_equal(getattr(again, a), getattr(h2, a))


def test_params_read_only(erlang2):
    with pytest.raises(ValueError):
        erlang2.nu[0] = 5.0


@settings(max_examples=40, deadline=None)
@given(K=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_gamma_sums_to_one(K, seed):
    prm = pt.random_params(np.random.default_rng(seed), K)
    d = pt.derive(prm)
    assert abs(d.gamma.sum() - 1.0) <= 1e-10
    assert np.all(d.gamma > 0)
