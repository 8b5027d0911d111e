import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manyserver import fluid as fl, lyapunov as ly, phasetype as pt

from conftest import make_fn


def scalar_fn(beta, kappa=1.0, alpha=1.0, mu=1.0, nu=1.0):
    return ly.LyapunovFn(beta=beta, alpha=alpha, mu=mu, gamma=[1.0], Q=[[1.0]], kappa=kappa, b=1.0,
                         R=[[nu]], p=[1.0])


def test_scalar_value():
    fn = scalar_fn(1.0, kappa=2.0)
    assert ly.g(fn, 0.0, [0.0]) == 3.0


@pytest.mark.parametrize("beta", [0.0, 0.5, 2.0])
def test_minimum_nonnegative_beta(beta):
    fn = make_fn(pt.PhaseTypeParams.erlang(2, 2.0), beta, 0.5)
    x, z, gmin = fn.minimizer()
    assert gmin == 0.0
    assert ly.g(fn, x, z) == pytest.approx(0.0, abs=1e-28)
    assert ly.fluid_drift_g(fn, x, z) == pytest.approx(0.0, abs=1e-12)


def test_minimum_negative_beta(erlang2):
    fn = make_fn(erlang2, -0.7, 0.5)
    x, z, gmin = fn.minimizer()
    assert x == pytest.approx(-fn.mu * -0.7 / 0.5)
    gQg = fn.gamma @ fn.Q @ fn.gamma
    assert ly.g(fn, x, z) == pytest.approx(fn.kappa * 0.49 * gQg, rel=1e-12)
    rng = np.random.default_rng(2)
    xs, zs = ly.sample_on_manifold(rng, 2, 2000, 3.0)
    assert np.all(ly.g(fn, xs, zs) >= gmin - 1e-12)


def test_off_manifold_rejected(fn_erlang):
    with pytest.raises(ly.DomainError):
        ly.g(fn_erlang, -1.0, [0.0, 0.0])
    with pytest.raises(ly.DomainError):
        ly.fluid_drift_g(fn_erlang, 1.0, [0.3, 0.0])


def test_scalar_drift_positive_x():
    fn = scalar_fn(0.0, alpha=0.7)
    for x in (0.1, 1.0, 30.0):
        assert ly.fluid_drift_g(fn, x, [0.0]) == pytest.approx(-2 * 0.7 * x * x, rel=1e-14)


@pytest.mark.parametrize("beta", [0.5, -0.5])
def test_drift_matches_finite_difference(beta, erlang2):
    fn = make_fn(erlang2, beta, 0.5)
    rng = np.random.default_rng(1)
    xs, zs = ly.sample_on_manifold(rng, 2, 20, 3.0)
    h = 1e-4
    checked = 0
    for x, z in zip(xs, zs):
        tr = fl.integrate_fluid(fn, x, z, 200 * h, h, method="direct_ode")
        i = 100
        if np.sign(tr.x[i - 1]) != np.sign(tr.x[i + 1]):
            continue
        fd = (tr.g[i + 1] - tr.g[i - 1]) / (2 * h)
        an = ly.fluid_drift_g(fn, tr.x[i], tr.z[i])
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))
        checked += 1
    assert checked >= 15


def test_negative_beta_rewrite(erlang2, h2):
    for prm in (erlang2, h2):
        fn = make_fn(prm, -0.8, 0.6)
        rng = np.random.default_rng(7)
        xs, zs = ly.sample_on_manifold(rng, prm.K, 500, 5.0)
        np.testing.assert_allclose(ly.g(fn, xs, zs), ly.g_rewrite_negative_beta(fn, xs, zs),
                                   rtol=1e-9, atol=1e-9)


def test_scalar_lipschitz_one():
    fn = scalar_fn(0.5)
    est = ly.lipschitz_estimate(fn, 10**4, np.random.default_rng(0))
    assert est <= 1 + 1e-6


def test_lipschitz_monotone_and_stable(fn_erlang):
    rng = np.random.default_rng(9)
    big = ly.lipschitz_estimate(fn_erlang, 10**4, np.random.default_rng(1))
    small = ly.lipschitz_estimate(fn_erlang, 10**2, np.random.default_rng(1))
    other = ly.lipschitz_estimate(fn_erlang, 10**4, rng)
    assert np.isfinite(big)
    assert big >= small
    assert abs(big - other) <= 0.2 * big
    lo, hi = ly.lipschitz_bounds(fn_erlang)
    assert lo <= big * (1 + 1e-9) and big <= hi * (1 + 1e-9)


def test_q_norm_lipschitz(fn_erlang):
    rng = np.random.default_rng(4)
    xa, za = ly.sample_on_manifold(rng, 2, 5000, 10.0)
    xb, zb = ly.sample_on_manifold(rng, 2, 5000, 10.0)
    lhs = np.abs(ly.sqrt_g(fn_erlang, xa, za) - ly.sqrt_g(fn_erlang, xb, zb))
    rhs = ly.q_norm(fn_erlang, xa - xb, za - zb)
    assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-12)


def test_compact_level_sets(fn_erlang):
    rng = np.random.default_rng(5)
    x, w = rng.standard_normal(50), rng.standard_normal((50, 2))
    n = np.sqrt(x**2 + (w**2).sum(axis=1))
    x, w = x / n, w / n[:, None]
    g3 = ly.g(fn_erlang, *_proj(1e3 * x, 1e3 * w))
    g6 = ly.g(fn_erlang, *_proj(1e6 * x, 1e6 * w), tol=1e-3)
    assert np.all(g6 > g3)


def _proj(x, w):
    return x, ly.project_to_manifold(x, w)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(-2, 2))
def test_g_nonnegative(seed, beta, erlang2):
    fn = make_fn(erlang2, beta, 0.5)
    rng = np.random.default_rng(seed)
    xs, zs = ly.sample_on_manifold(rng, 2, 200, 10.0)
    assert np.all(ly.g(fn, xs, zs) >= 0.0)


def test_projection_on_manifold(rng):
    x = rng.standard_normal(100) * 4
    z = ly.project_to_manifold(x, rng.standard_normal((100, 3)))
    assert ly.manifold_defect(x, z).max() <= 1e-12
