import numpy as np
import pytest

from manyserver import fluid as fl, lyapunov as ly, psi as ps

from conftest import make_fn


def test_inputs_examples(fn_expo, fn_erlang):
    g = ps.Grid(4.0, 0.01)
    inp = fl.fluid_inputs(2.0, [0.0], 0.5, 1.0, g, [1.0])
    assert inp.u[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.all(inp.v == 0.0)
    inp0 = fl.fluid_inputs(1.3, [0.2, -0.2], 0.0, 1.0, g, [1.0, 0.0])
    assert np.all(inp0.u == 1.3)
    np.testing.assert_allclose(inp0.v.sum(axis=1), 0.0, atol=1e-15)
    with pytest.raises(ly.DomainError):
        fl.fluid_inputs(-1.0, [0.0, 0.0], 0.5, 1.0, g, [1.0, 0.0])


def test_scalar_decay(expo):
    fn = make_fn(expo, 0.0, 0.7)
    tr = fl.integrate_fluid(fn, 5.0, [0.0], 3.0, 1e-3)
    exact = 5.0 * np.exp(-0.7 * tr.times)
    assert np.abs(tr.x - exact).max() <= 5e-3
    np.testing.assert_allclose(tr.g, tr.x**2, rtol=1e-12)
    assert np.all(np.diff(tr.g) < 0)


@pytest.mark.parametrize("beta", [0.5, -0.5])
def test_equilibrium_is_fixed(erlang2, beta):
    fn = make_fn(erlang2, beta, 0.5)
    x, z = fl.fixed_point(fn)
    dx, dz = ly.fluid_field(fn, x, z)
    assert abs(dx) <= 1e-10 and np.abs(dz).max() <= 1e-10
    tr = fl.integrate_fluid(fn, x, z, 2.0, 0.01)
    assert np.abs(tr.x - x).max() <= 1e-10
    if beta >= 0:
        assert np.abs(tr.g).max() <= 1e-20


def test_methods_agree(fn_erlang):
    rng = np.random.default_rng(0)
    xs, zs = ly.sample_radius(rng, 2, 5, 1.0, 10.0)
    for x0, z0 in zip(xs, zs):
        a = fl.integrate_fluid(fn_erlang, x0, z0, 3.0, 0.01)
        b = fl.integrate_fluid(fn_erlang, x0, z0, 3.0, 0.01, method="direct_ode")
        d = max(np.abs(a.x - b.x).max(), np.abs(a.z - b.z).max())
        assert d <= 20 * 0.01
        assert d <= 2e-3 * (1 + np.hypot(x0, np.linalg.norm(z0)))
    with pytest.raises(ValueError):
        fl.integrate_fluid(fn_erlang, 1.0, [0.0, 0.0], 1.0, 0.01, method="euler")


def test_monotone_erlang(fn_erlang):
    rep = fl.check_g_monotone(fn_erlang, count=30, t_end=3.0, seed=1)
    assert rep["violations"] == 0


def test_monotone_failure_detected(erlang2):
    fn = make_fn(erlang2, 0.5, 0.5)
    bad = ly.LyapunovFn(beta=fn.beta, alpha=fn.alpha, mu=fn.mu, gamma=fn.gamma, Q=np.diag([1.0, 50.0]),
                        kappa=1e4, R=fn.R, p=fn.p)
    with pytest.raises(fl.PropertyFailure):
        fl.check_g_monotone(bad, count=30, t_end=3.0, seed=1)


def test_band_scalar_rates(expo):
    fn = make_fn(expo, 0.0, 0.5)
    c_hat, C_hat, _ = fl.check_geometric_band(fn, count=20, radius=1e3, M_used=1.0, t_end=0.5, dt=1e-3,
                                              seed=0)
    # only the two scalar regimes: -2 alpha for x > 0 and -2 nu for x < 0
    assert c_hat == pytest.approx(1.0, rel=1e-3)
    assert C_hat == pytest.approx(2.0, rel=1e-3)


def test_band_erlang(fn_erlang):
    c_hat, C_hat, M = fl.check_geometric_band(fn_erlang, count=20, seed=3)
    assert 0 < c_hat <= C_hat
    assert M == fl.band_radius(fn_erlang)


def test_drift_scalar_ray(expo):
    fn = make_fn(expo, 0.0, 0.7)
    tr = fl.integrate_fluid(fn, 10.0, [0.0], 1.0, 1e-3)
    ratio = np.sqrt(tr.g[-1] / tr.g[0])
    assert ratio == pytest.approx(np.exp(-0.7), rel=1e-3)


def test_fit_constants():
    s0 = np.array([1.0, 10.0, 100.0])
    s1 = 0.5 * s0
    C, eps = fl.fit_drift_constants(s0, s1)
    # C(eps) = 100 (eps - 0.5) must stay below 0.01 * max(s0) = 1
    assert eps == 0.51 and C == pytest.approx(1.0, rel=1e-12)
    C, eps = fl.fit_drift_constants(np.array([1.0, 100.0]), np.array([6.0, 105.0]))
    assert eps == 0.0


def test_drift_inequality_stable(fn_erlang):
    a = fl.check_fluid_drift_inequality(fn_erlang, seed=1)
    b = fl.check_fluid_drift_inequality(fn_erlang, seed=2)
    assert a[1] > 0 and b[1] > 0
    assert abs(a[1] - b[1]) <= 0.2 * max(a[1], b[1])


def test_lipschitz_bound(fn_erlang):
    rng = np.random.default_rng(2)
    xs, zs = ly.sample_radius(rng, 2, 5, 1.0, 100.0)
    for x0, z0 in zip(xs, zs):
        tr = fl.integrate_fluid(fn_erlang, x0, z0, 2.0, 0.01)
        obs, bound = fl.lipschitz_increment_bound(fn_erlang, tr)
        assert np.isfinite(obs) and obs <= bound
