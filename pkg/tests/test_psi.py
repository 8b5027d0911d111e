import numpy as np
import pytest

from manyserver import _backend, phasetype as pt, psi as ps

R1 = np.array([[2.0]])
P1 = np.array([1.0])


def const_input(grid, x0, K=1):
    n = grid.n_steps + 1
    return ps.InputPath(np.full(n, x0), np.zeros((n, K)))


def test_grid_validation():
    with pytest.raises(ps.GridError):
        ps.Grid(1.0, 0.0)
    with pytest.raises(ps.GridError):
        ps.Grid(1.0, 0.3)
    g = ps.Grid(1.0, 0.25)
    assert g.n_steps == 4
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.refine().n_steps == 8


def test_input_constraint():
    with pytest.raises(ps.PathError):
        ps.InputPath(np.zeros(3), np.ones((3, 2)))


def test_scalar_positive_branch():
    g = ps.Grid(5.0, 1e-3)
    out = ps.psi(const_input(g, 1.5), 1.0, R1, P1, g)
    assert np.abs(out.x - 1.5 * np.exp(-g.times)).max() <= 5 * g.dt
    assert np.all(out.z == 0.0)


def test_scalar_negative_branch():
    g = ps.Grid(5.0, 1e-3)
    out = ps.psi(const_input(g, -1.5), 1.0, R1, P1, g)
    exact = -1.5 * np.exp(-2.0 * g.times)
    assert np.abs(out.x - exact).max() <= 5 * g.dt
    np.testing.assert_allclose(out.z[:, 0], out.x, atol=1e-15)


def test_residual_of_exact_solution_and_perturbation():
    g = ps.Grid(3.0, 1e-3)
    inp = const_input(g, 1.5)
    exact = ps.StatePath(1.5 * np.exp(-g.times), np.zeros((g.n_steps + 1, 1)))
    assert ps.residual(exact, inp, 1.0, R1, P1, g) <= 5 * g.dt
    bumped = exact.x.copy()
    bumped[1000] += 1.0
    res = ps.residual(ps.StatePath(bumped, exact.z), inp, 1.0, R1, P1, g)
    assert res >= 1.0 - 10 * g.dt


def test_residual_grid_mismatch():
    g = ps.Grid(1.0, 0.1)
    out = ps.psi(const_input(g, 1.0), 1.0, R1, P1, g)
    with pytest.raises(ps.PathError):
        ps.residual(out, const_input(ps.Grid(1.0, 0.05), 1.0), 1.0, R1, P1, g)


def _random_setup(seed, K=2):
    rng = np.random.default_rng(seed)
    prm = pt.random_params(rng, K)
    return rng, prm, pt.derive(prm)


def test_residual_self_convergence_piecewise_constant():
    _, prm, d = _random_setup(0)
    res = []
    for dt in (0.01, 0.005, 0.0025):
        g = ps.Grid(4.0, dt)
        inp = ps.piecewise_constant_input(np.random.default_rng(5), 2, g, base_dt=0.01)
        out = ps.psi(inp, 0.7, d.R, prm.p, g)
        res.append(ps.residual(out, inp, 0.7, d.R, prm.p, g))
    for a, b in zip(res, res[1:]):
        assert 1.8 <= a / b <= 2.2


def test_residual_smooth_inputs_converge():
    _, prm, d = _random_setup(0)
    res = []
    for dt in (0.01, 0.005, 0.0025):
        g = ps.Grid(4.0, dt)
        inp = ps.smooth_input(np.random.default_rng(5), 2, g)
        out = ps.psi(inp, 0.7, d.R, prm.p, g)
        res.append(ps.residual(out, inp, 0.7, d.R, prm.p, g))
    # trapezoid defects make this second order on smooth inputs
    for a, b in zip(res, res[1:]):
        assert a / b >= 1.8


def test_manifold_preserved():
    rng, prm, d = _random_setup(2, K=3)
    g = ps.Grid(4.0, 1e-3)
    inp = ps.piecewise_constant_input(rng, 3, g, scale=3.0)
    out = ps.psi(inp, 0.5, d.R, prm.p, g)
    Rn = np.abs(d.R).sum(axis=1).max()
    assert out.manifold_defect() <= 10 * g.dt * Rn * (1 + out.magnitude())


def test_fixed_point_agrees():
    rng, prm, d = _random_setup(3)
    g = ps.Grid(4.0, 1e-3)
    inp = ps.piecewise_constant_input(rng, 2, g, base_dt=0.01)
    a = ps.psi(inp, 0.7, d.R, prm.p, g)
    b = ps.psi_fixed_point(inp, 0.7, d.R, prm.p, g)
    assert ps.sup_distance(a, b) <= 10 * g.dt


def test_homogeneity():
    g = ps.Grid(4.0, 1e-3)
    inp = const_input(g, 1.5)
    assert ps.check_homogeneity(inp, 1.0, 1.0, R1, P1, g) == 0.0
    assert ps.check_homogeneity(inp, 2.0, 1.0, R1, P1, g) <= 10 * g.dt
    rng, prm, d = _random_setup(4, K=3)
    devs = []
    for dt in (0.01, 0.005):
        gg = ps.Grid(2.0, dt)
        inp = ps.piecewise_constant_input(np.random.default_rng(1), 3, gg, base_dt=0.01)
        devs.append(ps.check_homogeneity(inp, 0.5, 0.5, d.R, prm.p, gg))
    assert devs[1] <= devs[0] * 0.6 + 1e-15
    with pytest.raises(ValueError):
        ps.check_homogeneity(inp, 0.0, 0.5, d.R, prm.p, gg)


def test_lipschitz_ratios():
    g = ps.Grid(2.0, 1e-3)
    a = const_input(g, 1.0)
    assert ps.check_lipschitz(a, a, 1.0, R1, P1, g) == 0.0
    eps = 1e-3
    r = ps.check_lipschitz(a, const_input(g, 1.0 + eps), 1.0, R1, P1, g)
    assert r <= np.exp(2.0 * 2.0) + 10 * g.dt
    rng, prm, d = _random_setup(6)
    ratios = {1.0: [], 4.0: []}
    for _ in range(10):
        seed = int(rng.integers(2**31))
        for T in ratios:
            gg = ps.Grid(T, 0.01)
            i1 = ps.piecewise_constant_input(np.random.default_rng(seed), 2, gg, base_dt=0.01 if T == 1 else 0.04)
            i2 = ps.piecewise_constant_input(np.random.default_rng(seed + 1), 2, gg, base_dt=0.01 if T == 1 else 0.04)
            ratios[T].append(ps.check_lipschitz(i1, i2, 0.7, d.R, prm.p, gg))
    assert np.all(np.isfinite(ratios[4.0]))
    assert max(ratios[1.0]) <= max(ratios[4.0]) * 1.5


def test_backends_bitwise_equal():
    if "cython" not in _backend.available():
        pytest.skip("compiled kernels not built")
    rng, prm, d = _random_setup(7, K=3)
    g = ps.Grid(3.0, 1e-3)
    inp = ps.piecewise_constant_input(rng, 3, g)
    a = ps.psi(inp, 0.6, d.R, prm.p, g, backend="cython")
    b = ps.psi(inp, 0.6, d.R, prm.p, g, backend="python")
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)


def test_march_resume_matches_single_pass():
    rng, prm, d = _random_setup(8)
    g = ps.Grid(2.0, 1e-2)
    inp = ps.piecewise_constant_input(rng, 2, g)
    full = ps.psi(inp, 0.6, d.R, prm.p, g, check=False)
    x1, z1, st = ps.march(inp.u[:101], inp.v[:101], 0.6, d.R, prm.p, g.dt)
    x2, z2, _ = ps.march(inp.u[101:], inp.v[101:], 0.6, d.R, prm.p, g.dt, state=st)
    np.testing.assert_array_equal(np.concatenate([x1, x2]), full.x)


def test_csv_roundtrip(tmp_path):
    g = ps.Grid(1.0, 0.1)
    inp = ps.piecewise_constant_input(np.random.default_rng(0), 2, g)
    out = ps.psi(inp, 0.5, [[1.0, 0.0], [-1.0, 1.0]], [1.0, 0.0], g)
    ps.write_input_csv(tmp_path / "in.csv", inp, g)
    ps.write_state_csv(tmp_path / "out.csv", out, g)
    inp2, t = ps.read_input_csv(tmp_path / "in.csv")
    out2, _ = ps.read_state_csv(tmp_path / "out.csv")
    np.testing.assert_array_equal(t, g.times)
    np.testing.assert_array_equal(inp2.v, inp.v)
    np.testing.assert_array_equal(out2.x, out.x)
    with pytest.raises(ps.PathError):
        ps.read_input_csv(tmp_path / "out.csv")
