import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from manyserver import diffusion as df, lyapunov as ly, stats


def dist_from(x, K=1, weights=None):
    x = np.asarray(x, float)
    z = ly.project_to_manifold(x, np.zeros((len(x), K)))
    return stats.EmpiricalDist(x, z, weights)


def test_ks_identity_and_point_masses():
    d = dist_from(np.random.default_rng(0).standard_normal(100))
    assert stats.ks_1d(d, d) == 0.0
    assert stats.ks_1d([0.0], [1.0]) == 1.0
    assert stats.wasserstein1_1d(d, d) == 0.0


def test_empty_inputs():
    with pytest.raises(stats.EmptyInputError):
        stats.ks_1d([], [1.0])
    with pytest.raises(stats.EmptyInputError):
        stats.wasserstein1_1d([1.0], [])
    with pytest.raises(stats.EmptyInputError):
        dist_from([])


def test_ks_matches_scipy(rng):
    a, b = rng.standard_normal(500), rng.standard_normal(700) + 0.2
    assert stats.ks_1d(a, b) == pytest.approx(sst.ks_2samp(a, b).statistic, abs=1e-12)


def test_ks_density_matches_scipy(rng):
    x = rng.standard_normal(2000)
    xs = np.linspace(-9, 9, 200001)
    table = ("density", xs, sst.norm.pdf(xs))
    assert stats.ks_1d(x, table) == pytest.approx(sst.kstest(x, "norm").statistic, abs=1e-6)


def test_w1_translation_and_scipy(rng):
    a = rng.standard_normal(1000)
    assert stats.wasserstein1_1d(a, a + 0.37) == pytest.approx(0.37, abs=1e-12)
    b = rng.exponential(size=800)
    assert stats.wasserstein1_1d(a, b) == pytest.approx(sst.wasserstein_distance(a, b), rel=1e-12)


def test_w1_gaussians():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(10**5), rng.standard_normal(10**5) + 1.0
    assert stats.wasserstein1_1d(a, b) == pytest.approx(1.0, abs=0.02)


def test_ks_same_ou_law_dkw():
    # the DKW inequality puts the two-sample 99% quantile near 0.0073 at 1e5 each
    table = df.pou_1d_density_oracle(0.5, 0.5, 1.0, 2.0)
    rng = np.random.default_rng(2)
    hits = sum(stats.ks_1d(df.density_sample(table, rng, 10**5), df.density_sample(table, rng, 10**5)) < 0.01
               for _ in range(20))
    assert hits >= 19


def test_weighted_ecdf():
    d = dist_from([0.0, 1.0], weights=[3.0, 1.0])
    assert stats.ks_1d(d, [0.0]) == pytest.approx(0.25)
    assert d.mean() == pytest.approx(0.25)


def test_weights_validated():
    with pytest.raises(ValueError):
        dist_from([0.0, 1.0], weights=[1.0, 0.0])
    with pytest.raises(ly.DomainError):
        stats.EmpiricalDist([-1.0], [[0.0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pseudometric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal(int(rng.integers(5, 60))) * rng.uniform(0.5, 2) for _ in range(3))
    for f in (stats.ks_1d, stats.wasserstein1_1d):
        assert f(a, b) == pytest.approx(f(b, a), abs=1e-12)
        assert f(a, c) <= f(a, b) + f(b, c) + 1e-12


def _fn_scalar():
    return ly.LyapunovFn(beta=0.5, alpha=0.5, mu=1.0, gamma=[1.0], Q=[[1.0]], kappa=2.0)


def test_tail_mass_properties(rng):
    fn = _fn_scalar()
    d = dist_from(rng.standard_normal(5000) * 2)
    assert stats.tail_mass(d, fn, 0.0) == 1.0
    assert stats.tail_mass(d, fn, 1e9) == 0.0
    s_grid = np.linspace(0, 10, 41)
    tails = [stats.tail_mass(d, fn, s) for s in s_grid]
    assert np.all(np.diff(tails) <= 0)
    mean_sg = float(np.mean(d.sqrt_g(fn)))
    for s, t in zip(s_grid[1:], tails[1:]):
        assert t <= mean_sg / s + 1e-15


def test_tail_level(rng):
    fn = _fn_scalar()
    d = dist_from(rng.standard_normal(10000))
    s = stats.tail_level(d, fn, 0.01)
    assert stats.tail_mass(d, fn, s) <= 0.01
    assert stats.tail_mass(d, fn, s * (1 - 1e-9)) > 0.0


def test_batch_means_scaling():
    # one SE estimate from 30 batches scatters by about 13%, so the ratio is
    # taken between SEs averaged over independent replications
    rng = np.random.default_rng(3)
    se1, se4 = [], []
    for _ in range(20):
        x = rng.standard_normal(4 * 30000)
        se1.append(stats.batch_means(x[:30000])[1])
        se4.append(stats.batch_means(x)[1])
    assert 0.4 <= np.mean(se4) / np.mean(se1) <= 0.6
    with pytest.raises(ValueError):
        stats.batch_means(np.ones(5))


def test_batch_means_correlation():
    x = np.repeat(np.random.default_rng(4).standard_normal(60), 1000)
    assert stats.batch_means(x)[2] < 0.5
    y = np.cumsum(np.random.default_rng(5).standard_normal(30000))
    assert stats.batch_means(y)[2] > 0.5


def test_interchange_identical():
    fn = _fn_scalar()
    d = dist_from(np.random.default_rng(0).standard_normal(3000))
    rep = stats.interchange_report({10: d, 50: d, 200: d}, d, fn)
    for r in rep["rows"]:
        assert r["ks_x"] == 0.0 and r["w1_x"] == 0.0 and r["ks_g"] == 0.0 and r["w1_g"] == 0.0
    assert rep["ks_monotone"] and rep["tails_bounded"]


def test_interchange_errors():
    fn = _fn_scalar()
    d = dist_from([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        stats.interchange_report({1: d, 2: d}, d, fn)
    d2 = dist_from([0.0, 1.0, 2.0], K=2)
    with pytest.raises(ValueError):
        stats.interchange_report({1: d, 2: d, 3: d2}, d, fn)


def test_report_writers(tmp_path):
    fn = _fn_scalar()
    rng = np.random.default_rng(1)
    ds = {n: dist_from(rng.standard_normal(600)) for n in (10, 50, 200)}
    rep = stats.interchange_report(ds, dist_from(rng.standard_normal(600)), fn)
    stats.write_report_csv(tmp_path / "r.csv", rep)
    stats.write_report_json(tmp_path / "r.json", rep, {"reference": "samples"})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("n,ks_x,ks_x_se,w1_x,ks_g,w1_g,tail@") and len(lines) == 4
    assert '"reference": "samples"' in (tmp_path / "r.json").read_text()


def test_summary_keys(rng):
    s = stats.stationary_summary(dist_from(rng.standard_normal(3000)))
    assert {"mean_x", "se_x", "mean_x_plus", "se_x_plus", "mean_x_minus", "se_x_minus", "lag1"} <= set(s)
