import numpy as np
import pytest

from manyserver import cqlf, linalg, phasetype as pt


def test_scalar_case():
    R, p, g = np.array([[3.0]]), np.array([1.0]), np.array([1.0])
    res = cqlf.solve_q(R, p, g)
    np.testing.assert_array_equal(res.Q, [[1.0]])
    assert res.b == 1.0
    assert res.cert["lambda_min_QR"] == pytest.approx(6.0)
    # I - pe' vanishes for one phase, so the band matrix is zero
    assert res.cert["lambda_min_band"] == 0.0


def test_erlang2_certificate(erlang2):
    d = pt.derive(erlang2)
    res = cqlf.solve_q(d.R, erlang2.p, d.gamma)
    c = res.cert
    assert c["lambda_min_Q"] > 0 and c["lambda_min_QR"] > 0
    assert c["lambda_min_band"] >= -cqlf.PSD_TOL
    assert c["gamma_residual"] <= cqlf.GAMMA_TOL
    np.testing.assert_allclose(res.Q @ d.gamma, res.b * np.ones(2), atol=1e-8)
    np.testing.assert_allclose(res.Q, res.Q.T, atol=1e-12)


def test_certificate_rayleigh_cross_check(erlang2):
    d = pt.derive(erlang2)
    res = cqlf.solve_q(d.R, erlang2.p, d.gamma)
    Q, R = res.Q, d.R
    rng = np.random.default_rng(50)
    h = rng.standard_normal((50, 2))
    for M, key in ((Q, "lambda_min_Q"), (Q @ R + R.T @ Q, "lambda_min_QR"),
                   (cqlf.band_matrix(Q, R, erlang2.p), "lambda_min_band")):
        S = linalg.sym(M)
        rq = np.einsum("ij,jk,ik->i", h, S, h) / (h**2).sum(axis=1)
        # the certified minimum eigenvalue bounds every Rayleigh quotient
        assert rq.min() >= res.cert[key] - 1e-12
        assert res.cert[key] == pytest.approx(np.linalg.eigvalsh(S)[0], abs=1e-12)


def test_certificate_recomputed_matches(rng):
    prm = pt.random_params(rng, 4)
    d = pt.derive(prm)
    res = cqlf.solve_q(d.R, prm.p, d.gamma)
    again = cqlf.certificate(res.Q, d.R, prm.p, d.gamma)
    for k, v in again.items():
        assert res.cert[k] == pytest.approx(v, abs=1e-14)
    assert cqlf.is_certified(again)
    assert res.b == pytest.approx(1.0, abs=1e-10)


def test_random_k4_rate():
    rng = np.random.default_rng(4)
    ok = 0
    for _ in range(20):
        prm = pt.random_params(rng, 4)
        d = pt.derive(prm)
        try:
            res = cqlf.solve_q(d.R, prm.p, d.gamma)
        except cqlf.InfeasibleError:
            continue
        ok += cqlf.is_certified(res.cert)
    assert ok >= 19


def test_kappa_scalar_example():
    Q = np.array([[1.0]])
    R = np.array([[1.0]])
    p = np.array([1.0])
    # -2 alpha (alpha v mu) |e'R| + 2 kappa > 0 first holds at kappa = 2
    assert cqlf.select_kappa(Q, R, p, alpha=1.0, mu=1.0) == 2.0
    c1 = cqlf.kappa_conditions(1.0, Q, R, p, 1.0, 1.0)
    assert c1["lambda_min_kappa_ii"] == pytest.approx(0.0, abs=1e-15)


def test_kappa_conditions_hold(fn_erlang, erlang2):
    d = pt.derive(erlang2)
    res = cqlf.build(d.R, erlang2.p, d.gamma, 0.5, d.mu)
    assert res.kappa == fn_erlang.kappa
    c = res.cert
    assert c["lambda_min_kappa_i"] > 0 and c["lambda_min_kappa_ii"] > 0 and c["cross_term_slack"] >= 0
    # kappa is the smallest power of two that works
    if res.kappa > 1:
        half = cqlf.kappa_conditions(res.kappa / 2, res.Q, d.R, erlang2.p, 0.5, d.mu)
        assert not (half["lambda_min_kappa_i"] > 0 and half["lambda_min_kappa_ii"] > 0
                    and half["cross_term_slack"] >= 0)


def test_z_band(erlang2):
    d = pt.derive(erlang2)
    res = cqlf.solve_q(d.R, erlang2.p, d.gamma)
    c_B, C_B = cqlf.check_z_band(res.Q, d.R, erlang2.p)
    assert 0 < c_B <= C_B
    assert cqlf.check_z_band([[1.0]], [[1.0]], [1.0]) == (np.inf, np.inf)


def test_z_band_failure():
    # for K = 2 the hyperplane direction is an eigenvector of (I - pe')R, so a
    # negative definite Q flips the sign of the band
    R = np.array([[2.0, 0.0], [-2.0, 2.0]])
    with pytest.raises(cqlf.ZBandError):
        cqlf.check_z_band(-np.eye(2), R, np.array([1.0, 0.0]))


def test_is_certified_rejects():
    good = {"lambda_min_Q": 1.0, "lambda_min_QR": 1.0, "lambda_min_band": 0.0, "gamma_residual": 0.0, "b": 1.0}
    assert cqlf.is_certified(good)
    for key, bad in (("lambda_min_Q", 0.0), ("lambda_min_QR", -1e-3), ("lambda_min_band", -1e-6),
                     ("gamma_residual", 1e-6), ("b", 0.0)):
        assert not cqlf.is_certified({**good, key: bad})


def test_to_dict_plain(erlang2):
    d = pt.derive(erlang2)
    doc = cqlf.build(d.R, erlang2.p, d.gamma, 0.5, d.mu).to_dict()
    assert isinstance(doc["Q"], list) and doc["kappa"] > 0
    assert all(isinstance(v, float) for v in doc["certificates"].values())
