import numpy as np
import pytest

from manyserver.arrivals import DistributionError, InterarrivalDist as D


@pytest.mark.parametrize("spec,scv", [
    ("exponential", 1.0),
    ({"family": "erlang", "m": 3}, 1 / 3),
    ({"family": "hyperexponential", "scv": 4.0}, 4.0),
    ({"family": "lognormal", "sigma": 0.5}, np.expm1(0.25)),
    ("deterministic", 0.0),
])
def test_unit_mean_and_scv(spec, scv):
    d = D.from_spec(spec)
    assert d.mean == pytest.approx(1.0)
    assert d.scv == pytest.approx(scv, rel=1e-12)
    x = d.sample(np.random.default_rng(1), 10**6)
    assert abs(x.mean() - 1.0) < 4 * max(x.std(), 1e-12) / 1e3 + 1e-12


def test_spec_roundtrip():
    d = D.from_spec({"family": "hyperexponential", "probs": [0.5, 0.5], "rates": [1.0, 3.0]})
    assert D.from_spec(d.to_spec()) == d
    assert d.mean == pytest.approx(1.0)


@pytest.mark.parametrize("spec", [
    "gamma", {"family": "erlang", "m": 0}, {"family": "hyperexponential", "scv": 0.5},
    {"family": "lognormal", "sigma": -1.0},
])
def test_rejects(spec):
    with pytest.raises((DistributionError, KeyError, TypeError)):
        D.from_spec(spec)


def test_cdf_sf_pdf_consistent():
    d = D("lognormal", {"sigma": 1.0})
    x = np.linspace(0.01, 5, 50)
    np.testing.assert_allclose(d.cdf(x) + d.sf(x), 1.0, atol=1e-15)
    np.testing.assert_allclose(d.hazard(x), d.pdf(x) / d.sf(x), rtol=1e-10)
