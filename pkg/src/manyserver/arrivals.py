"""Unit-mean interarrival laws shared by the simulator and the recurrence checks.

Families: ``exponential``, ``erlang`` (``m``), ``hyperexponential``
(``scv`` with balanced means, or explicit ``probs``/``rates``), ``lognormal``
(``sigma``) and ``deterministic``. Every law is normalised to mean 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

FAMILIES = ("exponential", "erlang", "hyperexponential", "lognormal", "deterministic")


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class InterarrivalDist:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        fam = self.family
        if fam not in FAMILIES:
            raise DistributionError(f"unknown interarrival family {fam!r}")
        prm = dict(self.params)
        if fam == "erlang":
            m = prm.get("m", 2)
            if int(m) != m or m < 1:
                raise DistributionError("erlang order m must be a positive integer")
            prm = {"m": int(m)}
        elif fam == "hyperexponential":
            if "probs" in prm:
                q = np.asarray(prm["probs"], float)
                lam = np.asarray(prm["rates"], float)
                if q.shape != lam.shape or np.any(q < 0) or abs(q.sum() - 1) > 1e-12 or np.any(lam <= 0):
                    raise DistributionError("hyperexponential needs probs summing to 1 and positive rates")
                # rescale to unit mean
                lam = lam * float(np.sum(q / lam))
            else:
                c2 = float(prm.get("scv", 4.0))
                if c2 < 1:
                    raise DistributionError("hyperexponential scv must be >= 1")
                q1 = 0.5 * (1.0 + np.sqrt((c2 - 1.0) / (c2 + 1.0)))
                q = np.array([q1, 1.0 - q1])
                lam = 2.0 * q
            prm = {"probs": q.tolist(), "rates": lam.tolist()}
        elif fam == "lognormal":
            s = float(prm.get("sigma", 1.0))
            if not s > 0:
                raise DistributionError("lognormal sigma must be positive")
            prm = {"sigma": s}
        else:
            prm = {}
        object.__setattr__(self, "params", prm)

    @classmethod
    def from_spec(cls, spec) -> "InterarrivalDist":
        if isinstance(spec, InterarrivalDist):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        spec = dict(spec)
        return cls(spec.pop("family"), spec)

    def to_spec(self) -> dict:
        return {"family": self.family, **self.params}

    # -- moments -----------------------------------------------------------
    @property
    def mean(self) -> float:
        return 1.0

    @property
    def scv(self) -> float:
        """Squared coefficient of variation ``c_u^2 = Var u`` (mean is 1)."""
        f, prm = self.family, self.params
        if f == "exponential":
            return 1.0
        if f == "erlang":
            return 1.0 / prm["m"]
        if f == "hyperexponential":
            q, lam = np.array(prm["probs"]), np.array(prm["rates"])
            return float(np.sum(2 * q / lam**2) - 1.0)
        if f == "lognormal":
            return float(np.expm1(prm["sigma"] ** 2))
        return 0.0

    @property
    def bounded(self) -> bool:
        return self.family == "deterministic"

    # -- sampling ----------------------------------------------------------
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        f, prm = self.family, self.params
        if f == "exponential":
            return rng.standard_exponential(size)
        if f == "erlang":
            m = prm["m"]
            return rng.standard_gamma(m, size) / m
        if f == "hyperexponential":
            q, lam = np.array(prm["probs"]), np.array(prm["rates"])
            idx = np.searchsorted(np.cumsum(q)[:-1], rng.random(size), side="right")
            return rng.standard_exponential(size) / lam[idx]
        if f == "lognormal":
            s = prm["sigma"]
            return rng.lognormal(-0.5 * s * s, s, size)
        return np.ones(size)

    # -- distribution functions --------------------------------------------
    def _frozen(self):
        f, prm = self.family, self.params
        if f == "exponential":
            return stats.expon()
        if f == "erlang":
            return stats.gamma(prm["m"], scale=1.0 / prm["m"])
        if f == "lognormal":
            s = prm["sigma"]
            return stats.lognorm(s, scale=np.exp(-0.5 * s * s))
        return None

    def cdf(self, x):
        x = np.asarray(x, float)
        if self.family == "hyperexponential":
            return 1.0 - self.sf(x)
        if self.family == "deterministic":
            return (x >= 1.0).astype(float)
        return self._frozen().cdf(x)

    def sf(self, x):
        x = np.asarray(x, float)
        if self.family == "hyperexponential":
            q, lam = np.array(self.params["probs"]), np.array(self.params["rates"])
            xx = np.maximum(x, 0.0)[..., None]
            return np.where(x < 0, 1.0, (q * np.exp(-lam * xx)).sum(axis=-1))
        if self.family == "deterministic":
            return (x < 1.0).astype(float)
        return self._frozen().sf(x)

    def pdf(self, x):
        """Density, with the right-derivative convention at 0."""
        x = np.asarray(x, float)
        if self.family == "hyperexponential":
            q, lam = np.array(self.params["probs"]), np.array(self.params["rates"])
            xx = np.maximum(x, 0.0)[..., None]
            return np.where(x < 0, 0.0, (q * lam * np.exp(-lam * xx)).sum(axis=-1))
        if self.family == "deterministic":
            return np.zeros_like(x)
        return self._frozen().pdf(x)

    def hazard(self, x):
        """``h = F'/(1-F)``, in log space where the survival is tiny."""
        x = np.asarray(x, float)
        f = self.family
        if f == "exponential":
            return np.ones_like(x)
        if f == "hyperexponential":
            q, lam = np.array(self.params["probs"]), np.array(self.params["rates"])
            xx = np.maximum(x, 0.0)[..., None]
            lw = np.log(q) - lam * xx
            lw = lw - lw.max(axis=-1, keepdims=True)
            w = np.exp(lw)
            return (w * lam).sum(axis=-1) / w.sum(axis=-1)
        if f == "deterministic":
            return np.where(x < 1.0, 0.0, np.inf)
        d = self._frozen()
        with np.errstate(divide="ignore"):
            return np.exp(d.logpdf(x) - d.logsf(x))

    def partial_expectation(self, x):
        """``E[(u - x)^+] = int_x^inf (1 - F(s)) ds`` in closed form."""
        x = np.asarray(x, float)
        f, prm = self.family, self.params
        xp = np.maximum(x, 0.0)
        neg = np.minimum(x, 0.0)  # for x < 0 add -x
        if f == "exponential":
            out = np.exp(-xp)
        elif f == "erlang":
            m = prm["m"]
            y = m * xp
            out = special.gammaincc(m + 1, y) - xp * special.gammaincc(m, y)
        elif f == "hyperexponential":
            q, lam = np.array(prm["probs"]), np.array(prm["rates"])
            out = (q / lam * np.exp(-lam * xp[..., None])).sum(axis=-1)
        elif f == "lognormal":
            s = prm["sigma"]
            with np.errstate(divide="ignore"):
                lx = np.log(xp)
            # mean 1: E[u; u > x] = Phi((s^2/2 - ln x)/s)
            out = special.ndtr((0.5 * s * s - lx) / s) - xp * special.ndtr((-0.5 * s * s - lx) / s)
        else:
            out = np.maximum(1.0 - xp, 0.0)
        return out - neg
