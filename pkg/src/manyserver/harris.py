"""Numerical side of the positive-recurrence argument for the unscaled
Markov state ``(a, q, z)`` (age of the current interarrival time, queue
length, phase counts).

With ``F`` the interarrival law, ``h = F'/(1-F)`` its hazard and
``m(x) = E[xi - x | xi > x]`` its mean residual life, the test function is

    f(a, q, z) = 2 F(a)(1 + m(a)) + q + sum_k z_k

and its extended generator is bounded by

    2 (1 + h(a)) [1 - 2F(a) + int_a^inf (1 - F)] + h(a) - (alpha q + sum_k nu_k).

The bracket decreases strictly in ``a`` (its derivative is ``-2F' - (1-F)``)
and tends to ``-1``, so the threshold ``C1`` where it reaches ``-1/2`` is a
single root.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .arrivals import InterarrivalDist

log = logging.getLogger(__name__)

SURVIVAL_FLOOR = 1e-300
RANGE_SURVIVAL = 1e-12
QUAD_TOL = 1e-12


class RangeError(ValueError):
    """Survival below the floating-point floor at the requested point."""


class AssumptionError(ValueError):
    """The interarrival law violates the unbounded-support or bounded-hazard
    assumption."""


@dataclass(frozen=True)
class RenewalLaw:
    """Interarrival law ``xi = scale * u`` with ``u`` a unit-mean law."""

    base: InterarrivalDist
    scale: float = 1.0

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "RenewalLaw":
        return cls(InterarrivalDist("exponential"), 1.0 / rate)

    @classmethod
    def of(cls, dist) -> "RenewalLaw":
        if isinstance(dist, RenewalLaw):
            return dist
        return cls(InterarrivalDist.from_spec(dist), 1.0)

    @property
    def family(self) -> str:
        return self.base.family

    def cdf(self, x):
        return self.base.cdf(np.asarray(x, float) / self.scale)

    def sf(self, x):
        return self.base.sf(np.asarray(x, float) / self.scale)

    def pdf(self, x):
        return self.base.pdf(np.asarray(x, float) / self.scale) / self.scale

    def hazard(self, x):
        return self.base.hazard(np.asarray(x, float) / self.scale) / self.scale

    def tail_integral_closed(self, x):
        """``int_x^inf (1 - F)`` from the closed-form partial expectation."""
        return self.scale * self.base.partial_expectation(np.asarray(x, float) / self.scale)

    def sample(self, rng, size):
        return self.scale * self.base.sample(rng, size)


def check_assumptions(dist) -> RenewalLaw:
    """Reject bounded support and hazards that are unbounded near 0."""
    law = RenewalLaw.of(dist)
    if law.base.bounded:
        raise AssumptionError(f"{law.family} has bounded support: F reaches 1")
    h0 = float(law.hazard(0.0))
    if not np.isfinite(h0):
        raise AssumptionError("hazard is not locally bounded at 0")
    return law


def range_end(dist, survival: float = RANGE_SURVIVAL) -> float:
    """Point where the survival function drops to ``survival``."""
    law = RenewalLaw.of(dist)
    hi = law.scale
    while float(law.sf(hi)) > survival:
        hi *= 2.0
    return float(optimize.brentq(lambda a: float(law.sf(a)) - survival, 0.0, hi, xtol=1e-12 * hi))


def tail_integral(dist, x: float, norm: float = 1.0) -> float:
    """``int_x^inf (1 - F(s)) ds / norm`` by adaptive quadrature. Dividing
    inside the integral keeps the absolute tolerance meaningful deep in the
    tail, where ``norm = 1 - F(x)`` is tiny."""
    law = RenewalLaw.of(dist)
    val, _ = integrate.quad(lambda s: float(law.sf(s)) / norm, x, np.inf, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                            limit=200)
    return float(val)


def hazard_mrl(dist, x: float):
    """``(h(x), m(x))``; ``m`` by quadrature of the survival function."""
    law = RenewalLaw.of(dist)
    if x < 0:
        raise ValueError("x must be non-negative")
    s = float(law.sf(x))
    if s < SURVIVAL_FLOOR:
        raise RangeError(f"survival {s:.3g} below {SURVIVAL_FLOOR:g} at x = {x:g}")
    return float(law.hazard(x)), tail_integral(law, x, norm=s)


def f_lyap(dist, a: float, q: int, z) -> float:
    """``2 F(a)(1 + m(a)) + q + sum(z)``."""
    law = RenewalLaw.of(dist)
    _, m = hazard_mrl(law, a)
    return 2.0 * float(law.cdf(a)) * (1.0 + m) + q + float(np.sum(z))


def bracket(dist, a, closed_form: bool = True):
    """``1 - 2F(a) + int_a^inf (1 - F)``, vectorised over ``a``; the tail
    integral is closed-form or, with ``closed_form=False``, by quadrature."""
    law = RenewalLaw.of(dist)
    a = np.asarray(a, float)
    if closed_form:
        tail = law.tail_integral_closed(a)
    else:
        tail = np.vectorize(lambda s: tail_integral(law, s))(a)
    return 1.0 - 2.0 * law.cdf(a) + tail


def a_part(dist, a, closed_form: bool = True):
    """The age-dependent part ``2(1 + h)[bracket] + h`` of the bound."""
    law = RenewalLaw.of(dist)
    h = law.hazard(a)
    return 2.0 * (1.0 + h) * bracket(law, a, closed_form) + h


def generator_upper_bound(dist, alpha: float, nu, a, q: int, z) -> float:
    """Upper bound on ``Gf(a, q, z)``. For ``q > 0`` all phase rates are
    subtracted, for ``q = 0`` only those of occupied phases."""
    nu = np.asarray(nu, float)
    z = np.asarray(z)
    rates = nu.sum() if q > 0 else nu[z > 0].sum()
    return float(a_part(dist, a)) - (alpha * q + float(rates))


@dataclass(frozen=True)
class PetiteSet:
    C1: float
    C2: float
    H: float
    n: int

    def contains(self, a, q, z) -> bool:
        return bool(a <= self.C1 and q <= self.C2 and np.sum(z) <= self.n)

    def describe(self) -> str:
        return (f"B = [0, {self.C1:.6g}] x {{0..{int(np.floor(self.C2))}}} x "
                f"{{z >= 0 : sum z <= {self.n}}}")


def petite_set_constants(dist, alpha: float, nu, n: int, grid_points: int = 2001) -> PetiteSet:
    """``C1`` (bracket root at ``-1/2``), ``H`` (sup of the age part over
    ``[0, C1]``) and ``C2 = (H + 1)/alpha``.

    ``H`` comes from a dense grid followed by bounded scalar refinement
    around the best grid point.
    """
    law = check_assumptions(dist)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    a_max = range_end(law)

    def root(a):
        return float(bracket(law, a)) + 0.5

    if root(a_max) > 0:
        raise AssumptionError("bracket never reaches -1/2: assumption (a) violated numerically")
    if root(0.0) <= 0:
        C1 = 0.0
    else:
        C1 = float(optimize.brentq(root, 0.0, a_max, xtol=1e-14, rtol=8.9e-16, maxiter=500))
    # monotonicity makes the tail check redundant in exact arithmetic; keep it as a guard
    tail = np.linspace(C1, min(10.0 * max(C1, law.scale), a_max), 200)[1:]
    if np.any(bracket(law, tail) > -0.5 + 1e-9):
        raise AssumptionError("bracket rises above -1/2 beyond C1")
    # the root must also hold with the tail integral from quadrature
    if C1 > 0 and abs(float(bracket(law, C1, closed_form=False)) + 0.5) > 1e-8:
        raise AssumptionError("closed-form and quadrature tail integrals disagree at C1")
    if C1 == 0.0:
        H = float(a_part(law, 0.0))
    else:
        ag = np.linspace(0.0, C1, grid_points)
        vals = a_part(law, ag)
        i = int(np.argmax(vals))
        lo, hi = ag[max(i - 1, 0)], ag[min(i + 1, len(ag) - 1)]
        H = float(vals[i])
        if hi > lo:
            r = optimize.minimize_scalar(lambda s: -float(a_part(law, s)), bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-10})
            H = max(H, -float(r.fun))
        H = max(H, float(a_part(law, C1)), float(a_part(law, 0.0)))
    if not np.isfinite(H):
        raise AssumptionError("age part is unbounded on [0, C1]")
    return PetiteSet(C1=C1, C2=(H + 1.0) / alpha, H=H, n=int(n))


def verify_outside(dist, alpha: float, nu, ps_: PetiteSet, n_a: int = 200, n_q: int = 200):
    """Evaluate the generator bound on an ``n_a x n_q`` grid of ages and
    queue lengths outside ``B``.

    Ages run up to ``max(10 C1, 2 scale)`` capped at the survival range; the
    phase vector is the worst case (no occupied phase when ``q = 0``, all
    phases subtracted when ``q > 0``, as every server is busy). Returns
    ``(max bound, points checked)``.
    """
    law = RenewalLaw.of(dist)
    nu = np.asarray(nu, float)
    a_hi = min(max(10.0 * ps_.C1, 2.0 * law.scale), range_end(law))
    ag = np.linspace(0.0, a_hi, n_a)
    q_hi = max(n_q - 1, int(np.ceil(3.0 * ps_.C2)) + 2)
    qg = np.unique(np.round(np.linspace(0.0, q_hi, n_q)).astype(int))
    ap = a_part(law, ag)
    worst, count = -np.inf, 0
    for q in qg:
        sub = alpha * q + (nu.sum() if q > 0 else 0.0)
        outside = (ag > ps_.C1) | (q > ps_.C2)
        if outside.any():
            worst = max(worst, float((ap[outside] - sub).max()))
            count += int(outside.sum())
    return worst, count
