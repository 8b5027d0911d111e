"""Phase-type service distributions.

A phase-type law is the absorption time of a continuous-time Markov chain
with transient phases ``1..K``: the chain starts in phase ``k`` with
probability ``p[k]``, stays an ``Exp(nu[k])`` time, then moves to phase ``j``
with probability ``P[k, j]`` or is absorbed with probability
``1 - P[k].sum()``.

From ``(p, nu, P)`` we derive

* ``R = (I - P') diag(nu)``,
* the service rate ``mu`` with ``1/mu = e' R^{-1} p``,
* ``gamma = mu R^{-1} p``, the long-run fraction of busy servers per phase.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

SUM_TOL = 1e-12
SPECTRAL_TOL = 1e-10
COND_WARN = 1e12


class ParameterError(ValueError):
    """Raised when phase-type parameters violate an invariant."""


class ShapeError(ParameterError):
    pass


class InitialLawError(ParameterError):
    pass


class RateError(ParameterError):
    pass


class RoutingError(ParameterError):
    pass


class SubStochasticError(RoutingError):
    pass


class SingularError(RoutingError):
    pass


@dataclass(frozen=True)
class PhaseTypeParams:
    """Parameters ``(p, nu, P)`` of a phase-type distribution.

    Arrays are copied and made read-only on construction. Construction does
    not validate; call :func:`validate` (or :func:`derive`, which validates).
    """

    p: np.ndarray
    nu: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("p", "nu", "P"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return int(self.p.shape[0])

    @classmethod
    def exponential(cls, rate: float) -> "PhaseTypeParams":
        return cls([1.0], [rate], [[0.0]])

    @classmethod
    def erlang(cls, m: int, rate: float) -> "PhaseTypeParams":
        """Erlang-``m`` with per-phase rate ``rate`` (mean ``m / rate``)."""
        p = np.zeros(m)
        p[0] = 1.0
        P = np.diag(np.ones(m - 1), 1) if m > 1 else np.zeros((1, 1))
        return cls(p, np.full(m, float(rate)), P)

    @classmethod
    def hyperexponential(cls, probs, rates) -> "PhaseTypeParams":
        k = len(probs)
        return cls(probs, rates, np.zeros((k, k)))

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseTypeParams":
        return cls(d["p"], d["nu"], d["P"])

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "nu": self.nu.tolist(), "P": self.P.tolist()}


@dataclass(frozen=True)
class DerivedServiceData:
    R: np.ndarray
    mu: float
    gamma: np.ndarray
    # rows: cumulative routing probabilities, last column = 1 (absorption)
    routing_cdf: np.ndarray = field(repr=False)
    initial_cdf: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Certificate:
    K: int
    spectral_radius: float
    ok: bool = True


def validate(params: PhaseTypeParams) -> Certificate:
    """Check every invariant of ``params``; raise on the first violation."""
    p, nu, P = params.p, params.nu, params.P
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("p must be a non-empty vector")
    K = p.size
    if nu.shape != (K,):
        raise ShapeError(f"nu must have length {K}")
    if P.shape != (K, K):
        raise ShapeError(f"P must be {K}x{K}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(nu)) and np.all(np.isfinite(P))):
        raise ShapeError("parameters must be finite")
    if np.any(p < 0):
        raise InitialLawError("initial law has negative entries")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise InitialLawError(f"initial law sums to {p.sum()!r}, not 1")
    if np.any(nu <= 0):
        raise RateError("rates nu must be positive")
    if np.any(P < 0):
        raise RoutingError("routing matrix has negative entries")
    if np.any(np.diag(P) != 0):
        raise RoutingError("routing matrix must have zero diagonal")
    if np.any(P.sum(axis=1) > 1.0 + SUM_TOL):
        raise SubStochasticError("sub-stochasticity violated: a row of P sums above 1")
    rho = float(np.max(np.abs(np.linalg.eigvals(P)))) if K > 0 else 0.0
    if rho >= 1.0 - SPECTRAL_TOL:
        raise SingularError(f"I-P singular: spectral radius of P is {rho:.6g}")
    return Certificate(K=K, spectral_radius=rho)


def derive(params: PhaseTypeParams) -> DerivedServiceData:
    """Compute ``R``, ``mu`` and ``gamma`` for validated parameters."""
    validate(params)
    K = params.K
    R = (np.eye(K) - params.P.T) * params.nu[np.newaxis, :]
    lu = scipy.linalg.lu_factor(R)
    cond = np.linalg.cond(R)
    if cond > COND_WARN:
        log.warning("R is ill-conditioned (cond=%.3g)", cond)
    w = scipy.linalg.lu_solve(lu, params.p)
    mu = 1.0 / w.sum()
    gamma = mu * w
    routing = np.empty((K, K + 1))
    routing[:, :K] = np.cumsum(params.P, axis=1)
    routing[:, K] = 1.0
    initial = np.cumsum(params.p)
    initial[-1] = 1.0
    for arr in (R, gamma, routing, initial):
        arr.setflags(write=False)
    return DerivedServiceData(R=R, mu=float(mu), gamma=gamma, routing_cdf=routing, initial_cdf=initial)


def sample_service(params: PhaseTypeParams, rng: np.random.Generator, derived: DerivedServiceData | None = None):
    """Draw one service time; return ``(total, [(phase, sojourn), ...])``."""
    d = derived if derived is not None else derive(params)
    K = params.K
    k = int(np.searchsorted(d.initial_cdf, rng.random(), side="right"))
    phases = []
    total = 0.0
    while k < K:
        sojourn = -np.log1p(-rng.random()) / params.nu[k]
        phases.append((k, sojourn))
        total += sojourn
        k = int(np.searchsorted(d.routing_cdf[k], rng.random(), side="right"))
    return total, phases


def sample_service_times(params: PhaseTypeParams, rng: np.random.Generator, size: int,
                         derived: DerivedServiceData | None = None) -> np.ndarray:
    """Vectorised version of :func:`sample_service` returning totals only."""
    d = derived if derived is not None else derive(params)
    K = params.K
    phase = np.searchsorted(d.initial_cdf, rng.random(size), side="right")
    total = np.zeros(size)
    alive = np.flatnonzero(phase < K)
    while alive.size:
        k = phase[alive]
        total[alive] += -np.log1p(-rng.random(alive.size)) / params.nu[k]
        u = rng.random(alive.size)
        # per-row inverse CDF: count of cumulative entries <= u
        nxt = (d.routing_cdf[k] <= u[:, None]).sum(axis=1)
        phase[alive] = nxt
        alive = alive[nxt < K]
    return total


def mean_service_time(params: PhaseTypeParams) -> float:
    return 1.0 / derive(params).mu


def random_params(rng: np.random.Generator, K: int, nu_range=(0.5, 5.0), max_row_sum: float = 0.9) -> PhaseTypeParams:
    """Random valid parameters: Dirichlet initial law, log-uniform rates,
    zero-diagonal routing with row sums uniform on ``[0, max_row_sum]``."""
    p = rng.dirichlet(np.ones(K))
    nu = np.exp(rng.uniform(np.log(nu_range[0]), np.log(nu_range[1]), K))
    P = np.zeros((K, K))
    if K > 1:
        for k in range(K):
            w = rng.dirichlet(np.ones(K - 1)) * rng.uniform(0.0, max_row_sum)
            P[k, [j for j in range(K) if j != k]] = w
    return PhaseTypeParams(p, nu, P)
