"""The quadratic Lyapunov function ``g`` on the state manifold and its drift.

For ``beta >= 0``

    g(x, z) = (x + beta)^2 + kappa (z + beta gamma)' Q (z + beta gamma)

and for ``beta < 0`` the first square is replaced by ``(alpha x + mu beta)^2``.
States live on ``S = {(x, z) : e'z + x^- = 0}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MANIFOLD_TOL = 1e-9


class DomainError(ValueError):
    """Input is off the manifold ``e'z + x^- = 0``."""


@dataclass(frozen=True)
class LyapunovFn:
    beta: float
    alpha: float
    mu: float
    gamma: np.ndarray
    Q: np.ndarray
    kappa: float
    b: float = 1.0
    # needed only for drifts along the fluid field
    R: np.ndarray | None = None
    p: np.ndarray | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        for name in ("gamma", "Q", "R", "p"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @classmethod
    def from_service(cls, derived, params, cq, beta: float, alpha: float) -> "LyapunovFn":
        """Assemble from :func:`phasetype.derive` output and a :class:`cqlf.CQLF`."""
        return cls(beta=beta, alpha=alpha, mu=derived.mu, gamma=derived.gamma, Q=cq.Q,
                   kappa=cq.kappa, b=cq.b, R=derived.R, p=params.p)

    @property
    def K(self) -> int:
        return len(self.gamma)

    def minimizer(self):
        """Minimising state and minimum value."""
        if self.beta >= 0:
            return -self.beta, -self.beta * self.gamma, 0.0
        gQg = float(self.gamma @ self.Q @ self.gamma)
        return -self.mu * self.beta / self.alpha, np.zeros(self.K), self.kappa * self.beta**2 * gQg


def manifold_defect(x, z):
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    return np.abs(z.sum(axis=-1) + np.maximum(-x, 0.0))


def _check(x, z, tol):
    d = manifold_defect(x, z)
    if np.any(d > tol):
        raise DomainError(f"state off the manifold e'z + x^- = 0 (defect {float(np.max(d)):.3g})")


def g(fn: LyapunovFn, x, z, tol: float = MANIFOLD_TOL):
    """Evaluate ``g``; vectorised over leading axes of ``x`` and ``z``."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    _check(x, z, tol)
    w = z + fn.beta * fn.gamma
    quad = np.einsum("...i,ij,...j->...", w, fn.Q, w)
    if fn.beta >= 0:
        first = (x + fn.beta) ** 2
    else:
        first = (fn.alpha * x + fn.mu * fn.beta) ** 2
    out = first + fn.kappa * quad
    return float(out) if out.ndim == 0 else out


def sqrt_g(fn: LyapunovFn, x, z, tol: float = MANIFOLD_TOL):
    return np.sqrt(g(fn, x, z, tol))


def g_rewrite_negative_beta(fn: LyapunovFn, x, z):
    """Expanded form for ``beta < 0``:
    ``(alpha x + mu beta)^2 + kappa z'Qz + kappa beta^2 gamma'Q gamma + 2 kappa b (-beta) x^-``."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    zQz = np.einsum("...i,ij,...j->...", z, fn.Q, z)
    gQg = float(fn.gamma @ fn.Q @ fn.gamma)
    return ((fn.alpha * x + fn.mu * fn.beta) ** 2 + fn.kappa * zQz + fn.kappa * fn.beta**2 * gQg
            + 2 * fn.kappa * fn.b * (-fn.beta) * np.maximum(-x, 0.0))


def fluid_field(fn: LyapunovFn, x: float, z):
    """Right-hand side of the switched linear fluid dynamics.

    ``x >= 0``: ``x' = -mu beta - alpha x - e'Rz``, ``z' = -(I - pe')Rz``.
    ``x < 0``:  ``x' = -mu beta - e'Rz``,           ``z' = -mu beta p - Rz``.
    """
    if fn.R is None or fn.p is None:
        raise ValueError("LyapunovFn needs R and p for fluid drifts")
    z = np.asarray(z, float)
    Rz = fn.R @ z
    eRz = float(Rz.sum())
    if x >= 0:
        return -fn.mu * fn.beta - fn.alpha * x - eRz, -(Rz - fn.p * eRz)
    return -fn.mu * fn.beta - eRz, -fn.mu * fn.beta * fn.p - Rz


def fluid_drift_g(fn: LyapunovFn, x: float, z, tol: float = MANIFOLD_TOL) -> float:
    """``dg/dt`` along the fluid field, from the analytic gradient.

    On ``x >= 0`` with ``beta >= 0`` this is
    ``-2(x + beta)(alpha x + mu beta + e'Rz) - kappa (z + beta gamma)'[Q W + W'Q](z + beta gamma)``
    with ``W = (I - pe')R`` (using ``W gamma = 0``); the other branches follow
    the same pattern with the branch's field.
    """
    _check(x, z, tol)
    dx, dz = fluid_field(fn, x, z)
    w = np.asarray(z, float) + fn.beta * fn.gamma
    if fn.beta >= 0:
        d_first = 2.0 * (x + fn.beta) * dx
    else:
        d_first = 2.0 * fn.alpha * (fn.alpha * x + fn.mu * fn.beta) * dx
    return float(d_first + 2.0 * fn.kappa * (w @ fn.Q @ dz))


def q_norm(fn: LyapunovFn, dx, dz):
    """``sqrt(dx^2 + kappa dz'Q dz)``."""
    dx = np.asarray(dx, float)
    dz = np.asarray(dz, float)
    return np.sqrt(dx**2 + fn.kappa * np.einsum("...i,ij,...j->...", dz, fn.Q, dz))


def project_to_manifold(x, w):
    """``z = w - (e'w + x^-)/K e``: the point of the manifold above ``x``
    closest to ``w``."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    K = w.shape[-1]
    shift = (w.sum(axis=-1) + np.maximum(-x, 0.0)) / K
    return w - shift[..., None]


def sample_on_manifold(rng: np.random.Generator, K: int, size: int, scale: float = 1.0):
    """Random states: ``(x, w)`` Gaussian, then projected."""
    x = scale * rng.standard_normal(size)
    w = scale * rng.standard_normal((size, K))
    return x, project_to_manifold(x, w)


def sample_radius(rng: np.random.Generator, K: int, size: int, r_lo: float, r_hi: float):
    """States with log-uniform Euclidean norm in ``[r_lo, r_hi]`` and a
    uniformly random direction, projected onto the manifold."""
    x, z = sample_on_manifold(rng, K, size)
    norm = np.sqrt(x**2 + (z**2).sum(axis=1))
    r = np.exp(rng.uniform(np.log(r_lo), np.log(r_hi), size))
    s = r / np.maximum(norm, 1e-300)
    # the manifold is a cone, so scaling keeps states on it
    return x * s, z * s[:, None]


def lipschitz_estimate(fn: LyapunovFn, sample_count: int, rng: np.random.Generator | None = None,
                       scale: float = 1.0) -> float:
    """Largest ``|sqrt g(a) - sqrt g(b)| / |a - b|`` over random on-manifold
    pairs (Euclidean distance in ``(x, z)``)."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    rng = np.random.default_rng() if rng is None else rng
    xa, za = sample_on_manifold(rng, fn.K, sample_count, scale)
    xb, zb = sample_on_manifold(rng, fn.K, sample_count, scale)
    num = np.abs(sqrt_g(fn, xa, za) - sqrt_g(fn, xb, zb))
    den = np.sqrt((xa - xb) ** 2 + ((za - zb) ** 2).sum(axis=1))
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


def lipschitz_bounds(fn: LyapunovFn):
    """Spectral bracket for the Euclidean Lipschitz constant of ``sqrt g``
    (``beta >= 0``): ``sqrt g`` is a norm of ``(x + beta, z + beta gamma)``
    with weight ``diag(1, kappa Q)``."""
    w = np.linalg.eigvalsh(fn.Q)
    lo = min(1.0, np.sqrt(fn.kappa * w[0]))
    hi = max(1.0, np.sqrt(fn.kappa * w[-1]))
    return float(lo), float(hi)
