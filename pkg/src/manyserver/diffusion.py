"""The limiting piecewise OU process: Brownian inputs pushed through the map
of :mod:`psi`.

The input noise is assembled from the functional CLTs of the primitive
components of the scaled input decomposition (see
:func:`des.extract_components`), each run at its fluid time change:

* arrivals: ``c_u^2 mu`` on ``U``;
* phase completions ``S~_k`` at ``nu_k gamma_k t`` and routings ``Phi~^k``
  with multinomial covariance ``diag(P_k) - P_k P_k'`` at the same rate,
  giving ``Sigma_M`` for ``M~ = sum_k Phi~^k - (I - P')S~``;
* initial-phase draws ``Phi~0`` at ``mu t`` with ``diag(p) - pp'`` on ``V``;
* the abandonment martingale vanishes in the limit.

``U`` sees ``e'M~`` and ``V`` sees ``(I - pe')M~``, which gives the
cross-covariance between the two blocks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from . import lyapunov as ly
from . import phasetype as pt
from . import psi as ps
from .stats import EmpiricalDist, batch_means

log = logging.getLogger(__name__)

PSD_TOL = 1e-10
CHOL_JITTER = 1e-12
STATIONARY_DT = 0.01
CROSS_TOL = 0.15


class CovarianceError(RuntimeError):
    """The assembled covariance is not positive semidefinite."""


@dataclass(frozen=True)
class DiffusionCoeffs:
    var_u: float
    cov_v: np.ndarray
    cross: np.ndarray

    def __post_init__(self):
        cv = np.array(self.cov_v, dtype=float, ndmin=2)
        cr = np.array(self.cross, dtype=float).ravel()
        for a in (cv, cr):
            a.setflags(write=False)
        object.__setattr__(self, "cov_v", cv)
        object.__setattr__(self, "cross", cr)
        object.__setattr__(self, "var_u", float(self.var_u))

    @property
    def K(self) -> int:
        return self.cov_v.shape[0]

    def assembled(self) -> np.ndarray:
        """The ``(K+1) x (K+1)`` covariance rate of ``(U, V)``."""
        K = self.K
        S = np.empty((K + 1, K + 1))
        S[0, 0] = self.var_u
        S[0, 1:] = self.cross
        S[1:, 0] = self.cross
        S[1:, 1:] = self.cov_v
        return S

    def check(self, tol: float = PSD_TOL) -> None:
        S = self.assembled()
        if np.abs(S - S.T).max() > tol:
            raise CovarianceError("covariance is not symmetric")
        w = np.linalg.eigvalsh(S)
        if w[0] < -tol * max(1.0, abs(w[-1])):
            raise CovarianceError(f"covariance not PSD (lambda_min = {w[0]:.3g})")
        e = np.ones(self.K)
        if abs(e @ self.cov_v @ e) > tol * max(1.0, abs(w[-1])) or np.abs(self.cov_v @ e).max() > 1e-8:
            raise CovarianceError("V block is not null along e")

    def to_dict(self) -> dict:
        return {"var_u": self.var_u, "cov_v": self.cov_v.tolist(), "cross": self.cross.tolist()}

    @classmethod
    def from_matrix(cls, S) -> "DiffusionCoeffs":
        S = np.asarray(S, float)
        return cls(S[0, 0], S[1:, 1:], S[0, 1:])

    @classmethod
    def zero(cls, K: int) -> "DiffusionCoeffs":
        return cls(0.0, np.zeros((K, K)), np.zeros(K))


def service_noise(params: pt.PhaseTypeParams, derived: pt.DerivedServiceData | None = None) -> np.ndarray:
    """``Sigma_M``: covariance rate of ``M~ = sum_k Phi~^k - (I - P')S~``."""
    d = pt.derive(params) if derived is None else derived
    P, nu = params.P, params.nu
    K = params.K
    rate = nu * d.gamma  # phase-k completion rate per server at criticality
    S = np.zeros((K, K))
    for k in range(K):
        Pk = P[k]
        S += rate[k] * (np.diag(Pk) - np.outer(Pk, Pk))
    ImPt = np.eye(K) - P.T
    S += ImPt @ np.diag(rate) @ ImPt.T
    return 0.5 * (S + S.T)


def derive_covariance(params: pt.PhaseTypeParams, c_u2: float, alpha: float | None = None) -> DiffusionCoeffs:
    """Limit covariance of the scaled inputs ``(U~, V~)``.

    ``alpha`` is accepted for symmetry with the other constructors; the
    abandonment term does not contribute in the limit.
    """
    if not c_u2 >= 0:
        raise ValueError("c_u2 must be non-negative")
    d = pt.derive(params)
    p, K, mu = params.p, params.K, d.mu
    e = np.ones(K)
    SM = service_noise(params, d)
    Ipe = np.eye(K) - np.outer(p, e)
    var_u = c_u2 * mu + float(e @ SM @ e)
    cov_v = mu * (np.diag(p) - np.outer(p, p)) + Ipe @ SM @ Ipe.T
    cross = Ipe @ SM @ e
    out = DiffusionCoeffs(var_u, 0.5 * (cov_v + cov_v.T), cross)
    out.check()
    return out


def compare_covariance(coeffs: DiffusionCoeffs, empirical, cross_tol: float = CROSS_TOL):
    """Compare derived and empirical covariance rates.

    Returns ``(coeffs_used, report)``. The Frobenius error is relative to the
    derived matrix. The cross term is judged against the Cauchy-Schwarz scale
    ``sqrt(var_u tr cov_v)``; beyond ``cross_tol`` the empirical cross term
    replaces the derived one and a warning is logged.
    """
    S = coeffs.assembled()
    E = np.asarray(empirical, float)
    rel = float(np.linalg.norm(E - S) / max(np.linalg.norm(S), 1e-300))
    scale = np.sqrt(max(coeffs.var_u * float(np.trace(coeffs.cov_v)), 0.0))
    ref = max(float(np.linalg.norm(coeffs.cross)), scale, 1e-300)
    cross_rel = float(np.linalg.norm(E[0, 1:] - coeffs.cross) / ref)
    used = coeffs
    if cross_rel > cross_tol:
        log.warning("derived cross-covariance off by %.1f%%; using the empirical estimate", 100 * cross_rel)
        used = DiffusionCoeffs(coeffs.var_u, coeffs.cov_v, E[0, 1:])
    return used, {"frobenius_rel": rel, "cross_rel": cross_rel, "cross_replaced": used is not coeffs}


# ----------------------------------------------------------------------------
# sample paths


def _factor(coeffs: DiffusionCoeffs) -> np.ndarray:
    S = coeffs.assembled()
    if not np.any(S):
        return np.zeros_like(S)
    return np.linalg.cholesky(S + CHOL_JITTER * np.eye(len(S)))


def _increments(rng, L, p, m, dt):
    """``m`` Brownian increments of ``(U, V)`` over steps of ``dt``; the
    ``V`` part is projected back onto ``e'v = 0`` to remove jitter leakage."""
    inc = rng.standard_normal((m, L.shape[0])) @ (np.sqrt(dt) * L.T)
    inc[:, 1:] -= np.outer(inc[:, 1:].sum(axis=1), p)
    return inc


def simulate_pou(x0, z0, coeffs: DiffusionCoeffs, beta, mu, alpha, R, p, t_end, dt, seed=0,
                 backend=None) -> ps.StatePath:
    """One path of the limit process on ``Grid(t_end, dt)`` from ``(x0, z0)``.

    With zero coefficients no random numbers are drawn and the result is the
    fluid path on the same grid.
    """
    z0 = np.asarray(z0, float)
    p = np.asarray(p, float)
    if float(ly.manifold_defect(x0, z0)) > ly.MANIFOLD_TOL * (1.0 + abs(x0)):
        raise ly.DomainError("start is off the manifold")
    grid = ps.Grid(t_end, dt)
    t = grid.times
    u = x0 - mu * beta * t
    v0 = z0 - p * z0.sum()
    v = np.broadcast_to(v0, (len(t), len(p))).copy()
    L = _factor(coeffs)
    if np.any(L):
        rng = np.random.default_rng(seed)
        inc = _increments(rng, L, p, grid.n_steps, dt)
        W = np.vstack([np.zeros(len(p) + 1), np.cumsum(inc, axis=0)])
        u = u + W[:, 0]
        v = v + W[:, 1:]
    return ps.psi(ps.InputPath(u, v), alpha, R, p, grid, check=False, backend=backend)


class PouStream:
    """Resumable path of the limit process, advanced chunk by chunk with the
    marching state carried across chunks."""

    def __init__(self, x0, z0, coeffs: DiffusionCoeffs, beta, mu, alpha, R, p, dt=STATIONARY_DT,
                 seed=0, backend=None):
        self.p = np.asarray(p, float)
        z0 = np.asarray(z0, float)
        if float(ly.manifold_defect(x0, z0)) > ly.MANIFOLD_TOL * (1.0 + abs(x0)):
            raise ly.DomainError("start is off the manifold")
        self.R = np.asarray(R, float)
        self.alpha, self.dt, self.backend = alpha, dt, backend
        self.drift = -mu * beta
        self.rng = np.random.default_rng(seed)
        self.L = _factor(coeffs)
        self.i = 0  # index of the next grid point
        self.u_base = float(x0)
        self.v_base = z0 - self.p * z0.sum()
        self.W = np.zeros(len(self.p) + 1)
        self.state = ps.new_state(len(self.p))

    def advance(self, m: int):
        """The next ``m`` grid points ``(x, z)``."""
        K = len(self.p)
        idx = np.arange(self.i, self.i + m)
        inc = _increments(self.rng, self.L, self.p, m, self.dt)
        if self.i == 0:
            inc[0] = 0.0  # the path starts at the initial state
        W = self.W + np.cumsum(inc, axis=0)
        self.W = W[-1].copy()
        u = self.u_base + self.drift * (idx * self.dt) + W[:, 0]
        v = self.v_base[None, :] + W[:, 1:]
        x, z, self.state = ps.march(u, v.reshape(m, K), self.alpha, self.R, self.p, self.dt, self.state,
                                    self.backend)
        self.i += m
        return x, z


def relaxation_time(alpha, mu, R) -> float:
    return 1.0 / min(alpha, mu, float(np.diag(np.asarray(R)).min()))


def estimate_stationary_pou(coeffs: DiffusionCoeffs, beta, mu, alpha, R, p, burn_in=None,
                            n_samples: int = 10**5, spacing=None, dt: float = STATIONARY_DT, seed: int = 0,
                            x0: float | None = None, z0=None, chunk: int = 10**6, max_extensions: int = 2,
                            backend=None) -> EmpiricalDist:
    """Stationary samples of the limit process at ``burn_in + i * spacing``.

    Defaults and diagnostics follow :func:`des.estimate_stationary`: burn-in
    100 and spacing 10 relaxation times, doubling the run while the lag-1
    correlation of batch means exceeds 0.5. The default start is the
    minimiser of the fluid dynamics, ``(-beta, -beta gamma)`` for the
    ``K = 1`` or ``beta >= 0`` cases, else ``(0, 0)`` shifted onto the manifold.
    """
    p = np.asarray(p, float)
    K = len(p)
    tau = relaxation_time(alpha, mu, R)
    spacing = 10.0 * tau if spacing is None else spacing
    burn_in = 100.0 * tau if burn_in is None else burn_in
    if x0 is None:
        x0, z0 = 0.0, np.zeros(K)
    s = int(round(spacing / dt))
    b = int(round(burn_in / dt))
    if s < 1 or b < 0 or abs(s * dt - spacing) > 1e-9 * spacing or abs(b * dt - burn_in) > 1e-9 * max(1.0, burn_in):
        raise ps.GridError("burn_in and spacing must be whole multiples of dt")
    stream = PouStream(x0, z0, coeffs, beta, mu, alpha, R, p, dt, seed, backend)
    while stream.i < b:
        stream.advance(min(chunk, b - stream.i))
    xs, zs = [], []
    total, target, extensions = 0, n_samples, 0
    # the first sample sits at the end of the burn-in
    next_pick = b
    while True:
        while total < target:
            m = min(chunk, (target - total) * s)
            x, z = stream.advance(m)
            start = stream.i - m
            pick = np.arange(next_pick, stream.i, s)
            pick = pick[: target - total]
            xs.append(x[pick - start])
            zs.append(z[pick - start])
            total += len(pick)
            if len(pick):
                next_pick = pick[-1] + s
        X = np.concatenate(xs)
        _, _, r1 = batch_means(np.maximum(X, 0.0))
        _, _, r2 = batch_means(np.maximum(-X, 0.0))
        if max(r1, r2) <= 0.5 or extensions >= max_extensions:
            if max(r1, r2) > 0.5:
                log.warning("batch means still correlated (lag-1 %.2f) after %d extensions",
                            max(r1, r2), extensions)
            break
        log.warning("batch means correlated (lag-1 %.2f); extending run", max(r1, r2))
        target *= 2
        extensions += 1
    Z = np.concatenate(zs)
    mp, sp, _ = batch_means(np.maximum(X, 0.0))
    mm, sm, _ = batch_means(np.maximum(-X, 0.0))
    meta = {"seed": seed, "burn_in": burn_in, "spacing": spacing, "dt": dt, "samples": int(len(X)),
            "mean_x_plus": mp, "se_x_plus": sp, "mean_x_minus": mm, "se_x_minus": sm,
            "extensions": extensions}
    return EmpiricalDist(X, Z, meta=meta)


# ----------------------------------------------------------------------------
# one-dimensional stationary density


def pou_1d_density_oracle(beta, alpha, mu, var_u, grid=None, n_points: int = 20001):
    """Stationary density of ``dX = drift(X) dt + sqrt(var_u) dB`` with
    ``drift(s) = -mu beta - alpha s^+ + mu s^-``.

    The exponent ``2/var_u int_0^x drift`` is
    ``-(2/var_u)(mu beta x + c x^2/2)`` with ``c = alpha`` for ``x > 0`` and
    ``c = mu`` for ``x < 0``. The default grid spans seven standard
    deviations beyond each half-Gaussian centre, which leaves less than
    ``1e-10`` of the mass outside. Returns ``(xs, density)``.
    """
    if not var_u > 0:
        raise ValueError("var_u must be positive")
    if grid is None:
        hi = max(0.0, -mu * beta / alpha) + 7.0 * np.sqrt(var_u / (2.0 * alpha))
        lo = min(0.0, -beta) - 7.0 * np.sqrt(var_u / (2.0 * mu))
        xs = np.linspace(lo, hi, n_points)
    else:
        xs = np.asarray(grid, float)
    c = np.where(xs > 0, alpha, mu)
    expo = -(2.0 / var_u) * (mu * beta * xs + 0.5 * c * xs * xs)
    dens = np.exp(expo - expo.max())
    dens /= trapezoid(dens, xs)
    return xs, dens


def oracle_moments(table):
    """Mean and variance of a density table by the trapezoid rule."""
    xs, dens = table
    m = float(trapezoid(xs * dens, xs))
    return m, float(trapezoid((xs - m) ** 2 * dens, xs))


def density_sample(table, rng: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF draws from a density table (linear interpolation)."""
    from .stats import density_cdf

    xs, cdf = density_cdf(table)
    return np.interp(rng.random(size), cdf, xs)


# ----------------------------------------------------------------------------
# drift of sqrt g at diffusion scale


def start_at_radius(fn: ly.LyapunovFn, r: float, direction, feasible=None):
    """Scale the on-manifold direction ``(dx, dz)`` by ``c > 0`` so that
    ``sqrt g(c dx, c dz) = r`` (the manifold is a cone). Returns ``None`` if
    ``r`` is below ``sqrt g(0, 0)`` or ``feasible(x, z)`` rejects the point."""
    from scipy import optimize

    dx, dz = float(direction[0]), np.asarray(direction[1], float)

    def f(c):
        return float(np.sqrt(ly.g(fn, c * dx, c * dz, tol=np.inf))) - r

    if f(0.0) >= 0:
        return None
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    c = optimize.brentq(f, 0.0, hi, xtol=1e-12 * hi)
    x, z = c * dx, c * dz
    if feasible is not None and not feasible(x, z):
        return None
    return x, z


def drift_starts(fn: ly.LyapunovFn, radii, per_radius: int = 4, seed: int = 0, feasible=None):
    """Start states with ``sqrt g`` equal to each radius: the positive
    ``x`` axis plus random on-manifold directions that pass ``feasible``."""
    rng = np.random.default_rng(seed)
    K = fn.K
    out = []
    for r in radii:
        found = []
        axis = start_at_radius(fn, r, (1.0, np.zeros(K)), feasible)
        if axis is not None:
            found.append(axis)
        tries = 0
        while len(found) < per_radius and tries < 1000:
            tries += 1
            x, z = ly.sample_on_manifold(rng, K, 1)
            st = start_at_radius(fn, r, (x[0], z[0]), feasible)
            if st is not None:
                found.append(st)
        if not found:
            raise ValueError(f"no feasible start at radius {r:g}")
        out.extend((r, x, z) for x, z in found)
    return out


def check_expected_drift(fn: ly.LyapunovFn, runner, radii, t0: float = 1.0, reps: int = 200,
                         per_radius: int = 4, seed: int = 0, feasible=None, c_rel: float = 0.01):
    """Fit ``E sqrt g(t0) - sqrt g(0) <= C - eps sqrt g(0)`` over starts at
    the given radii. ``runner(x0, z0, t0, reps, seed)`` returns
    ``(s0, samples of sqrt g(t0))`` with ``s0`` the value at the start actually
    used (the simulator may round the state). Returns ``(C_hat, eps_hat, rows)``."""
    from .fluid import fit_drift_constants

    rows = []
    for i, (r, x, z) in enumerate(drift_starts(fn, radii, per_radius, seed, feasible)):
        s0, s1 = runner(x, z, t0, reps, seed + 1000 * (i + 1))
        s1 = np.asarray(s1, float)
        rows.append({"radius": float(r), "x0": float(x), "s0": float(s0), "mean_s1": float(s1.mean()),
                     "se_s1": float(s1.std(ddof=1) / np.sqrt(len(s1)))})
    s0 = np.array([row["s0"] for row in rows])
    s1 = np.array([row["mean_s1"] for row in rows])
    C_hat, eps_hat = fit_drift_constants(s0, s1, c_rel)
    return C_hat, eps_hat, rows


def des_runner(config, fn: ly.LyapunovFn, buffer: int = 4096, backend=None):
    """Runner for :func:`check_expected_drift` on the ``n``-th queue."""
    from . import des

    rn = np.sqrt(config.n)
    gamma = config.derived.gamma

    def scaled(N, Z):
        x = (N - config.n) / rn
        z = (np.asarray(Z, float) - config.n * gamma) / rn
        z = z - (z.sum() + max(-x, 0.0)) / config.K
        return x, z

    def run(x0, z0, t0, reps, seed):
        init = des.state_from_scaled(x0, z0, config)
        xs, zs = scaled(init.N, init.Z)
        s0 = float(np.sqrt(ly.g(fn, xs, zs, tol=1e-9 * (1 + abs(xs)))))
        out = np.empty(reps)
        for j in range(reps):
            sim = des.Simulator(config, seed + j, init, backend=backend, buffer=buffer)
            sim.run_until(t0)
            c = sim.counters()
            x, z = scaled(c["N"], c["Z"])
            out[j] = np.sqrt(ly.g(fn, x, z, tol=1e-9 * (1 + abs(x))))
        return s0, out

    def feasible(x, z):
        N = config.n + rn * x
        return N >= 0 and bool(np.all(config.n * gamma + rn * np.asarray(z) >= 0))

    run.feasible = feasible
    return run


def pou_runner(coeffs: DiffusionCoeffs, fn: ly.LyapunovFn, dt: float = STATIONARY_DT, backend=None):
    """Runner for :func:`check_expected_drift` on the limit process."""

    def run(x0, z0, t0, reps, seed):
        s0 = float(np.sqrt(ly.g(fn, x0, z0, tol=np.inf)))
        out = np.empty(reps)
        for j in range(reps):
            path = simulate_pou(x0, z0, coeffs, fn.beta, fn.mu, fn.alpha, fn.R, fn.p, t0, dt, seed + j, backend)
            x, z = path.x[-1], path.z[-1]
            out[j] = np.sqrt(ly.g(fn, x, z, tol=1e-9 * (1 + path.magnitude())))
        return s0, out

    run.feasible = None
    return run
