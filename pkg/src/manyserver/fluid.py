"""Fluid model: drift-only inputs fed through the map of :mod:`psi`, plus
numerical checks of the fluid drift properties of ``g``.

The fluid inputs from a start ``(x0, z0)`` on the manifold are

    u(t) = x0 - mu beta t,    v(t) = (I - p e') z0,

and the resulting path solves a switched linear ODE whose two regimes are
``x >= 0`` and ``x < 0`` (see :func:`lyapunov.fluid_field`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import lyapunov as ly
from . import psi as ps

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-6
EVENT_TOL = 1e-10
MAX_CROSSINGS = 10**4


class FluidError(RuntimeError):
    pass


class PropertyFailure(FluidError):
    """A numerically checked property of the fluid model did not hold."""


@dataclass(frozen=True)
class FluidTrajectory:
    times: np.ndarray
    path: ps.StatePath
    g: np.ndarray

    @property
    def x(self):
        return self.path.x

    @property
    def z(self):
        return self.path.z


def fluid_inputs(x0: float, z0, beta: float, mu: float, grid: ps.Grid, p) -> ps.InputPath:
    z0 = np.asarray(z0, float)
    p = np.asarray(p, float)
    if float(ly.manifold_defect(x0, z0)) > ly.MANIFOLD_TOL * (1.0 + abs(x0)):
        raise ly.DomainError("fluid start is off the manifold")
    t = grid.times
    u = x0 - mu * beta * t
    v0 = z0 - p * z0.sum()
    return ps.InputPath(u, np.broadcast_to(v0, (len(t), len(p))).copy())


def _rk4(fn, x, z, h, positive):
    """One RK4 step of the regime selected by ``positive``."""
    def f(xx, zz):
        return _field(fn, xx, zz, positive)

    k1 = f(x, z)
    k2 = f(x + 0.5 * h * k1[0], z + 0.5 * h * k1[1])
    k3 = f(x + 0.5 * h * k2[0], z + 0.5 * h * k2[1])
    k4 = f(x + h * k3[0], z + h * k3[1])
    return (x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            z + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _field(fn, x, z, positive):
    Rz = fn.R @ z
    eRz = float(Rz.sum())
    if positive:
        return -fn.mu * fn.beta - fn.alpha * x - eRz, -(Rz - fn.p * eRz)
    return -fn.mu * fn.beta - eRz, -fn.mu * fn.beta * fn.p - Rz


def _regime_after(fn, x, z):
    """Regime to use from a point with ``x`` at the switching surface."""
    dx, _ = _field(fn, 0.0, z, True)
    return dx >= 0


def _direct_ode(fn, x0, z0, grid):
    K = len(z0)
    n = grid.n_steps
    xs = np.empty(n + 1)
    zs = np.empty((n + 1, K))
    x, z = float(x0), np.array(z0, float)
    xs[0], zs[0] = x, z
    crossings = 0
    for i in range(n):
        remaining = grid.dt
        while remaining > 0:
            positive = x > 0 or (x == 0 and _regime_after(fn, x, z))
            xn, zn = _rk4(fn, x, z, remaining, positive)
            crossed = (xn < 0) if positive else (xn > 0)
            if not crossed:
                x, z = xn, zn
                break
            # locate the switching time by bisection on the step length
            lo, hi = 0.0, remaining
            while hi - lo > 1e-14 * max(1.0, remaining):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4(fn, x, z, mid, positive)
                if ((xm < 0) if positive else (xm > 0)):
                    hi = mid
                else:
                    lo = mid
                if abs(xm) <= EVENT_TOL:
                    lo = hi = mid
                    break
            h = hi
            _, z = _rk4(fn, x, z, h, positive)
            x = 0.0
            if not positive:
                # on the surface e'z = x^- = 0; remove the O(tol) drift
                z = z - z.sum() / K
            remaining -= h
            crossings += 1
            if crossings > MAX_CROSSINGS:
                raise FluidError("switching chattering: reduce the step size")
            if h <= 0:
                # stuck at the surface: step once in the other regime
                xn, zn = _rk4(fn, x, z, remaining, not positive)
                x, z = xn, zn
                break
        xs[i + 1], zs[i + 1] = x, z
    return ps.StatePath(xs, zs)


def integrate_fluid(fn: ly.LyapunovFn, x0: float, z0, t_end: float, dt: float | None = None,
                    method: str = "via_psi") -> FluidTrajectory:
    """Fluid path from ``(x0, z0)`` over ``[0, t_end]`` together with ``g``."""
    if dt is None:
        dt = ps.fit_dt(t_end, ps.default_dt(fn.alpha, np.abs(np.diag(fn.R))))
    grid = ps.Grid(t_end, dt)
    if method == "via_psi":
        inp = fluid_inputs(x0, z0, fn.beta, fn.mu, grid, fn.p)
        path = ps.psi(inp, fn.alpha, fn.R, fn.p, grid, check=False)
    elif method == "direct_ode":
        if float(ly.manifold_defect(x0, z0)) > ly.MANIFOLD_TOL * (1.0 + abs(x0)):
            raise ly.DomainError("fluid start is off the manifold")
        path = _direct_ode(fn, x0, z0, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    tol = _path_tol(fn, path, grid)
    gv = ly.g(fn, path.x, path.z, tol=tol)
    return FluidTrajectory(grid.times, path, gv)


def _path_tol(fn, path, grid):
    """Manifold tolerance for discretised paths: round-off relative to the
    path magnitude (both integrators preserve the constraint exactly)."""
    return ly.MANIFOLD_TOL * (1.0 + path.magnitude())


def fixed_point(fn: ly.LyapunovFn):
    """Equilibrium of the fluid field (also the minimiser of ``g``)."""
    x, z, _ = fn.minimizer()
    return x, z


def lipschitz_increment_bound(fn: ly.LyapunovFn, traj: FluidTrajectory):
    """Observed ``max |state_{i+1} - state_i| / dt`` and the analytic bound
    ``mu|beta| + (alpha + |R|) S + |R| S`` with ``S`` the sup path norm."""
    dt = traj.times[1] - traj.times[0]
    st = np.column_stack([traj.x, traj.z])
    obs = float(np.abs(np.diff(st, axis=0)).max() / dt) if len(st) > 1 else 0.0
    S = float(np.abs(st).max())
    Rn = float(np.abs(fn.R).sum(axis=1).max())
    p1 = float(np.abs(fn.p).max())
    bound = (1 + p1) * (fn.mu * abs(fn.beta) + (fn.alpha + Rn) * S + Rn * S)
    return obs, bound


# ----------------------------------------------------------------------------
# checks


def _starts(fn, rng, count, r_lo, r_hi):
    return ly.sample_radius(rng, fn.K, count, r_lo, r_hi)


def check_g_monotone(fn: ly.LyapunovFn, count: int = 100, t_end: float = 5.0, dt: float | None = None,
                     seed: int = 0, r_lo: float = 1e-2, r_hi: float = 1e6, raise_on_fail: bool = True) -> dict:
    """Check ``g(t_{i+1}) <= g(t_i) + tol (1 + g(t_i))`` along random
    trajectories."""
    rng = np.random.default_rng(seed)
    xs, zs = _starts(fn, rng, count, r_lo, r_hi)
    worst, n_viol = -np.inf, 0
    for x0, z0 in zip(xs, zs):
        tr = integrate_fluid(fn, x0, z0, t_end, dt)
        inc = (tr.g[1:] - tr.g[:-1]) / (1.0 + tr.g[:-1])
        worst = max(worst, float(inc.max()))
        n_viol += int(np.sum(inc > MONOTONE_TOL))
    report = {"trajectories": count, "max_relative_increase": worst, "violations": n_viol,
              "tolerance": MONOTONE_TOL}
    if raise_on_fail and n_viol:
        raise PropertyFailure(f"g increased along {n_viol} steps (max {worst:.3g})")
    return report


def band_radius(fn: ly.LyapunovFn) -> float:
    """``M = 10 (1 + |beta|)(1 + lambda_max(Q)/lambda_min(Q))``."""
    w = np.linalg.eigvalsh(fn.Q)
    return 10.0 * (1.0 + abs(fn.beta)) * (1.0 + w[-1] / w[0])


def check_geometric_band(fn: ly.LyapunovFn, count: int = 100, t_end: float = 2.0, radius: float = 1e3,
                         dt: float | None = None, seed: int = 0, M_used: float | None = None):
    """Empirical ``d ln g / dt`` over path segments with norm ``>= M_used``;
    returns ``(c_hat, C_hat, M_used)`` with the band ``[-C_hat, -c_hat]``."""
    M = band_radius(fn) if M_used is None else M_used
    rng = np.random.default_rng(seed)
    xs, zs = _starts(fn, rng, count, radius, radius)
    hi, lo = -np.inf, np.inf
    for x0, z0 in zip(xs, zs):
        tr = integrate_fluid(fn, x0, z0, t_end, dt)
        norm = np.sqrt(tr.x**2 + (tr.z**2).sum(axis=1))
        keep = (norm[:-1] >= M) & (norm[1:] >= M)
        if not keep.any():
            continue
        dlng = np.diff(np.log(tr.g)) / np.diff(tr.times)
        hi = max(hi, float(dlng[keep].max()))
        lo = min(lo, float(dlng[keep].min()))
    if not np.isfinite(hi):
        raise PropertyFailure("no trajectory segment beyond the band radius")
    c_hat, C_hat = -hi, -lo
    if c_hat <= 0:
        raise PropertyFailure(f"geometric band fails: c_hat = {c_hat:.3g}")
    return c_hat, C_hat, M


EPS_GRID = np.round(np.arange(0.01, 1.0, 0.01), 2)


def fit_drift_constants(s0, s1, c_rel: float = 0.01, eps_grid=EPS_GRID):
    """Grid search for ``s1 - s0 <= C - eps s0``.

    For each ``eps`` the smallest feasible ``C`` is
    ``max(0, max_i(s1_i - s0_i + eps s0_i))``. Returned is the largest
    ``eps`` whose ``C`` stays below ``c_rel * max(s0)``, so that the
    contraction carries the far field rather than the constant.
    Returns ``(C_hat, eps_hat)``; ``eps_hat = 0`` when no grid point works.
    """
    s0 = np.asarray(s0, float)
    s1 = np.asarray(s1, float)
    cap = c_rel * float(s0.max())
    best = (float(max(0.0, np.max(s1 - s0))), 0.0)
    for eps in eps_grid:
        C = max(0.0, float(np.max(s1 - s0 + eps * s0)))
        if C <= cap:
            best = (C, float(eps))
    return best


def check_fluid_drift_inequality(fn: ly.LyapunovFn, t0: float = 1.0, count: int = 1000, seed: int = 0,
                                 r_lo: float = 1e-2, r_hi: float = 1e6, dt: float | None = None,
                                 c_rel: float = 0.01):
    """``sqrt g(t0) - sqrt g(0) <= C - eps sqrt g(0)`` over random fluid
    starts of log-uniform radius, including the minimiser. Returns
    ``(C_hat, eps_hat)``."""
    rng = np.random.default_rng(seed)
    xs, zs = _starts(fn, rng, count, r_lo, r_hi)
    xm, zm = fixed_point(fn)
    xs = np.append(xs, xm)
    zs = np.vstack([zs, zm])
    s0 = np.empty(len(xs))
    s1 = np.empty(len(xs))
    for i, (x0, z0) in enumerate(zip(xs, zs)):
        tr = integrate_fluid(fn, x0, z0, t0, dt)
        s0[i] = np.sqrt(tr.g[0])
        s1[i] = np.sqrt(tr.g[-1])
    C_hat, eps_hat = fit_drift_constants(s0, s1, c_rel)
    if eps_hat <= 0:
        raise PropertyFailure("no feasible (C, eps) on the grid")
    return C_hat, eps_hat
