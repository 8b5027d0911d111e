"""Numerical version of the map taking input paths ``(u, v)`` to ``(x, z)``.

The state solves

    x(t) = u(t) - alpha * int_0^t x(s)^+ ds - e'R int_0^t z(s) ds
    z(t) = v(t) - p x(t)^- - (I - p e') R int_0^t z(s) ds

for inputs with ``e'v = 0``; outputs then satisfy ``e'z + x^- = 0``.

The main solver marches forward: at ``t_i`` the integrals are the trapezoid
integrals up to ``t_{i-1}`` plus a left-endpoint contribution of the last
step, ``x(t_i)`` follows from the first equation and ``z(t_i)`` from the
second using ``x(t_i)^-``. :func:`psi_fixed_point` solves the same equations
with implicit trapezoid integrals by Picard sweeps and serves as an
independent cross-check.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import _backend

log = logging.getLogger(__name__)

MAX_STEPS = 10**8
INPUT_TOL = 1e-9
STALL_TOL = 1e-9


class GridError(ValueError):
    """Grid too coarse for the requested accuracy, or malformed."""


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise GridError("dt must be positive")
        if self.t_end < 0:
            raise GridError("t_end must be non-negative")
        m = self.t_end / self.dt
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise GridError("t_end/dt must be an integer")
        if round(m) > MAX_STEPS:
            raise GridError("too many steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.t_end, self.dt / factor)


@dataclass(frozen=True)
class InputPath:
    """``u`` has shape ``(n+1,)``, ``v`` has shape ``(n+1, K)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=float)
        v = np.ascontiguousarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if u.ndim != 1 or v.shape[0] != u.shape[0]:
            raise PathError("u must be (n+1,) and v (n+1, K)")
        scale = 1.0 + (np.abs(v).max() if v.size else 0.0)
        if v.size and np.abs(v.sum(axis=1)).max() > INPUT_TOL * scale:
            raise PathError("input violates e'v = 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def K(self) -> int:
        return self.v.shape[1]

    def magnitude(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))

    def scaled(self, b: float) -> "InputPath":
        return InputPath(b * self.u, b * self.v)

    def sample(self, stride: int) -> "InputPath":
        return InputPath(self.u[::stride], self.v[::stride])


@dataclass(frozen=True)
class StatePath:
    x: np.ndarray
    z: np.ndarray

    @property
    def K(self) -> int:
        return self.z.shape[1]

    def manifold_defect(self) -> float:
        return float(np.abs(self.z.sum(axis=1) + np.maximum(-self.x, 0.0)).max())

    def magnitude(self) -> float:
        return float(max(np.abs(self.x).max(), np.abs(self.z).max()))


def default_dt(alpha: float, nu) -> float:
    """``1e-3`` times the fastest time scale ``1/max(alpha, max nu)``."""
    return 1e-3 / max(alpha, float(np.max(nu)))


def fit_dt(t_end: float, dt_max: float) -> float:
    """Largest step ``<= dt_max`` dividing ``t_end`` into whole steps."""
    return t_end / max(1, int(np.ceil(t_end / dt_max - 1e-9)))


def rate_scale(alpha, R) -> float:
    """``1 + alpha + |R|_inf``, the Lipschitz scale of the integral terms."""
    return 1.0 + alpha + float(np.abs(np.asarray(R)).sum(axis=1).max())


def _coeffs(R, p):
    R = np.asarray(R, float)
    p = np.ascontiguousarray(p, dtype=float)
    K = len(p)
    e = np.ones(K)
    eR = np.ascontiguousarray(e @ R)
    W = np.ascontiguousarray((np.eye(K) - np.outer(p, e)) @ R)
    return eR, W, p


def new_state(K: int) -> np.ndarray:
    """Carried state for :func:`march`; starts a fresh path."""
    return np.zeros(3 + 2 * K)


def march(u, v, alpha, R, p, dt, state=None, backend=None):
    """Run the marching kernel on one chunk; ``state`` carries the path over
    chunk boundaries (see :func:`new_state`). Returns ``(x, z, state)``."""
    eR, W, p = _coeffs(R, p)
    u = np.ascontiguousarray(u, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    K = len(p)
    if state is None:
        state = new_state(K)
    x = np.empty(u.shape[0])
    z = np.empty((u.shape[0], K))
    _backend.get(backend).psi_march(u, v, float(alpha), eR, W, p, float(dt), x, z, state)
    return x, z, state


def psi(inp: InputPath, alpha: float, R, p, grid: Grid, check: bool = True, backend=None) -> StatePath:
    """Solve the integral equations on ``grid``.

    With ``check`` the residual is compared with
    ``10 * dt * (1 + magnitude) * rate_scale`` and :class:`GridError`
    ("refine grid") is raised if it is larger.
    """
    if inp.u.shape[0] != grid.n_steps + 1:
        raise PathError("input length does not match grid")
    if inp.K != len(p):
        raise PathError("input dimension does not match p")
    x, z, _ = march(inp.u, inp.v, alpha, R, p, grid.dt, backend=backend)
    out = StatePath(x, z)
    if check:
        res = residual(out, inp, alpha, R, p, grid)
        bound = 10.0 * grid.dt * (1.0 + inp.magnitude()) * rate_scale(alpha, R)
        log.debug("psi residual %.3g (bound %.3g)", res, bound)
        if res > bound:
            raise GridError(f"refine grid: residual {res:.3g} exceeds {bound:.3g}")
    return out


def _cumtrapz(y, dt):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def defects(out: StatePath, inp: InputPath, alpha, R, p, grid: Grid):
    """Pointwise defects of the two equations (trapezoid integrals)."""
    eR, W, p = _coeffs(R, p)
    Ix = _cumtrapz(np.maximum(out.x, 0.0), grid.dt)
    Iz = _cumtrapz(out.z, grid.dt)
    d1 = out.x - inp.u + alpha * Ix + Iz @ eR
    d2 = out.z - inp.v + np.outer(np.maximum(-out.x, 0.0), p) + Iz @ W.T
    return d1, d2


def residual(out: StatePath, inp: InputPath, alpha, R, p, grid: Grid) -> float:
    """Sup over the grid of the largest defect of the two equations."""
    if out.x.shape != inp.u.shape:
        raise PathError("grids do not match")
    d1, d2 = defects(out, inp, alpha, R, p, grid)
    return float(max(np.abs(d1).max(), np.abs(d2).max()))


def psi_fixed_point(inp: InputPath, alpha, R, p, grid: Grid, tol: float = 1e-12,
                    max_sweeps: int = 10000) -> StatePath:
    """Same equations, implicit trapezoid integrals, solved by Picard sweeps.

    The map is a Volterra contraction, so sweeps converge on any finite
    horizon; the number needed grows roughly like ``rate * t_end``.
    """
    eR, W, p = _coeffs(R, p)
    x = inp.u.copy()
    z = inp.v - np.outer(np.maximum(-x, 0.0), p)
    best, stalled = np.inf, 0
    for sweep in range(max_sweeps):
        Ix = _cumtrapz(np.maximum(x, 0.0), grid.dt)
        Iz = _cumtrapz(z, grid.dt)
        x_new = inp.u - alpha * Ix - Iz @ eR
        z_new = inp.v - np.outer(np.maximum(-x_new, 0.0), p) - Iz @ W.T
        change = max(np.abs(x_new - x).max(), np.abs(z_new - z).max())
        x, z = x_new, z_new
        scale = 1.0 + np.abs(x).max()
        if change <= tol * scale:
            log.debug("fixed point converged after %d sweeps", sweep + 1)
            break
        # rounding in the cumulative sums sets a floor; the kink of x^+ can
        # then make the sweeps cycle just above tol
        stalled = stalled + 1 if change >= best else 0
        best = min(best, change)
        if stalled >= 10 and best <= STALL_TOL * scale:
            log.debug("fixed point stalled at %.3g after %d sweeps", best, sweep + 1)
            break
    else:
        raise GridError("fixed-point sweeps did not converge")
    return StatePath(x, z)


def sup_distance(a: StatePath, b: StatePath) -> float:
    return float(max(np.abs(a.x - b.x).max(), np.abs(a.z - b.z).max()))


def check_homogeneity(inp: InputPath, scale_b: float, alpha, R, p, grid: Grid) -> float:
    """``sup |Psi(b y) - b Psi(y)|`` over the grid."""
    if not scale_b > 0:
        raise ValueError("scale_b must be positive")
    base = psi(inp, alpha, R, p, grid, check=False)
    if scale_b == 1.0:
        return 0.0
    scaled = psi(inp.scaled(scale_b), alpha, R, p, grid, check=False)
    return float(max(np.abs(scaled.x - scale_b * base.x).max(),
                     np.abs(scaled.z - scale_b * base.z).max()))


def input_distance(a: InputPath, b: InputPath) -> float:
    return float(max(np.abs(a.u - b.u).max(), np.abs(a.v - b.v).max()))


def check_lipschitz(inp1: InputPath, inp2: InputPath, alpha, R, p, grid: Grid) -> float:
    """Ratio of output to input sup-distance (0 for identical inputs)."""
    d_in = input_distance(inp1, inp2)
    if d_in == 0.0:
        return 0.0
    o1 = psi(inp1, alpha, R, p, grid, check=False)
    o2 = psi(inp2, alpha, R, p, grid, check=False)
    return sup_distance(o1, o2) / d_in


# ----------------------------------------------------------------------------
# input generators


def project_input(v):
    """Project rows of ``v`` onto ``{e'v = 0}``."""
    v = np.asarray(v, float)
    return v - v.mean(axis=1, keepdims=True)


def piecewise_constant_input(rng: np.random.Generator, K: int, grid: Grid, n_pieces: int = 8,
                             scale: float = 1.0, base_dt: float | None = None) -> InputPath:
    """Right-continuous step input with jumps on multiples of ``base_dt``
    (default ``grid.dt``); jump epochs therefore land on every refinement."""
    base_dt = grid.dt if base_dt is None else base_dt
    n_base = int(round(grid.t_end / base_dt))
    cuts = np.sort(rng.choice(np.arange(1, n_base), size=min(n_pieces - 1, n_base - 1), replace=False))
    levels_u = scale * rng.standard_normal(len(cuts) + 1)
    levels_v = project_input(scale * rng.standard_normal((len(cuts) + 1, K)))
    t = grid.times
    # index of the piece each grid time belongs to (jump at cut*base_dt)
    idx = np.searchsorted(cuts * base_dt, t + 1e-9 * base_dt, side="right")
    return InputPath(levels_u[idx], levels_v[idx])


def smooth_input(rng: np.random.Generator, K: int, grid: Grid, n_modes: int = 3, scale: float = 1.0) -> InputPath:
    """Sum of a few random sinusoids (``e'v = 0`` by projection)."""
    t = grid.times[:, None]
    T = max(grid.t_end, 1e-12)
    freq = rng.uniform(0.2, 2.0, n_modes) * 2 * np.pi / T
    ph = rng.uniform(0, 2 * np.pi, n_modes)
    a = scale * rng.standard_normal(n_modes)
    u = (a * np.sin(freq * t + ph)).sum(axis=1) + scale * rng.standard_normal()
    B = scale * rng.standard_normal((n_modes, K))
    v = project_input(np.sin(freq * t + ph) @ B)
    return InputPath(u, v)


# ----------------------------------------------------------------------------
# CSV


def _write_csv(path, header, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(c)) for c in row])


def write_input_csv(path, inp: InputPath, grid: Grid) -> None:
    K = inp.K
    _write_csv(path, ["t", "u"] + [f"v{k + 1}" for k in range(K)],
               [grid.times, inp.u] + [inp.v[:, k] for k in range(K)])


def write_state_csv(path, out: StatePath, grid: Grid) -> None:
    K = out.K
    _write_csv(path, ["t", "x"] + [f"z{k + 1}" for k in range(K)],
               [grid.times, out.x] + [out.z[:, k] for k in range(K)])


def _read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(c) for c in row] for row in r])
    return header, data.reshape(-1, len(header))


def read_input_csv(path) -> tuple[InputPath, np.ndarray]:
    header, data = _read_csv(path)
    if header[:2] != ["t", "u"]:
        raise PathError("expected columns t, u, v1..vK")
    return InputPath(data[:, 1], data[:, 2:]), data[:, 0]


def read_state_csv(path) -> tuple[StatePath, np.ndarray]:
    header, data = _read_csv(path)
    if header[:2] != ["t", "x"]:
        raise PathError("expected columns t, x, z1..zK")
    return StatePath(data[:, 1], data[:, 2:]), data[:, 0]
