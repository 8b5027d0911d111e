"""Empirical distributions, 1-D distances and output analysis.

The distances are computed directly from weighted empirical CDFs; the
Kolmogorov-Smirnov statistic can also be taken against a density table
(integrated by the trapezoid rule).
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import lyapunov as ly

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
N_BATCHES = 30


class EmptyInputError(ValueError):
    pass


@dataclass
class EmpiricalDist:
    """Weighted samples ``(x, z)`` on the manifold, optionally with ages ``a``."""

    x: np.ndarray
    z: np.ndarray
    weights: np.ndarray | None = None
    a: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, float).ravel()
        if len(self.x) == 0:
            raise EmptyInputError("empty sample")
        self.z = np.asarray(self.z, float).reshape(len(self.x), -1)
        if self.weights is None:
            self.weights = np.full(len(self.x), 1.0 / len(self.x))
        else:
            w = np.asarray(self.weights, float)
            if np.any(w <= 0):
                raise ValueError("weights must be positive")
            self.weights = w / w.sum()
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights do not sum to 1")
        d = ly.manifold_defect(self.x, self.z)
        scale = 1.0 + np.abs(self.x)
        if np.any(d > ly.MANIFOLD_TOL * scale):
            raise ly.DomainError("sample off the manifold")

    def __len__(self):
        return len(self.x)

    @property
    def K(self) -> int:
        return self.z.shape[1]

    def marginal(self, selector="x") -> np.ndarray:
        """Values of a scalar functional: ``"x"``, ``"x+"``, ``"x-"``,
        ``"z1"``..``"zK"`` or a callable ``f(x, z)``."""
        if callable(selector):
            return np.asarray(selector(self.x, self.z), float)
        if selector == "x":
            return self.x
        if selector == "x+":
            return np.maximum(self.x, 0.0)
        if selector == "x-":
            return np.maximum(-self.x, 0.0)
        if selector.startswith("z"):
            return self.z[:, int(selector[1:]) - 1]
        raise ValueError(f"unknown selector {selector!r}")

    def sqrt_g(self, fn: ly.LyapunovFn) -> np.ndarray:
        return np.sqrt(ly.g(fn, self.x, self.z, tol=np.inf))

    def mean(self, selector="x") -> float:
        return float(np.sum(self.weights * self.marginal(selector)))


# ----------------------------------------------------------------------------
# weighted empirical CDFs


def _as_sample(d, selector):
    if isinstance(d, EmpiricalDist):
        return d.marginal(selector), d.weights
    if isinstance(d, tuple) and len(d) == 2:
        v, w = np.asarray(d[0], float).ravel(), np.asarray(d[1], float).ravel()
        if v.size == 0:
            raise EmptyInputError("empty sample")
        return v, w / w.sum()
    v = np.asarray(d, float).ravel()
    if v.size == 0:
        raise EmptyInputError("empty sample")
    return v, np.full(v.size, 1.0 / v.size)


def _ecdf_on(values, weights, points):
    order = np.argsort(values, kind="stable")
    v, cw = values[order], np.cumsum(weights[order])
    idx = np.searchsorted(v, points, side="right")
    out = np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)
    return np.minimum(out, 1.0)


def density_cdf(table):
    """``(grid, density)`` -> ``(grid, cdf)`` by the trapezoid rule, normalised."""
    xs, dens = (np.asarray(c, float) for c in table)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(xs) * (dens[1:] + dens[:-1]))])
    return xs, cdf / cdf[-1]


def ks_1d(d1, d2, selector="x") -> float:
    """Sup distance between empirical CDFs, or against a density table
    ``("density", grid, values)``."""
    v1, w1 = _as_sample(d1, selector)
    if v1.size == 0:
        raise EmptyInputError("empty sample")
    if isinstance(d2, tuple) and len(d2) == 3 and d2[0] == "density":
        xs, cdf = density_cdf(d2[1:])
        order = np.argsort(v1, kind="stable")
        v, cw = v1[order], np.cumsum(w1[order])
        F = np.interp(v, xs, cdf, left=0.0, right=1.0)
        before = np.concatenate([[0.0], cw[:-1]])
        return float(min(1.0, max(np.max(np.abs(cw - F)), np.max(np.abs(before - F)))))
    v2, w2 = _as_sample(d2, selector)
    if v2.size == 0:
        raise EmptyInputError("empty sample")
    pts = np.union1d(v1, v2)
    return float(np.max(np.abs(_ecdf_on(v1, w1, pts) - _ecdf_on(v2, w2, pts))))


def ks_argmax(d1, d2, selector="x"):
    """Point where the two-sample KS distance is attained."""
    v1, w1 = _as_sample(d1, selector)
    if isinstance(d2, tuple) and len(d2) == 3 and d2[0] == "density":
        xs, cdf = density_cdf(d2[1:])
        pts = np.unique(v1)
        F = np.interp(pts, xs, cdf, left=0.0, right=1.0)
        diff = np.abs(_ecdf_on(v1, w1, pts) - F)
    else:
        v2, w2 = _as_sample(d2, selector)
        pts = np.union1d(v1, v2)
        diff = np.abs(_ecdf_on(v1, w1, pts) - _ecdf_on(v2, w2, pts))
    return float(pts[int(np.argmax(diff))])


def wasserstein1_1d(d1, d2, selector="x") -> float:
    """``int |F1 - F2| dx`` (equal to the sorted-sample coupling cost)."""
    v1, w1 = _as_sample(d1, selector)
    v2, w2 = _as_sample(d2, selector)
    if v1.size == 0 or v2.size == 0:
        raise EmptyInputError("empty sample")
    pts = np.union1d(v1, v2)
    diff = np.abs(_ecdf_on(v1, w1, pts) - _ecdf_on(v2, w2, pts))
    return float(np.sum(diff[:-1] * np.diff(pts)))


def tail_mass(dist: EmpiricalDist, fn: ly.LyapunovFn, s: float) -> float:
    """Weighted fraction of samples with ``sqrt g > s``."""
    return float(min(1.0, np.sum(dist.weights[dist.sqrt_g(fn) > s])))


def tail_level(dist: EmpiricalDist, fn: ly.LyapunovFn, mass: float) -> float:
    """Smallest sample value ``s`` of ``sqrt g`` with ``tail_mass(s) <= mass``."""
    sg = dist.sqrt_g(fn)
    order = np.argsort(sg)
    tail = 1.0 - np.cumsum(dist.weights[order])
    i = int(np.argmax(tail <= mass + 1e-15))
    return float(sg[order][i])


# ----------------------------------------------------------------------------
# output analysis


def batch_means(values, n_batches: int = N_BATCHES):
    """``(mean, standard error, lag-1 correlation of batch means)``."""
    v = np.asarray(values, float)
    m = len(v) // n_batches
    if m < 1:
        raise ValueError("fewer samples than batches")
    b = v[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    se = float(b.std(ddof=1) / np.sqrt(n_batches))
    c = b - b.mean()
    denom = float(np.sum(c * c))
    rho = float(np.sum(c[1:] * c[:-1]) / denom) if denom > 0 else 0.0
    return float(v.mean()), se, rho


def ks_standard_error(dist: EmpiricalDist, point: float, selector="x", n_batches: int = N_BATCHES) -> float:
    """Batch-means SE of the empirical CDF at ``point`` (samples in time order)."""
    ind = (dist.marginal(selector) <= point).astype(float)
    return batch_means(ind, n_batches)[1]


def stationary_summary(dist: EmpiricalDist, n_batches: int = N_BATCHES) -> dict:
    mp, sp, rp = batch_means(dist.marginal("x+"), n_batches)
    mm, sm, rm = batch_means(dist.marginal("x-"), n_batches)
    mx, sx, rx = batch_means(dist.marginal("x"), n_batches)
    return {"mean_x": mx, "se_x": sx, "mean_x_plus": mp, "se_x_plus": sp, "mean_x_minus": mm,
            "se_x_minus": sm, "lag1": max(rp, rm, rx)}


# ----------------------------------------------------------------------------
# interchange-of-limits report


def interchange_report(dists: dict, reference, fn: ly.LyapunovFn, s_grid=None,
                       reference_density=None, tail_reference: float = 0.01) -> dict:
    """Distances of each ``dists[n]`` to ``reference`` (an EmpiricalDist from
    the limit process) plus tail masses of ``sqrt g``.

    ``reference_density`` (``(grid, density)`` for the ``x`` marginal), when
    given, is used for the ``x`` KS distance instead of the reference sample.
    """
    ns = sorted(dists)
    if len(ns) < 3:
        raise ValueError("need at least three values of n")
    K = {dists[n].K for n in ns} | {reference.K}
    if len(K) != 1:
        raise ValueError("mismatched configurations across n")
    ref_sg = reference.sqrt_g(fn)
    s_tail = tail_level(reference, fn, tail_reference)
    if s_grid is None:
        s_grid = np.linspace(0.0, 2.0 * s_tail, 9)
    rows = []
    for n in ns:
        d = dists[n]
        if reference_density is not None:
            target = ("density",) + tuple(reference_density)
        else:
            target = reference
        ks_x = ks_1d(d, target, "x")
        arg = ks_argmax(d, target, "x")
        se = ks_standard_error(d, arg)
        if reference_density is None:
            se = float(np.hypot(se, ks_standard_error(reference, arg)))
        sg = d.sqrt_g(fn)
        row = {
            "n": int(n),
            "ks_x": ks_x,
            "ks_x_se": se,
            "w1_x": wasserstein1_1d(d, reference, "x"),
            "ks_g": ks_1d((sg, d.weights), (ref_sg, reference.weights), None),
            "w1_g": wasserstein1_1d((sg, d.weights), (ref_sg, reference.weights), None),
            "tail_at_ref": tail_mass(d, fn, s_tail),
            "tails": [tail_mass(d, fn, s) for s in s_grid],
        }
        rows.append(row)
    monotone = all(
        rows[i + 1]["ks_x"] <= rows[i]["ks_x"] + 2.0 * np.hypot(rows[i]["ks_x_se"], rows[i + 1]["ks_x_se"])
        for i in range(len(rows) - 1))
    tails_ok = all(r["tail_at_ref"] < 5 * tail_reference for r in rows)
    return {
        "rows": rows,
        "s_grid": [float(s) for s in s_grid],
        "s_tail": s_tail,
        "tail_reference": tail_reference,
        "ks_monotone": bool(monotone),
        "tails_bounded": bool(tails_ok),
    }


def write_report_csv(path, report: dict) -> None:
    s_grid = report["s_grid"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "ks_x", "ks_x_se", "w1_x", "ks_g", "w1_g"] + [f"tail@{s:.6g}" for s in s_grid])
        for r in report["rows"]:
            w.writerow([r["n"]] + [repr(float(r[k])) for k in ("ks_x", "ks_x_se", "w1_x", "ks_g", "w1_g")]
                       + [repr(float(t)) for t in r["tails"]])


def write_report_json(path, report: dict, extra: dict | None = None) -> None:
    out = dict(report)
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
