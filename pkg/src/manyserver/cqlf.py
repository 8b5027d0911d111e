"""Common quadratic Lyapunov matrix for ``R`` and ``(I - p e') R``.

We look for a symmetric ``Q`` with

* ``Q`` positive definite,
* ``Q R + R' Q`` positive definite,
* ``Q (I - p e') R + R' (I - e p') Q`` positive semi-definite,
* ``Q gamma = b e`` for some ``b > 0``.

``Q`` is searched on the affine slice ``{Q = Q', Q gamma = e}`` by a
deep-cut ellipsoid method driven by eigenvector subgradients of the minimum
eigenvalues, restarted from perturbed Lyapunov solutions. The scale ``kappa`` of the Lyapunov function is then chosen on
the grid ``1, 2, 4, ...``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .linalg import hyperplane_basis, sym, sym_eig

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
GAMMA_TOL = 1e-8
KAPPA_MAX = 2.0 ** 60


class CQLFError(RuntimeError):
    pass


class InfeasibleError(CQLFError):
    pass


class ZBandError(CQLFError):
    pass


class KappaError(CQLFError):
    pass


@dataclass(frozen=True)
class CQLF:
    Q: np.ndarray
    b: float
    kappa: float | None = None
    cert: dict = field(default_factory=dict)
    restarts_used: int = 0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "Q": self.Q.tolist(),
            "b": self.b,
            "kappa": self.kappa,
            "certificates": {k: (float(v) if v is not None else None) for k, v in self.cert.items()},
        }


def _mat_norm(M) -> float:
    return float(np.abs(M).sum())


def band_matrix(Q, R, p) -> np.ndarray:
    K = len(p)
    e = np.ones(K)
    W = (np.eye(K) - np.outer(p, e)) @ R
    return Q @ W + W.T @ Q


def certificate(Q, R, p, gamma) -> dict:
    """Recompute all eigenvalue certificates of ``Q`` from scratch."""
    K = len(p)
    b = float(gamma @ Q @ gamma)
    return {
        "lambda_min_Q": float(sym_eig(sym(Q))[0][0]),
        "lambda_min_QR": float(sym_eig(sym(Q @ R + R.T @ Q))[0][0]),
        "lambda_min_band": float(sym_eig(sym(band_matrix(Q, R, p)))[0][0]),
        "gamma_residual": float(np.max(np.abs(Q @ gamma - b * np.ones(K)))),
        "b": b,
    }


def is_certified(cert: dict) -> bool:
    return (
        cert["lambda_min_Q"] > 0
        and cert["lambda_min_QR"] > 0
        and cert["lambda_min_band"] >= -PSD_TOL
        and cert["gamma_residual"] <= GAMMA_TOL
        and cert["b"] > 0
    )


def _slice(gamma):
    K = len(gamma)
    e = np.ones(K)
    g2 = gamma @ gamma
    Pi = np.eye(K) - np.outer(gamma, gamma) / g2
    Q0 = (np.outer(e, gamma) + np.outer(gamma, e)) / g2 - (e @ gamma) * np.outer(gamma, gamma) / g2**2
    return Q0, Pi


def _sym_basis(Pi, K):
    """Frobenius-orthonormal basis of ``{B = B' : B gamma = 0}``."""
    mats = []
    for i in range(K):
        for j in range(i, K):
            E = np.zeros((K, K))
            E[i, j] = E[j, i] = 1.0
            mats.append((Pi @ E @ Pi).ravel())
    A = np.array(mats).T
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    d = K * (K - 1) // 2
    return [U[:, i].reshape(K, K) for i in range(d)]


def _min_eig_cut(M_of, basis, Q):
    """Smallest eigenvalue of the symmetric ``M_of(Q)`` and its supergradient
    in basis coordinates (eigenvector outer product pulled back)."""
    w, V = np.linalg.eigh(sym(M_of(Q)))
    v = V[:, 0]
    base = float(v @ M_of(Q) @ v)
    g = np.array([float(v @ M_of(Q + B) @ v) - base for B in basis])
    return float(w[0]), g


def solve_q(R, p, gamma, tol: float = PSD_TOL, seed: int = 0, max_restarts: int = 20,
            max_iter: int | None = None) -> CQLF:
    """Find a certified ``Q`` (``kappa`` left unset).

    The search runs over ``Q = Q0 + sum_i c_i B_i`` (``Q0 gamma = e``,
    ``B_i gamma = 0``) and maximises the margin
    ``min(lambda_min(Q), lambda_min(QR + R'Q) / |R|_2)`` under a cap on
    ``lambda_max(Q)`` with a deep-cut ellipsoid method; every cut is an
    eigenvector-outer-product subgradient. Restarts perturb the centre and
    widen the cap. Raises :class:`InfeasibleError` if no restart produces a
    certificate.
    """
    R = np.asarray(R, float)
    p = np.asarray(p, float)
    gamma = np.asarray(gamma, float)
    K = len(p)
    e = np.ones(K)
    Q0, Pi = _slice(gamma)
    delta = 1e-6 * _mat_norm(R)
    r2 = float(np.linalg.norm(R, 2))
    rng = np.random.default_rng(seed)

    if K == 1:
        Q = Q0.copy()
        cert = certificate(Q, R, p, gamma)
        if not is_certified(cert):
            raise InfeasibleError("scalar case not certified")
        cert.update(check_band_entries(Q, R, p))
        return CQLF(Q=Q, b=cert["b"], cert=cert, restarts_used=1, iterations=0)

    basis = _sym_basis(Pi, K)
    d = len(basis)
    Bmat = np.array([B.ravel() for B in basis])

    def to_Q(c):
        return Q0 + (c @ Bmat).reshape(K, K)

    L = sym(solve_continuous_lyapunov(R.T, np.eye(K)))
    L = L / float(gamma @ L @ gamma)
    c_start = Bmat @ (Pi @ L @ Pi).ravel()
    scale = float(np.linalg.norm(L))
    budget = max_iter if max_iter is not None else 200 * (d + 1) ** 2
    f_Q = lambda Q: Q
    f_A = lambda Q: (Q @ R + R.T @ Q) / r2
    iters = 0
    for restart in range(max_restarts):
        cap = 50.0 * scale * 4.0**restart
        x = c_start + (0.0 if restart == 0 else 0.1 * scale * rng.standard_normal(d))
        radius = 2.0 * cap
        if d == 1:
            lo, hi = x[0] - radius, x[0] + radius
        else:
            Pm = radius**2 * np.eye(d)
        best, best_t, stall = None, -np.inf, 0
        for _ in range(budget):
            iters += 1
            Q = to_Q(x)
            wq = np.linalg.eigvalsh(sym(Q))
            if wq[-1] > cap:
                # cap violated: cut on lambda_max(Q) <= cap
                w, V = np.linalg.eigh(sym(Q))
                v = V[:, -1]
                g = np.array([float(v @ B @ v) for B in basis])
                h = wq[-1] - cap
            else:
                # the band matrix is not cut on: it always has gamma in its
                # kernel, and on the slice it is PSD whenever QR + R'Q is PD
                lq, gq = _min_eig_cut(f_Q, basis, Q)
                la, ga = _min_eig_cut(f_A, basis, Q)
                t, gt = (lq, gq) if lq <= la else (la, ga)
                if t > best_t:
                    if best_t > delta and t - best_t < 1e-3 * abs(best_t):
                        stall += 1
                    else:
                        stall = 0
                    best, best_t = x.copy(), t
                else:
                    stall += 1
                # keep {t(c) >= best_t}: gt'(c - x) >= best_t - t
                g, h = -gt, best_t - t
                if best_t > delta and stall > 10 * (d + 1):
                    break
            gn = float(np.linalg.norm(g))
            if gn == 0.0:
                break
            if d == 1:
                # cut g*(c - x) <= -h on an interval
                bound = x[0] - h / g[0]
                if g[0] > 0:
                    hi = min(hi, bound)
                else:
                    lo = max(lo, bound)
                if lo > hi:
                    break
                x = np.array([0.5 * (lo + hi)])
                if hi - lo < 1e-12 * max(1.0, abs(x[0])):
                    break
                continue
            Pg = Pm @ g
            gPg = float(g @ Pg)
            if gPg <= 0:
                break
            sq = np.sqrt(gPg)
            a = h / sq
            if a >= 1.0:
                break
            gt_ = Pg / sq
            x = x - (1.0 + d * a) / (d + 1.0) * gt_
            Pm = (d * d * (1.0 - a * a) / (d * d - 1.0)) * (
                Pm - (2.0 * (1.0 + d * a) / ((d + 1.0) * (1.0 + a))) * np.outer(gt_, gt_))
            Pm = sym(Pm)
        if best is None or best_t <= delta:
            log.debug("restart %d: no interior point (best margin %.3g)", restart, best_t)
            continue
        Q = sym(to_Q(best))
        cert = certificate(Q, R, p, gamma)
        if is_certified(cert) and cert["lambda_min_band"] >= -tol:
            cert.update(check_band_entries(Q, R, p))
            return CQLF(Q=Q, b=cert["b"], cert=cert, restarts_used=restart + 1, iterations=iters)
    raise InfeasibleError(f"infeasible within iteration budget ({max_restarts} restarts)")


def check_z_band(Q, R, p, tol: float = 1e-12):
    """Extremes ``(c_B, C_B)`` of ``h' M h`` over unit ``h`` with ``e'h = 0``,
    ``M = Q (I - p e') R + R' (I - e p') Q``.

    For ``K == 1`` the hyperplane is trivial and ``(inf, inf)`` is returned.
    """
    K = len(p)
    if K < 2:
        return np.inf, np.inf
    U = hyperplane_basis(K)
    M = sym(band_matrix(np.asarray(Q, float), np.asarray(R, float), np.asarray(p, float)))
    w, _ = sym_eig(U.T @ M @ U)
    c_B, C_B = float(w[0]), float(w[-1])
    if c_B <= tol:
        raise ZBandError(f"Q fails strict band condition (c_B={c_B:.3g})")
    return c_B, C_B


def check_band_entries(Q, R, p) -> dict:
    try:
        c_B, C_B = check_z_band(Q, R, p)
    except ZBandError:
        c_B, C_B = -np.inf, -np.inf
    return {"c_B": c_B, "C_B": C_B}


def kappa_conditions(kappa, Q, R, p, alpha, mu, c_B=None) -> dict:
    """Minimum eigenvalues / slack of the three ``kappa`` conditions."""
    K = len(p)
    e = np.ones(K)
    eR = e @ R
    eR_norm = float(np.linalg.norm(eR))
    A = Q @ R + R.T @ Q
    Mi = np.outer(e, eR) + np.outer(eR, e) + kappa * A
    Mii = -2.0 * alpha * max(alpha, mu) * eR_norm * np.eye(K) + kappa * A
    if c_B is None:
        c_B, _ = check_z_band(Q, R, p)
    if np.isinf(c_B):
        slack = np.inf
    else:
        need = eR_norm**2 * max(1.0 / min(alpha, mu), alpha)
        slack = kappa * c_B / 2.0 - need
    return {
        "lambda_min_kappa_i": float(sym_eig(sym(Mi))[0][0]),
        "lambda_min_kappa_ii": float(sym_eig(sym(Mii))[0][0]),
        "cross_term_slack": float(slack),
    }


def _kappa_ok(c) -> bool:
    return c["lambda_min_kappa_i"] > 0 and c["lambda_min_kappa_ii"] > 0 and c["cross_term_slack"] >= 0


def select_kappa(Q, R, p, alpha, mu) -> float:
    """Smallest ``kappa`` in ``{1, 2, 4, ...}`` meeting all three conditions."""
    c_B, _ = check_z_band(Q, R, p)
    kappa = 1.0
    while kappa <= KAPPA_MAX:
        if _kappa_ok(kappa_conditions(kappa, Q, R, p, alpha, mu, c_B)):
            return kappa
        kappa *= 2.0
    raise KappaError("kappa budget exhausted")


def build(R, p, gamma, alpha, mu, seed: int = 0, **kw) -> CQLF:
    """Solve for ``Q``, select ``kappa`` and attach every certificate."""
    res = solve_q(R, p, gamma, seed=seed, **kw)
    kappa = select_kappa(res.Q, R, p, alpha, mu)
    cert = dict(res.cert)
    cert.update(kappa_conditions(kappa, res.Q, R, p, alpha, mu))
    return replace(res, kappa=kappa, cert=cert)
