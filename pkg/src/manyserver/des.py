"""Discrete-event simulation of the ``n``-server queue with renewal arrivals,
phase-type service and exponential patience.

Events are a race between the renewal arrival clock and one exponential
clock of total rate ``alpha * queue + sum_k nu_k Z_k`` (abandonments and
phase completions); the winner of the exponential race is picked in
proportion to its rate. This is equivalent in law to per-customer clocks by
memorylessness and costs O(K) per event.

Paths are recorded at requested epochs as right-continuous snapshots of the
state together with all primitive counters, from which the diffusion-scaled
input components are rebuilt (:func:`extract_components`).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from . import phasetype as pt
from . import psi as ps
from .arrivals import InterarrivalDist
from .stats import EmpiricalDist, batch_means

log = logging.getLogger(__name__)

BUFFER = 1 << 16
LOG_CHUNK = 1 << 16
EVENT_NAMES = ("arrival", "phase", "departure", "abandonment")


class ConfigError(ValueError):
    pass


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    n: int
    beta: float
    interarrival: InterarrivalDist
    service: pt.PhaseTypeParams
    alpha: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        object.__setattr__(self, "interarrival", InterarrivalDist.from_spec(self.interarrival))
        pt.validate(self.service)
        if not self.beta < np.sqrt(self.n):
            raise ConfigError("beta must be below sqrt(n) for a positive arrival rate")

    @property
    def derived(self) -> pt.DerivedServiceData:
        return pt.derive(self.service)

    @property
    def mu(self) -> float:
        return self.derived.mu

    @property
    def lambda_n(self) -> float:
        """``n mu (1 - beta / sqrt n)``."""
        return self.n * self.mu * (1.0 - self.beta / np.sqrt(self.n))

    @property
    def rho(self) -> float:
        return self.lambda_n / (self.n * self.mu)

    @property
    def c_u2(self) -> float:
        return self.interarrival.scv

    @property
    def K(self) -> int:
        return self.service.K

    def relaxation_time(self) -> float:
        """``1 / min(alpha, mu, min nu)``."""
        return 1.0 / min(self.alpha, self.mu, float(self.service.nu.min()))

    def with_n(self, n: int) -> "SystemConfig":
        return SystemConfig(n, self.beta, self.interarrival, self.service, self.alpha)


class Layout:
    """Column layout of snapshot rows."""

    def __init__(self, K: int):
        self.K = K
        c = 0

        def take(m):
            nonlocal c
            s = slice(c, c + m)
            c += m
            return s

        self.t = take(1)
        self.A = take(1)
        self.N = take(1)
        self.Z = take(K)
        self.arrivals = take(1)
        self.abandons = take(1)
        self.departures = take(1)
        self.B = take(1)
        self.Bj = take(K)
        self.C = take(K)
        self.routes = take(K * (K + 1))
        self.T = take(K)
        self.intQ = take(1)
        self.width = c


@dataclass
class Snapshots:
    """Recorded rows; accessors return columns (routes as ``(m, K, K+1)``)."""

    rows: np.ndarray
    K: int
    layout: Layout = field(init=False)

    def __post_init__(self):
        self.layout = Layout(self.K)

    def __len__(self):
        return self.rows.shape[0]

    def col(self, name):
        s = getattr(self.layout, name)
        out = self.rows[:, s]
        if name == "routes":
            return out.reshape(-1, self.K, self.K + 1)
        return out[:, 0] if s.stop - s.start == 1 and name not in ("Z", "Bj", "C", "T") else out


@dataclass
class InitialState:
    N: int = 0
    Z: np.ndarray | None = None
    age: float = 0.0

    def validate(self, n: int, K: int, service: pt.PhaseTypeParams):
        Z = np.zeros(K, dtype=np.int64) if self.Z is None else np.asarray(self.Z, dtype=np.int64)
        if self.Z is None and self.N > 0:
            raise ConfigError("initial Z required when N > 0")
        if Z.shape != (K,) or np.any(Z < 0):
            raise ConfigError("initial Z must be a non-negative K-vector")
        if int(Z.sum()) != min(self.N, n):
            raise ConfigError("initial state must satisfy e'Z = min(N, n)")
        if self.age < 0:
            raise ConfigError("initial age must be non-negative")
        return Z


def state_from_scaled(x: float, z, config: SystemConfig) -> InitialState:
    """Nearest feasible integer state to a scaled state ``(x, z)``."""
    n, K = config.n, config.K
    gamma = config.derived.gamma
    N = max(0, int(round(n + np.sqrt(n) * x)))
    busy = min(N, n)
    target = n * gamma + np.sqrt(n) * np.asarray(z, float)
    target = np.maximum(target, 0.0)
    if target.sum() > 0:
        target = target * busy / target.sum()
    else:
        target = busy * gamma
    Z = np.floor(target).astype(np.int64)
    short = busy - int(Z.sum())
    if short > 0:
        Z[np.argsort(-(target - Z))[:short]] += 1
    return InitialState(N=N, Z=Z)


class Simulator:
    """Resumable simulation of one system; one seed gives one path."""

    def __init__(self, config: SystemConfig, seed: int = 0, initial: InitialState | None = None,
                 backend: str | None = None, log_events: bool = False, buffer: int = BUFFER):
        self.config = config
        self.kern = _backend.get(backend)
        d = config.derived
        K = config.K
        self.K = K
        self.lam = config.lambda_n
        self.nu = np.ascontiguousarray(config.service.nu, dtype=float)
        self.rcdf = np.ascontiguousarray(d.routing_cdf, dtype=float)
        self.icdf = np.ascontiguousarray(d.initial_cdf, dtype=float)
        ss = np.random.SeedSequence(seed)
        s_u, s_ia, s_init = ss.spawn(3)
        self.rng_u = np.random.default_rng(s_u)
        self.rng_ia = np.random.default_rng(s_ia)
        self.buffer = buffer
        self.ubuf = self.rng_u.random(buffer)
        self.iabuf = self._interarrivals(buffer)
        init = initial or InitialState()
        Z0 = init.validate(config.n, K, config.service)
        k = _backend.get("python")
        self.dstate = np.zeros(k.DSTATE_LEN)
        self.istate = np.zeros(k.ISTATE_LEN, dtype=np.int64)
        self.Z = Z0.copy()
        self.Bj = np.zeros(K, dtype=np.int64)
        self.C = np.zeros(K, dtype=np.int64)
        self.routes = np.zeros((K, K + 1), dtype=np.int64)
        self.T = np.zeros(K)
        self.istate[k.I_N] = init.N
        self.istate[k.I_Q] = max(init.N - config.n, 0)
        self.dstate[k.D_LAST] = -init.age
        self.dstate[k.D_NEXT] = self._first_arrival(init.age, np.random.default_rng(s_init))
        self.log_events = log_events
        self.log_buf = np.zeros((LOG_CHUNK if log_events else 1, 3 + K))
        self.log_parts: list[np.ndarray] = []
        self.layout = Layout(K)

    def _interarrivals(self, size):
        return np.ascontiguousarray(self.config.interarrival.sample(self.rng_ia, size) / self.lam)

    def _first_arrival(self, age, rng):
        if age == 0:
            xi = self.iabuf[0]
            self.istate[_backend.get("python").I_IAPOS] = 1
            return xi
        # residual of an interarrival conditioned to exceed the current age
        for _ in range(10**6):
            xi = float(self.config.interarrival.sample(rng, 1)[0]) / self.lam
            if xi > age:
                return xi - age
        raise ConfigError("initial age too large for the interarrival law")

    @property
    def t(self) -> float:
        return float(self.dstate[0])

    def _refill(self):
        k = _backend.get("python")
        up, ip = int(self.istate[k.I_UPOS]), int(self.istate[k.I_IAPOS])
        # only the exhausted buffer is topped up, so neither grows without bound
        if len(self.ubuf) - up < 4:
            self.ubuf = np.concatenate([self.ubuf[up:], self.rng_u.random(self.buffer)])
            self.istate[k.I_UPOS] = 0
        if len(self.iabuf) - ip < 1:
            self.iabuf = np.concatenate([self.iabuf[ip:], self._interarrivals(self.buffer)])
            self.istate[k.I_IAPOS] = 0

    def run_until(self, t_end: float, record_times=None) -> Snapshots:
        """Advance to ``t_end`` and return snapshots at ``record_times``
        (sorted, inside ``(t, t_end]``; right-continuous)."""
        k = _backend.get("python")
        rec = np.ascontiguousarray(np.asarray([] if record_times is None else record_times, float))
        if rec.size and (np.any(np.diff(rec) < 0) or rec[0] < self.t or rec[-1] > t_end):
            raise ValueError("record times must be sorted inside [t, t_end]")
        out = np.zeros((rec.size, self.layout.width))
        self.istate[k.I_REC] = 0
        while True:
            status = self.kern.des_run(float(t_end), int(self.config.n), float(self.config.alpha), self.nu,
                                       self.rcdf, self.icdf, self.ubuf, self.iabuf, rec, out, self.dstate,
                                       self.istate, self.Z, self.Bj, self.C, self.routes, self.T,
                                       self.log_buf, int(self.log_events))
            if status == k.DONE:
                break
            if status == k.NEED_RANDOM:
                self._refill()
            elif status == k.LOG_FULL:
                self._drain_log()
        if self.log_events:
            self._drain_log()
        return Snapshots(out, self.K)

    def _drain_log(self):
        k = _backend.get("python")
        m = int(self.istate[k.I_LOG])
        if m:
            self.log_parts.append(self.log_buf[:m].copy())
        self.istate[k.I_LOG] = 0

    def event_log(self) -> np.ndarray:
        """Rows ``(t, event_type, N, Z1..ZK)``; types index :data:`EVENT_NAMES`."""
        if not self.log_parts:
            return np.zeros((0, 3 + self.K))
        return np.vstack(self.log_parts)

    def counters(self) -> dict:
        k = _backend.get("python")
        return {
            "t": self.t,
            "N": int(self.istate[k.I_N]),
            "queue": int(self.istate[k.I_Q]),
            "Z": self.Z.copy(),
            "arrivals": int(self.istate[k.I_ARR]),
            "abandons": int(self.istate[k.I_ABD]),
            "departures": int(self.istate[k.I_DEP]),
            "B": int(self.istate[k.I_B]),
            "Bj": self.Bj.copy(),
            "C": self.C.copy(),
            "routes": self.routes.copy(),
            "T": self.T.copy(),
            "intQ": float(self.dstate[k.D_INTQ]),
        }


@dataclass
class SimResult:
    config: SystemConfig
    snapshots: Snapshots
    initial: InitialState
    final: dict
    events: np.ndarray | None = None


def simulate(config: SystemConfig, t_end: float, seed: int = 0, record=None, initial: InitialState | None = None,
             log_events: bool = False, backend: str | None = None) -> SimResult:
    """Run one path on ``[0, t_end]``.

    ``record`` is either an array of epochs or a step ``dt`` (epochs
    ``0, dt, ..., t_end``); the snapshot at 0 is the initial state.
    """
    sim = Simulator(config, seed, initial, backend=backend, log_events=log_events)
    if record is None:
        times = np.array([0.0, t_end])
    elif np.ndim(record) == 0:
        times = ps.Grid(t_end, float(record)).times
    else:
        times = np.asarray(record, float)
    snaps = sim.run_until(t_end, times)
    return SimResult(config, snaps, initial or InitialState(), sim.counters(),
                     sim.event_log() if log_events else None)


def scaled_state(snaps: Snapshots, config: SystemConfig):
    """``(a, x, z) = (A, N - n, Z - n gamma) / sqrt n``."""
    n = config.n
    rn = np.sqrt(n)
    gamma = config.derived.gamma
    a = snaps.col("A") / rn
    x = (snaps.col("N") - n) / rn
    z = (snaps.col("Z") - n * gamma) / rn
    # restore e'z + x^- = 0 exactly (n gamma sums to n only up to round-off)
    z = z - ((z.sum(axis=1) + np.maximum(-x, 0.0)) / config.K)[:, None]
    return a, x, z


# ----------------------------------------------------------------------------
# birth-death oracle for K = 1 with Poisson arrivals


def _death(j, n, mu, alpha):
    j = np.asarray(j, float)
    return np.minimum(j, n) * mu + np.maximum(j - n, 0.0) * alpha


def mm_n_m_oracle(n: int, lam: float, mu: float, alpha: float, truncation: int | None = None,
                  tail_tol: float = 1e-12, max_states: int = 10**7) -> np.ndarray:
    """Stationary law of the birth-death chain with birth rate ``lam`` and
    death rate ``min(j, n) mu + (j - n)^+ alpha``, computed in log space and
    truncated where the remaining tail mass is below ``tail_tol``."""
    if lam < 0 or mu <= 0 or alpha < 0:
        raise ValueError("rates must be positive")
    if lam == 0:
        return np.array([1.0])
    if alpha == 0 and lam >= n * mu:
        raise ValueError("unstable without abandonment")
    J = truncation or max(2 * n + 64, int(4 * lam / max(mu, 1e-300)) + 64)
    while True:
        j = np.arange(1, J + 1)
        logp = np.concatenate([[0.0], np.cumsum(np.log(lam) - np.log(_death(j, n, mu, alpha)))])
        logp -= logp.max()
        p = np.exp(logp)
        p /= p.sum()
        # tail beyond J is dominated by a geometric series with ratio lam/d_J
        ratio = lam / float(_death(J + 1, n, mu, alpha))
        tail = p[-1] * ratio / (1 - ratio) if ratio < 1 else np.inf
        if tail < tail_tol:
            return p
        if J >= max_states:
            raise ValueError("truncation limit reached")
        J = min(2 * J, max_states)


def mm_n_m_oracle_recursive(n: int, lam: float, mu: float, alpha: float, J: int) -> np.ndarray:
    """Second implementation: detailed balance ``pi_{j} d_j = pi_{j-1} lam``
    with running rescaling, on states ``0..J``."""
    p = np.empty(J + 1)
    p[0] = 1.0
    scale = 0.0
    for j in range(1, J + 1):
        d = min(j, n) * mu + max(j - n, 0) * alpha
        p[j] = p[j - 1] * lam / d
        if p[j] > 1e250:
            p[: j + 1] *= 1e-250
            scale += 250
    return p / p.sum()


def oracle_scaled_moments(p: np.ndarray, n: int) -> dict:
    j = np.arange(len(p))
    x = (j - n) / np.sqrt(n)
    return {"mean_x": float(p @ x), "mean_x_plus": float(p @ np.maximum(x, 0)),
            "mean_x_minus": float(p @ np.maximum(-x, 0))}


# ----------------------------------------------------------------------------
# stationary estimation


def estimate_stationary(config: SystemConfig, burn_in: float | None = None, n_samples: int = 10**5,
                        spacing: float | None = None, seed: int = 0, chunk: int = 10**5,
                        max_extensions: int = 2, backend: str | None = None,
                        return_counts: bool = False):
    """Sample the scaled state at ``burn_in + i * spacing``.

    Defaults: ``spacing`` 10 and ``burn_in`` 100 relaxation times. If the
    lag-1 correlation of batch means exceeds 0.5 the run is extended (up to
    ``max_extensions`` doublings) with a warning.
    """
    tau = config.relaxation_time()
    spacing = 10.0 * tau if spacing is None else spacing
    burn_in = 100.0 * tau if burn_in is None else burn_in
    if not (burn_in > 0 and spacing > 0):
        raise ValueError("burn_in and spacing must be positive")
    sim = Simulator(config, seed, backend=backend)
    sim.run_until(burn_in)
    parts_N, parts_Z, parts_A = [], [], []
    total = 0
    target = n_samples
    extensions = 0
    t0 = burn_in
    while True:
        while total < target:
            m = min(chunk, target - total)
            times = t0 + spacing * np.arange(total, total + m)
            sn = sim.run_until(times[-1], times)
            parts_N.append(sn.col("N").astype(np.int64))
            parts_Z.append(sn.col("Z").astype(np.int64))
            parts_A.append(sn.col("A"))
            total += m
        N = np.concatenate(parts_N)
        rn = np.sqrt(config.n)
        x = (N - config.n) / rn
        _, _, r1 = batch_means(np.maximum(x, 0.0))
        _, _, r2 = batch_means(np.maximum(-x, 0.0))
        if max(r1, r2) <= 0.5 or extensions >= max_extensions:
            if max(r1, r2) > 0.5:
                log.warning("batch means still correlated (lag-1 %.2f) after %d extensions",
                            max(r1, r2), extensions)
            break
        log.warning("batch means correlated (lag-1 %.2f); extending run", max(r1, r2))
        target *= 2
        extensions += 1
    Z = np.concatenate(parts_Z)
    A = np.concatenate(parts_A)
    gamma = config.derived.gamma
    z = (Z - config.n * gamma) / rn
    z = z - ((z.sum(axis=1) + np.maximum(-x, 0.0)) / config.K)[:, None]
    mp, sp, _ = batch_means(np.maximum(x, 0.0))
    mm, sm, _ = batch_means(np.maximum(-x, 0.0))
    meta = {"n": config.n, "seed": seed, "burn_in": burn_in, "spacing": spacing, "samples": int(len(x)),
            "mean_x_plus": mp, "se_x_plus": sp, "mean_x_minus": mm, "se_x_minus": sm,
            "extensions": extensions}
    dist = EmpiricalDist(x, z, a=A / rn, meta=meta)
    if return_counts:
        return dist, N
    return dist


# ----------------------------------------------------------------------------
# diffusion-scaled components


def extract_components(res: SimResult, dt: float | None = None, check: bool = True) -> dict:
    """Rebuild the scaled primitive components from a recorded path.

    The path must have been recorded on a uniform grid starting at 0.
    With ``R = (I - P')diag(nu)`` and ``W = (I - p e')R``:

    * ``E~ = (E - lambda t)/sqrt n``
    * ``S~_k = (C_k - nu_k T_k)/sqrt n`` (``T_k`` busy time in phase ``k``)
    * ``Phi~^k = (routes_k - p^k C_k)/sqrt n`` (K-vector part)
    * ``M~ = sum_k Phi~^k - (I - P') S~``
    * ``G~ = (abandonments - alpha int (N - n)^+)/sqrt n``
    * ``Phi~0 = (B_j - p_j B)/sqrt n``
    * ``U~ = X~(0) - mu beta t + E~ + e'M~ - G~``
    * ``V~ = (I - p e') Z~(0) + Phi~0 + (I - p e') M~``

    and ``(X~, Z~)`` then solves the integral equations driven by
    ``(U~, V~)``. With ``check`` the numerical map applied to ``(U~, V~)``
    must reproduce ``(X~, Z~)`` within ``10 dt (1 + magnitude)``.
    """
    cfg = res.config
    sn = res.snapshots
    t = sn.col("t")
    if dt is None:
        dt = float(t[1] - t[0])
    if abs(t[0]) > 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-9 * max(1.0, t[-1]):
        raise ValueError("path must be recorded on a uniform grid from 0")
    n, K = cfg.n, cfg.K
    rn = np.sqrt(n)
    d = cfg.derived
    prm = cfg.service
    mu, beta, alpha, lam = d.mu, cfg.beta, cfg.alpha, cfg.lambda_n
    P = prm.P
    _, X, Zs = scaled_state(sn, cfg)
    E = sn.col("arrivals")
    C = sn.col("C")
    T = sn.col("T")
    routes = sn.col("routes")[:, :, :K]
    E_t = (E - lam * t) / rn
    S_t = (C - T * prm.nu) / rn
    Phi_k = (routes - C[:, :, None] * P[None, :, :]) / rn  # (m, k, j)
    Phi_sum = Phi_k.sum(axis=1)
    ImPt = np.eye(K) - P.T
    M_t = Phi_sum - S_t @ ImPt.T
    G_t = (sn.col("abandons") - alpha * sn.col("intQ")) / rn
    B = sn.col("B")
    Phi0 = (sn.col("Bj") - np.outer(B, prm.p)) / rn
    Ipe = np.eye(K) - np.outer(prm.p, np.ones(K))
    U = X[0] - mu * beta * t + E_t + M_t.sum(axis=1) - G_t
    V = (Zs[0] @ Ipe.T)[None, :] + Phi0 + M_t @ Ipe.T
    out = {
        "t": t, "X": X, "Z": Zs, "E": E_t, "S": S_t, "Phi": Phi_k, "M": M_t, "G": G_t, "Phi0": Phi0,
        "U": U, "V": V,
    }
    grid = ps.Grid(float(t[-1]), dt)
    inp = ps.InputPath(U, V)
    path = ps.psi(inp, alpha, d.R, prm.p, grid, check=False)
    err = float(max(np.abs(path.x - X).max(), np.abs(path.z - Zs).max()))
    mag = float(max(np.abs(X).max(), np.abs(Zs).max(), np.abs(U).max(), np.abs(V).max()))
    bound = 10.0 * dt * (1.0 + mag)
    out.update({"psi_x": path.x, "psi_z": path.z, "identity_residual": err, "identity_bound": bound,
                "magnitude": mag})
    if check and err > bound:
        raise ReconstructionError(f"identity residual {err:.3g} exceeds {bound:.3g}")
    return out


def increment_covariance(comp: dict, lag: int = 1) -> np.ndarray:
    """Empirical covariance rate of increments of ``(U~, V~)`` over ``lag``
    grid steps; returns the ``(K+1) x (K+1)`` matrix."""
    t = comp["t"]
    h = float(t[lag] - t[0])
    Y = np.column_stack([comp["U"], comp["V"]])[::lag]
    dY = np.diff(Y, axis=0)
    return np.cov(dY, rowvar=False).reshape(Y.shape[1], Y.shape[1]) / h


# ----------------------------------------------------------------------------
# CSV


def write_event_log_csv(path, events: np.ndarray, K: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "event_type", "N"] + [f"Z{k + 1}" for k in range(K)])
        for row in events:
            w.writerow([repr(float(row[0])), EVENT_NAMES[int(row[1])]] + [int(v) for v in row[2:]])


def write_samples_csv(path, dist: EmpiricalDist, with_age: bool = True) -> None:
    K = dist.K
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = (["a"] if with_age and dist.a is not None else []) + ["x"] + [f"z{k + 1}" for k in range(K)]
        w.writerow(head)
        for i in range(len(dist)):
            row = ([dist.a[i]] if with_age and dist.a is not None else []) + [dist.x[i]] + list(dist.z[i])
            w.writerow([repr(float(v)) for v in row])
