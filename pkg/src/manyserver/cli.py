"""Command-line driver: ``manyserver <subcommand> --config cfg.json``.

Exit codes: 0 pass, 1 property failure, 2 usage or configuration error.
Every run writes ``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _backend
from . import cqlf as cq
from . import des
from . import diffusion as df
from . import fluid as fl
from . import harris as hr
from . import lyapunov as ly
from . import phasetype as pt
from . import psi as ps
from . import stats
from .arrivals import DistributionError, InterarrivalDist

log = logging.getLogger("manyserver")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CONFIG_KEYS = ("scenario", "phase_type", "interarrival", "alpha", "beta", "n_list", "horizons",
               "burn_in", "spacing", "seeds", "dt", "output_dir")
HORIZON_DEFAULTS = {
    "samples": 10**5,           # stationary samples per n (queue) and for the limit process
    "fluid_t_end": 5.0,         # length of fluid trajectories for the monotonicity check
    "fluid_count": 100,         # fluid trajectories per check
    "drift_t0": 1.0,            # time step of the drift inequalities
    "drift_reps": 200,          # replications per start in the expected-drift check
    "covariance_t_end": 40000.0,  # path length for the empirical input covariance
}


class ConfigError(ValueError):
    pass


class PropertyFailure(RuntimeError):
    """A checked property failed; the message names the invariant."""


@dataclass
class ExperimentConfig:
    scenario: str
    phase_type: pt.PhaseTypeParams
    interarrival: InterarrivalDist
    alpha: float
    beta: float
    n_list: list
    horizons: dict
    burn_in: float | None
    spacing: float | None
    seeds: list
    dt: float | None
    output_dir: str
    raw: dict = field(default_factory=dict, repr=False)

    def system(self, n: int) -> des.SystemConfig:
        return des.SystemConfig(n, self.beta, self.interarrival, self.phase_type, self.alpha)

    @property
    def derived(self):
        return pt.derive(self.phase_type)

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _number(raw, key, positive=False, allow_none=False):
    v = raw.get(key)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(f"{key}: expected a finite number")
    if positive and not v > 0:
        raise ConfigError(f"{key}: must be positive")
    return float(v)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON config; raises :class:`ConfigError` on the
    first violation."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    for key in ("scenario", "phase_type", "alpha", "beta", "n_list", "seeds"):
        if key not in raw:
            raise ConfigError(f"missing key {key!r}")
    if not isinstance(raw["scenario"], str) or not raw["scenario"]:
        raise ConfigError("scenario: expected a non-empty string")
    try:
        ph = raw["phase_type"]
        if not isinstance(ph, dict) or set(ph) != {"p", "nu", "P"}:
            raise ConfigError("phase_type: expected keys p, nu, P")
        params = pt.PhaseTypeParams.from_dict(ph)
        pt.validate(params)
    except pt.ParameterError as exc:
        raise ConfigError(f"phase_type: {exc}") from None
    try:
        ia = InterarrivalDist.from_spec(raw.get("interarrival", "exponential"))
    except (DistributionError, KeyError, TypeError) as exc:
        raise ConfigError(f"interarrival: {exc}") from None
    alpha = _number(raw, "alpha", positive=True)
    beta = _number(raw, "beta")
    n_list = raw["n_list"]
    if (not isinstance(n_list, list) or not n_list
            or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in n_list)):
        raise ConfigError("n_list: expected a non-empty list of positive integers")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list: must be strictly increasing")
    if beta >= np.sqrt(n_list[0]):
        raise ConfigError("beta: must be below sqrt(n) for every n")
    seeds = raw["seeds"]
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
        raise ConfigError("seeds: expected a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: must be distinct")
    hz = raw.get("horizons", {})
    if not isinstance(hz, dict):
        raise ConfigError("horizons: expected an object")
    bad = sorted(set(hz) - set(HORIZON_DEFAULTS))
    if bad:
        raise ConfigError(f"horizons: unknown key {bad[0]!r}")
    horizons = dict(HORIZON_DEFAULTS)
    for k, v in hz.items():
        horizons[k] = _number(hz, k, positive=True)
    for k in ("samples", "fluid_count", "drift_reps"):
        if horizons[k] != int(horizons[k]):
            raise ConfigError(f"horizons.{k}: expected an integer")
        horizons[k] = int(horizons[k])
    burn_in = _number(raw, "burn_in", positive=True, allow_none=True)
    spacing = _number(raw, "spacing", positive=True, allow_none=True)
    dt = _number(raw, "dt", positive=True, allow_none=True)
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return ExperimentConfig(raw["scenario"], params, ia, alpha, beta, list(n_list), horizons, burn_in, spacing,
                            list(seeds), dt, out, raw=raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    return parse_config(raw)


# ----------------------------------------------------------------------------
# manifest and output helpers


def tolerances() -> dict:
    """Every numeric tolerance that decides pass or fail."""
    return {
        "cqlf_psd_tol": cq.PSD_TOL,
        "manifold_tol": ly.MANIFOLD_TOL,
        "psi_input_tol": ps.INPUT_TOL,
        "psi_residual_factor": 10.0,
        "fluid_monotone_tol": fl.MONOTONE_TOL,
        "fluid_drift_c_rel": 0.01,
        "covariance_psd_tol": df.PSD_TOL,
        "covariance_cross_tol": df.CROSS_TOL,
        "cholesky_jitter": df.CHOL_JITTER,
        "harris_survival_floor": hr.SURVIVAL_FLOOR,
        "harris_range_survival": hr.RANGE_SURVIVAL,
        "harris_quad_tol": hr.QUAD_TOL,
        "batch_lag1_max": 0.5,
        "tail_reference": 0.01,
        "tail_bound_factor": 5.0,
        "ks_monotone_se": 2.0,
    }


def job_seed(base: int, *keys: int) -> int:
    """Independent 63-bit seed for the job labelled ``keys``."""
    return int(np.random.SeedSequence([base, *keys]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_manifest(out_dir, cfg: ExperimentConfig, command: str, seeds: dict, seed_offset: int) -> None:
    import scipy

    write_json(os.path.join(out_dir, "manifest.json"), {
        "command": command,
        "scenario": cfg.scenario,
        "config_sha256": cfg.digest(),
        "config": cfg.raw,
        "seed_offset": seed_offset,
        "seeds": seeds,
        "versions": {"manyserver": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "kernels": _backend.NAME},
        "tolerances": tolerances(),
    })


def emit_plot_data(report: dict | None, out_dir, trajectories=None) -> list:
    """Gnuplot-ready files: ``distances.dat`` (one row per ``n``),
    ``tails.dat`` (one row per ``s``) and ``g_fluid.dat`` (``g`` along fluid
    trajectories). Returns the paths written."""
    paths = []

    def emit(name, header, rows):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# " + " ".join(header) + "\n")
            for row in rows:
                vals = [float(v) for v in row]
                if not all(np.isfinite(vals)):
                    raise ValueError(f"non-finite value in {name}")
                fh.write(" ".join(repr(v) for v in vals) + "\n")
        paths.append(path)

    if report is not None:
        keys = ("ks_x", "ks_x_se", "w1_x", "ks_g", "w1_g", "tail_at_ref")
        emit("distances.dat", ("n",) + keys, [[r["n"]] + [r[k] for k in keys] for r in report["rows"]])
        ns = [r["n"] for r in report["rows"]]
        emit("tails.dat", ["s"] + [f"tail_n{n}" for n in ns],
             [[s] + [r["tails"][i] for r in report["rows"]] for i, s in enumerate(report["s_grid"])])
    if trajectories:
        t = trajectories[0].times
        emit("g_fluid.dat", ["t"] + [f"g{i + 1}" for i in range(len(trajectories))],
             np.column_stack([t] + [tr.g for tr in trajectories]))
    return paths


# ----------------------------------------------------------------------------
# shared pieces


def lyapunov_fn(cfg: ExperimentConfig, seed: int = 0):
    d = cfg.derived
    res = cq.build(d.R, cfg.phase_type.p, d.gamma, cfg.alpha, d.mu, seed=seed)
    return res, ly.LyapunovFn.from_service(d, cfg.phase_type, res, cfg.beta, cfg.alpha)


def _des_job(args):
    cfg_raw, n, seed, burn_in, spacing, samples = args
    cfg = parse_config(cfg_raw)
    dist = des.estimate_stationary(cfg.system(n), burn_in=burn_in, n_samples=samples, spacing=spacing, seed=seed)
    return n, dist


def _map(fn, jobs, n_jobs):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def des_stationary(cfg: ExperimentConfig, seed: int, n_jobs: int):
    jobs = [(cfg.raw, n, job_seed(seed, n), cfg.burn_in, cfg.spacing, cfg.horizons["samples"])
            for n in cfg.n_list]
    results = dict(_map(_des_job, jobs, n_jobs))
    return results, {str(n): j[2] for n, j in zip(cfg.n_list, jobs)}


def pou_stationary(cfg: ExperimentConfig, coeffs, seed: int):
    d = cfg.derived
    dt = cfg.dt or df.STATIONARY_DT
    return df.estimate_stationary_pou(coeffs, cfg.beta, d.mu, cfg.alpha, d.R, cfg.phase_type.p,
                                      burn_in=cfg.burn_in, n_samples=cfg.horizons["samples"],
                                      spacing=cfg.spacing, dt=dt, seed=seed)


def write_csv_rows(path, header, rows):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# ----------------------------------------------------------------------------
# subcommands; each returns (summary, seeds used)


def cmd_cqlf(cfg, out, seed, n_jobs):
    res = cq.build(cfg.derived.R, cfg.phase_type.p, cfg.derived.gamma, cfg.alpha, cfg.derived.mu, seed=seed)
    doc = {"Q": res.Q, "b": res.b, "kappa": res.kappa, "certificates": res.cert}
    write_json(os.path.join(out, "cqlf.json"), doc)
    print(json.dumps(_plain(doc), sort_keys=True))
    return doc, {"cqlf": seed}


def cmd_fluid(cfg, out, seed, n_jobs):
    _, fn = lyapunov_fn(cfg, seed)
    hz = cfg.horizons
    try:
        mono = fl.check_g_monotone(fn, count=hz["fluid_count"], t_end=hz["fluid_t_end"], dt=cfg.dt, seed=seed)
        c_hat, C_hat, M = fl.check_geometric_band(fn, count=hz["fluid_count"], dt=cfg.dt, seed=seed + 1)
        C_drift, eps = fl.check_fluid_drift_inequality(fn, t0=hz["drift_t0"], dt=cfg.dt, seed=seed + 2)
    except fl.PropertyFailure as exc:
        raise PropertyFailure(f"fluid drift: {exc}") from None
    rng = np.random.default_rng(seed + 3)
    xs, zs = ly.sample_radius(rng, fn.K, 5, 1.0, 10.0)
    trajs = [fl.integrate_fluid(fn, x, z, hz["fluid_t_end"], cfg.dt) for x, z in zip(xs, zs)]
    emit_plot_data(None, out, trajs)
    doc = {"monotonicity": mono, "band": {"c_hat": c_hat, "C_hat": C_hat, "M": M},
           "drift": {"C_hat": C_drift, "eps_hat": eps, "t0": hz["drift_t0"]}}
    write_json(os.path.join(out, "fluid.json"), doc)
    return doc, {"fluid": seed}


def cmd_simulate(cfg, out, seed, n_jobs):
    dists, seeds = des_stationary(cfg, seed, n_jobs)
    rows = []
    for n in cfg.n_list:
        d = dists[n]
        des.write_samples_csv(os.path.join(out, f"samples_n{n}.csv"), d)
        rows.append([n, d.meta["samples"], d.meta["mean_x_plus"], d.meta["se_x_plus"], d.meta["mean_x_minus"],
                     d.meta["se_x_minus"], d.meta["extensions"]])
    write_csv_rows(os.path.join(out, "stationary_summary.csv"),
                   ["n", "samples", "mean_x_plus", "se_x_plus", "mean_x_minus", "se_x_minus", "extensions"], rows)
    return {"n_list": cfg.n_list, "summary": rows}, seeds


def cmd_diffusion(cfg, out, seed, n_jobs):
    coeffs = df.derive_covariance(cfg.phase_type, cfg.interarrival.scv, cfg.alpha)
    n = cfg.n_list[-1]
    sysc = cfg.system(n)
    s_cov, s_pou = job_seed(seed, n, 1), job_seed(seed, 0, 2)
    x0, z0 = -cfg.beta, -cfg.beta * cfg.derived.gamma
    init = des.state_from_scaled(x0, z0, sysc)
    res = des.simulate(sysc, cfg.horizons["covariance_t_end"], seed=s_cov, record=1.0, initial=init)
    comp = des.extract_components(res)
    emp = des.increment_covariance(comp)
    used, rep = df.compare_covariance(coeffs, emp)
    dist = pou_stationary(cfg, used, s_pou)
    des.write_samples_csv(os.path.join(out, "pou_samples.csv"), dist, with_age=False)
    doc = {"derived": coeffs.to_dict(), "used": used.to_dict(), "empirical": emp, "comparison": rep,
           "n": n, "stationary": dist.meta}
    write_json(os.path.join(out, "diffusion.json"), doc)
    if rep["frobenius_rel"] > 0.1:
        raise PropertyFailure(f"covariance derivation: relative Frobenius error {rep['frobenius_rel']:.3f} > 0.1")
    return doc, {"covariance": s_cov, "pou": s_pou}


def cmd_interchange(cfg, out, seed, n_jobs):
    if len(cfg.n_list) < 3:
        raise ConfigError("n_list: interchange needs at least three values")
    _, fn = lyapunov_fn(cfg, seed)
    coeffs = df.derive_covariance(cfg.phase_type, cfg.interarrival.scv, cfg.alpha)
    dists, seeds = des_stationary(cfg, seed, n_jobs)
    s_pou = job_seed(seed, 0, 2)
    ref = pou_stationary(cfg, coeffs, s_pou)
    seeds["pou"] = s_pou
    density = None
    if cfg.phase_type.K == 1:
        density = df.pou_1d_density_oracle(cfg.beta, cfg.alpha, cfg.derived.mu, coeffs.var_u)
    report = stats.interchange_report(dists, ref, fn, reference_density=density)
    stats.write_report_csv(os.path.join(out, "interchange.csv"), report)
    stats.write_report_json(os.path.join(out, "interchange.json"), report,
                            {"reference": "density" if density is not None else "limit-process samples"})
    emit_plot_data(report, out)
    if not report["ks_monotone"]:
        raise PropertyFailure("interchange: KS distance is not non-increasing in n")
    if not report["tails_bounded"]:
        raise PropertyFailure("tightness: tail mass exceeds the bound")
    return report, seeds


def cmd_harris(cfg, out, seed, n_jobs):
    nu = cfg.phase_type.nu
    try:
        ps_ = hr.petite_set_constants(cfg.interarrival, cfg.alpha, nu, cfg.n_list[-1])
    except hr.AssumptionError as exc:
        raise PropertyFailure(f"harris assumptions: {exc}") from None
    worst, count = hr.verify_outside(cfg.interarrival, cfg.alpha, nu, ps_)
    doc = {"C1": ps_.C1, "C2": ps_.C2, "H": ps_.H, "B": ps_.describe(),
           "verification": {"max_bound_outside_B": worst, "points": count, "passed": bool(worst <= -1.0 + 1e-9)}}
    write_json(os.path.join(out, "harris.json"), doc)
    print(json.dumps(_plain(doc), sort_keys=True))
    if worst > -1.0 + 1e-9:
        raise PropertyFailure(f"generator bound: {worst:.4g} > -1 outside B")
    return doc, {}


COMMANDS = {
    "cqlf": cmd_cqlf,
    "fluid": cmd_fluid,
    "simulate": cmd_simulate,
    "diffusion": cmd_diffusion,
    "interchange": cmd_interchange,
    "harris-check": cmd_harris,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="manyserver", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed-offset", type=int, default=0, help="added to the first configured seed")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for per-n jobs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, config_path, out=None, seed_offset: int = 0, jobs: int = 1) -> int:
    try:
        cfg = load_config(config_path)
        if jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out_dir = out or cfg.output_dir
        os.makedirs(out_dir, exist_ok=True)
        seed = cfg.seeds[0] + seed_offset
        if seed < 0:
            raise ConfigError("seed offset makes the seed negative")
        _, seeds = COMMANDS[command](cfg, out_dir, seed, jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PropertyFailure as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        try:
            write_manifest(out_dir, cfg, command, {"base": seed}, seed_offset)
        except Exception:  # pragma: no cover - best effort
            pass
        return EXIT_FAIL
    except cq.CQLFError as exc:
        print(f"property failure: CQLF certification: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_manifest(out_dir, cfg, command, {"base": seed, **seeds}, seed_offset)
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.seed_offset, args.jobs)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
