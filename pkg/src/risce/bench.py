"""Monte-Carlo harness: metrics, single trials, and experiment sweeps.

A trial is fully determined by (config, SNR, solver, seed): the seed drives
the channel draw, the pilot draw, the noise draw, and any solver randomness,
in that order. Sweeps derive per-trial seeds as seed_base + trial index, so
a plan is reproducible byte-for-byte regardless of worker count.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace, field
import csv
import time

import numpy as np

from . import crb, decomp, extract, scenario, txrx

__all__ = ["ExperimentPlan", "TrialReport", "SOLVERS", "mse", "nmse",
           "wrap_angle", "nmse_from_params", "run_trial", "sweep",
           "write_csv", "crb_experiment"]

SOLVERS = ("dlr4dtd", "fourd_stdce", "cp_als")

MSE_GROUPS = ("phi_br", "theta_rm", "theta_br", "phi_rm", "tau", "f_d", "rho")
ANGULAR_GROUPS = ("phi_br", "theta_rm", "theta_br", "phi_rm")


@dataclass(frozen=True)
class ExperimentPlan:
    """One sweep: an axis (snr_db or velocity_kmh), points, and trial counts."""

    cfg: scenario.SystemConfig
    axis: str
    values: tuple
    trials: int
    seed: int
    solvers: tuple = ("dlr4dtd",)
    snr_db: float = 20.0          # fixed SNR for velocity sweeps
    grid: extract.SearchGrid = field(default_factory=extract.SearchGrid)
    with_crb: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.axis not in ("snr_db", "velocity_kmh"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial per point")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValueError(f"unknown solvers {sorted(unknown)}")


@dataclass(frozen=True)
class TrialReport:
    """Everything one Monte-Carlo trial produced."""

    solver: str
    seed: int
    snr_db: float
    mse: dict
    nmse: float
    crb: dict
    iterations: int
    converged: bool
    wall_time_s: float
    flag: str = None


def wrap_angle(d):
    """Wrap angle differences to (-pi, pi]."""
    return np.mod(np.asarray(d) + np.pi, -2 * np.pi) + np.pi


def mse(truth, est, angular=False):
    """Per-parameter mean squared error (1/L)||x - x_est||^2; angle
    differences are wrapped to (-pi, pi] first."""
    truth = np.atleast_1d(np.asarray(truth))
    est = np.atleast_1d(np.asarray(est))
    if truth.shape != est.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {est.shape}")
    diff = wrap_angle(truth - est) if angular else truth - est
    return float(np.mean(np.abs(diff) ** 2))


def nmse(truth_channels, est_channels):
    """Mean over slices of ||H - H_est||_F^2 / ||H||_F^2."""
    ratios = []
    for h, h_est in zip(truth_channels, est_channels, strict=True):
        if h.shape != h_est.shape:
            raise ValueError(f"shape mismatch: {h.shape} vs {h_est.shape}")
        ratios.append(np.linalg.norm(h - h_est) ** 2 / np.linalg.norm(h) ** 2)
    return float(np.mean(ratios))


def nmse_from_params(re, est, cfg, geom=None, subcarriers="pilot"):
    """Cascade-channel NMSE of estimated parameters against the truth.

    Averages the per-(k, m) slice ratios over all M slots and either the K
    pilot subcarriers (what the estimator observes; default) or all N
    subcarriers (the estimated parameters extrapolate across the band).
    """
    if geom is None:
        geom = scenario.RisGeometry.from_config(cfg)
    if subcarriers == "pilot":
        k_values = range(1, cfg.n_pilots + 1)
    elif subcarriers == "all":
        k_values = range(1, cfg.n_subcarriers + 1)
    else:
        raise ValueError(f"unknown subcarrier selection {subcarriers!r}")
    total = 0.0
    count = 0
    for k in k_values:
        for m in range(1, cfg.n_slots + 1):
            h = scenario.cascade_channel_from_params(
                cfg, geom, k, m, re.phi_br, re.theta_rm, re.theta_br,
                re.phi_rm, re.tau, re.f_d, re.rho)
            h_est = scenario.cascade_channel_from_params(
                cfg, geom, k, m, est.phi_br, est.theta_rm, est.theta_br,
                est.phi_rm, est.tau, est.f_d, est.rho)
            total += np.linalg.norm(h - h_est) ** 2 / np.linalg.norm(h) ** 2
            count += 1
    return total / count


def _solve(solver, y, cfg, rng):
    if solver == "dlr4dtd":
        factors, state = decomp.dlr4dtd(y, cfg.n_paths)
        return factors, state.iterations, state.converged
    if solver == "fourd_stdce":
        return decomp.fourd_stdce(y, cfg.n_paths), 1, True
    if solver == "cp_als":
        return decomp.cp_als(y, cfg.n_paths, rng=rng), 1, True
    raise ValueError(f"unknown solver {solver!r}")


def run_trial(cfg, snr_db, solver, seed, grid=None, with_crb=True):
    """One full pipeline run: draw, synthesize, solve, extract, score."""
    grid = grid or extract.SearchGrid()
    rng = np.random.default_rng(seed)
    re = scenario.gen_realization(cfg, rng)
    pb = txrx.gen_pilot_block(cfg, rng)
    z = txrx.build_noiseless(re, pb, cfg)
    obs = txrx.add_noise(z, pb, snr_db, rng)

    t0 = time.perf_counter()
    try:
        factors, iterations, converged = _solve(solver, obs.y, cfg, rng)
        est = extract.estimate_channel_params(obs.y, factors, pb, cfg, grid)
    except (decomp.DecompositionError, decomp.DivergenceError,
            extract.GainSolveError, np.linalg.LinAlgError) as err:
        wall = time.perf_counter() - t0
        nan_mse = {name: float("nan") for name in MSE_GROUPS}
        return TrialReport(solver=solver, seed=seed, snr_db=snr_db, mse=nan_mse,
                           nmse=float("nan"), crb={}, iterations=0, converged=False,
                           wall_time_s=wall, flag=f"{type(err).__name__}: {err}")
    est = est.permuted(extract.match_paths(re, est))
    wall = time.perf_counter() - t0

    errors = {
        "phi_br": mse(re.phi_br, est.phi_br, angular=True),
        "theta_rm": mse(re.theta_rm, est.theta_rm, angular=True),
        "theta_br": mse(re.theta_br, est.theta_br, angular=True),
        "phi_rm": mse(re.phi_rm, est.phi_rm, angular=True),
        "tau": mse(re.tau, est.tau),
        "f_d": mse(re.f_d, est.f_d),
        "rho": mse(re.rho, est.rho),
    }
    bounds = {}
    if with_crb and obs.sigma > 0:
        report = crb.crb_diag(crb.FimContext(re=re, pb=pb, cfg=cfg, sigma=obs.sigma))
        bounds = report.by_group()
    return TrialReport(solver=solver, seed=seed, snr_db=snr_db, mse=errors,
                       nmse=nmse_from_params(re, est, cfg), crb=bounds,
                       iterations=iterations, converged=converged, wall_time_s=wall)


def _trial_for_point(args):
    cfg, snr_db, solver, seed, grid, with_crb = args
    return run_trial(cfg, snr_db, solver, seed, grid, with_crb)


def _point_config(plan, value):
    if plan.axis == "snr_db":
        return plan.cfg, float(value)
    return replace(plan.cfg, speed=float(value) / 3.6), plan.snr_db


def sweep(plan, out_path=None):
    """Run the plan and return aggregated rows (optionally writing CSV).

    One row per (axis value, solver, metric) with the mean and standard error
    over trials; flagged (diverged) trials are excluded from the averages and
    counted in the `flagged` metric.
    """
    tasks = []
    for value in plan.values:
        cfg, snr_db = _point_config(plan, value)
        for solver in plan.solvers:
            for t in range(plan.trials):
                tasks.append((cfg, snr_db, solver, plan.seed + t, plan.grid,
                              plan.with_crb))
    if plan.jobs > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            reports = list(pool.map(_trial_for_point, tasks, chunksize=1))
    else:
        reports = [_trial_for_point(t) for t in tasks]

    rows = []
    idx = 0
    for value in plan.values:
        for solver in plan.solvers:
            batch = reports[idx:idx + plan.trials]
            idx += plan.trials
            rows.extend(_aggregate_rows(value, solver, batch))
    if out_path is not None:
        write_csv(rows, plan.axis, out_path)
    return rows


def _mean_stderr(values):
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), stderr


def _aggregate_rows(value, solver, reports):
    metrics = {}
    for name in MSE_GROUPS:
        metrics[f"mse_{name}"] = [r.mse[name] for r in reports]
    metrics["nmse"] = [r.nmse for r in reports]
    crb_names = sorted({k for r in reports for k in r.crb})
    for name in crb_names:
        metrics[f"crb_{name}"] = [r.crb[name] for r in reports if name in r.crb]
    # wall time stays on the TrialReport only: rows must be byte-reproducible
    metrics["iterations"] = [float(r.iterations) for r in reports if r.flag is None]
    metrics["flagged"] = [1.0 if r.flag else 0.0 for r in reports]
    rows = []
    for name, values in metrics.items():
        mean, stderr = _mean_stderr(values)
        rows.append({"value": value, "solver": solver, "metric": name,
                     "mean": mean, "stderr": stderr, "trials": len(reports)})
    return rows


def write_csv(rows, axis, path_or_buf):
    """Emit sweep rows with a header; floats use shortest round-trip decimals."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh)
        writer.writerow([axis, "solver", "metric", "mean", "stderr", "trials"])
        for row in rows:
            writer.writerow([repr(float(row["value"])), row["solver"], row["metric"],
                             repr(float(row["mean"])), repr(float(row["stderr"])),
                             row["trials"]])
    finally:
        if own:
            fh.close()


def crb_experiment(cfg, snr_db, trials, seed, solver="dlr4dtd", grid=None):
    """Estimator spread around one fixed realization versus its CRB.

    Freezes the channel and pilots at `seed`, redraws only the noise across
    trials, and returns (labels, per-entry MSE, per-entry CRB). This is the
    bound-tightness experiment: an (asymptotically) unbiased estimator's MSE
    cannot sit below the bound.
    """
    grid = grid or extract.SearchGrid()
    rng = np.random.default_rng(seed)
    re = scenario.gen_realization(cfg, rng)
    pb = txrx.gen_pilot_block(cfg, rng)
    z = txrx.build_noiseless(re, pb, cfg)

    labels = crb.param_labels(cfg.n_paths)
    sq_errors = np.zeros((trials, len(labels)))
    sigma = None
    for t in range(trials):
        obs = txrx.add_noise(z, pb, snr_db, np.random.default_rng(seed + 1 + t))
        sigma = obs.sigma
        factors, _, _ = _solve(solver, obs.y, cfg, np.random.default_rng(seed + 1 + t))
        est = extract.estimate_channel_params(obs.y, factors, pb, cfg, grid)
        est = est.permuted(extract.match_paths(re, est))
        errs = ([wrap_angle(est.phi_br - re.phi_br) ** 2]
                + list(wrap_angle(est.theta_rm - re.theta_rm) ** 2)
                + [wrap_angle(est.theta_br - re.theta_br) ** 2]
                + list(wrap_angle(est.phi_rm - re.phi_rm) ** 2)
                + list((est.tau - re.tau) ** 2)
                + list((est.f_d - re.f_d) ** 2)
                + list(np.abs(est.rho - re.rho) ** 2))
        sq_errors[t] = errs
    report = crb.crb_diag(crb.FimContext(re=re, pb=pb, cfg=cfg, sigma=sigma))
    return labels, sq_errors.mean(axis=0), report.bounds
