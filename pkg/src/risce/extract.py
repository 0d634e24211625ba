"""Channel-parameter extraction from recovered CP factors.

Each factor column carries one parameter family: mode-0 columns the BS/MS
angles, mode-1 columns the two RIS angles (through the circular-array
harmonics), mode-2 columns the cascade delay, and the Doppler generators the
per-path frequency shifts. Gains are re-solved from the full tensor by least
squares, so factor scaling ambiguities never reach the reported parameters.
"""

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize, minimize_scalar
from scipy.special import jv

from . import scenario

__all__ = ["SearchGrid", "EstimatedParams", "GainSolveError", "nelder_mead",
           "estimate_bs_ms_angles", "estimate_ris_angles", "estimate_delay",
           "estimate_doppler", "estimate_gains", "match_paths",
           "estimate_channel_params", "circular_mean"]


class GainSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchGrid:
    """Search-stage settings: coarse grids only need to capture the right
    basin, the simplex refinement removes the grid bias."""

    coarse_step: float = math.radians(1.0)
    delay_grid: int = 4096
    refine_tol: float = 1e-9
    refine_max_iter: int = 400
    spectrum_cap: float = 1e12
    # The estimator's Jacobi-Anger model keeps ja_oversample times the
    # geometry's default harmonic count. The default order 2*ceil(2*pi*r/wl)
    # sits at the Bessel transition of the worst-case argument 4*pi*r/wl and
    # leaves model error far above the refinement accuracy; doubling it makes
    # the truncation error negligible.
    ja_oversample: int = 2

    def __post_init__(self):
        if self.coarse_step <= 0 or self.delay_grid < 2:
            raise ValueError("degenerate search grid")
        if self.refine_tol <= 0 or self.refine_max_iter < 1:
            raise ValueError("refinement settings must be positive")


@dataclass(frozen=True)
class EstimatedParams:
    """Estimated channel parameters; per-path arrays are factor-column ordered
    (a shared, unknown permutation of the true paths)."""

    phi_br: float
    theta_br: float
    phi_br_paths: np.ndarray
    theta_br_paths: np.ndarray
    theta_rm: np.ndarray
    phi_rm: np.ndarray
    tau: np.ndarray
    f_d: np.ndarray
    rho: np.ndarray

    def permuted(self, perm):
        """Reorder the per-path entries so index i matches truth path i."""
        return replace(self, phi_br_paths=self.phi_br_paths[perm],
                       theta_br_paths=self.theta_br_paths[perm],
                       theta_rm=self.theta_rm[perm], phi_rm=self.phi_rm[perm],
                       tau=self.tau[perm], f_d=self.f_d[perm], rho=self.rho[perm])


def circular_mean(angles):
    return float(np.angle(np.mean(np.exp(1j * np.asarray(angles)))))


def nelder_mead(f, x0, xatol=1e-9, max_iter=400):
    """Derivative-free simplex refinement; returns (x, f(x)) with
    f(x) <= f(x0).

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 0.5, 0.5); stops when the simplex diameter drops below `xatol`
    or after `max_iter` iterations (then the best vertex is returned).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    f0 = f(x0)
    if not np.isfinite(f0):
        raise ValueError("objective not finite at the start point")
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": float("inf"),
                            "maxiter": max_iter, "maxfev": 50 * max_iter})
    if res.fun <= f0:
        return res.x, float(res.fun)
    return x0, float(f0)


def _interior_grid(rng, step):
    lo, hi = rng
    n = max(int(math.floor((hi - lo) / step)), 1)
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def _in_range(x, rng):
    return rng[0] < x < rng[1]


def estimate_bs_ms_angles(a_col, pb, cfg, grid=None):
    """BS AoD and MS AoA from one mode-0 factor column.

    Coarse 2-D correlation search over the configured intervals followed by a
    simplex refinement of |a^H Upsilon^T a_s(phi, theta)| / norms. The
    objective is invariant to any nonzero complex scaling of `a_col`.
    """
    grid = grid or SearchGrid()
    a_col = np.asarray(a_col)
    if not np.any(a_col):
        raise ValueError("zero factor column")
    phis = _interior_grid(cfg.phi_br_range, grid.coarse_step)
    thetas = _interior_grid(cfg.theta_rm_range, grid.coarse_step)
    gb = np.exp(1j * np.pi * np.outer(np.arange(cfg.n_bs), np.cos(phis)))
    gm = np.exp(1j * np.pi * np.outer(np.arange(cfg.n_ms), np.cos(thetas)))
    # steering normalizations cancel in the correlation; contract the BS then
    # the MS axis of Upsilon^T by plain matmuls
    ut3 = pb.upsilon.T.reshape(-1, cfg.n_bs, cfg.n_ms)
    half = np.swapaxes(ut3, 1, 2) @ gb                 # (p, m, n_phi)
    t = np.swapaxes(half, 1, 2) @ gm                   # (p, n_phi, n_theta)
    col_norms = np.linalg.norm(t, axis=0)
    corr = np.abs(np.tensordot(a_col.conj(), t, axes=(0, 0))) / col_norms
    i, j = np.unravel_index(np.argmax(corr), corr.shape)

    an = a_col / np.linalg.norm(a_col)
    ut = pb.upsilon.T

    def objective(x):
        phi, theta = x
        if not (_in_range(phi, cfg.phi_br_range) and _in_range(theta, cfg.theta_rm_range)):
            return 1.0
        v = ut @ np.kron(scenario.ula_steering(cfg.n_bs, phi),
                         scenario.ula_steering(cfg.n_ms, theta))
        return -np.abs(an.conj() @ v) / np.linalg.norm(v)

    x, _ = nelder_mead(objective, [phis[i], thetas[j]],
                       xatol=grid.refine_tol, max_iter=grid.refine_max_iter)
    return float(x[0]), float(x[1])


def estimate_ris_angles(b_col, pb, geom, cfg, grid=None):
    """RIS AoA/AoD pair from one mode-1 factor column.

    A subspace spectrum over the coarse grid locates the basin: the noise
    subspace is everything orthogonal to b (eigenvectors of b b^H past the
    top one), and the model vector is the Jacobi-Anger factorization
    Xi^T Theta J_d(theta_eq) v(phi_eq), which separates the two angles. The
    peak is then polished by a joint simplex refinement of the correlation.
    The equivalent-angle map theta_eq = (theta_br - phi_rm)/2,
    phi_eq = (theta_br + phi_rm)/2 is inverted at the end.
    """
    grid = grid or SearchGrid()
    b_col = np.asarray(b_col)
    if not np.any(b_col):
        raise ValueError("zero factor column")
    bn = b_col / np.linalg.norm(b_col)
    _, vecs = np.linalg.eigh(np.outer(bn, bn.conj()))
    noise_sub = vecs[:, :-1]

    orders = np.arange(-geom.trunc_order, geom.trunc_order + 1)
    theta_mat = (1j ** orders)[None, :] * np.exp(-1j * np.outer(geom.azimuths, orders))
    xi_theta = pb.xi.T @ theta_mat                       # (N_st, 2I+1)
    bessel_arg = 2 * geom.wavenumber * geom.radius

    tb_rng, pr_rng = cfg.theta_br_range, cfg.phi_rm_range
    # the spectral lobe narrows with the RIS electrical size (harmonics reach
    # |i| ~ 2 k0 r and the lobe is ~ pi / (2 k0 r) wide), so the equivalent-
    # angle step must shrink with the aperture or the search misses the basin
    eq_step = min(grid.coarse_step / 2, np.pi / (4 * bessel_arg))
    te_grid = _interior_grid(((tb_rng[0] - pr_rng[1]) / 2, (tb_rng[1] - pr_rng[0]) / 2),
                             eq_step)
    fe_grid = _interior_grid(((tb_rng[0] + pr_rng[0]) / 2, (tb_rng[1] + pr_rng[1]) / 2),
                             eq_step)
    v_grid = np.exp(1j * np.outer(orders, fe_grid))      # (2I+1, n_fe)
    proj = noise_sub.conj().T @ xi_theta                 # (N_st-1, 2I+1)
    jd_grid = jv(orders[None, :], bessel_arg * np.cos(te_grid)[:, None])
    weighted = proj[None, :, :] * jd_grid[:, None, :]    # (n_te, N_st-1, 2I+1)
    resp = weighted.reshape(-1, orders.size) @ v_grid
    denom = np.sum(np.abs(resp.reshape(te_grid.size, -1, fe_grid.size)) ** 2, axis=1)
    spectrum = np.minimum(1.0 / np.maximum(denom, 1.0 / grid.spectrum_cap),
                          grid.spectrum_cap)
    te_mesh, fe_mesh = np.meshgrid(te_grid, fe_grid, indexing="ij")
    tb_mesh, pr_mesh = fe_mesh + te_mesh, fe_mesh - te_mesh
    valid = ((tb_mesh > tb_rng[0]) & (tb_mesh < tb_rng[1])
             & (pr_mesh > pr_rng[0]) & (pr_mesh < pr_rng[1]))
    if not valid.any():
        raise ValueError("empty search region for the RIS angles")
    spectrum[~valid] = -np.inf

    def objective(x):
        tb, pr = x
        if not (_in_range(tb, tb_rng) and _in_range(pr, pr_rng)):
            return 1.0
        jd = jv(orders, bessel_arg * np.cos((tb - pr) / 2))
        model = xi_theta @ (jd * np.exp(1j * orders * (tb + pr) / 2))
        return -np.abs(bn.conj() @ model) / np.linalg.norm(model)

    # refine from the strongest few well-separated spectrum cells and keep the
    # best correlation: with near-lobe-width grids the global argmax can sit
    # on a sidelobe, and the simplex will not leave it
    order_desc = np.argsort(spectrum, axis=None)[::-1]
    starts = []
    for flat in order_desc:
        i, j = np.unravel_index(flat, spectrum.shape)
        if not np.isfinite(spectrum[i, j]):
            break
        if all(max(abs(i - i0), abs(j - j0)) > 8 for i0, j0 in starts):
            starts.append((i, j))
        if len(starts) == 5:
            break
    best = (np.inf, None)
    for i, j in starts:
        x, fval = nelder_mead(objective, [tb_mesh[i, j], pr_mesh[i, j]],
                              xatol=grid.refine_tol, max_iter=grid.refine_max_iter)
        if fval < best[0]:
            best = (fval, x)
    x = best[1]
    return float(x[0]), float(x[1])


def estimate_delay(c_col, cfg, grid=None):
    """Cascade delay from one mode-2 factor column.

    Dense 1-D correlation search against the subcarrier response g(tau) over
    one unambiguous window [0, N/f_s), then a bounded scalar refinement around
    the best cell. ||g(tau)|| is constant, so only the numerator matters.
    """
    grid = grid or SearchGrid()
    c_col = np.asarray(c_col)
    if not np.any(c_col):
        raise ValueError("zero factor column")
    window = cfg.delay_window
    taus = np.arange(grid.delay_grid) * (window / grid.delay_grid)
    k = np.arange(1, cfg.n_pilots + 1)
    steering = np.exp(-2j * np.pi * np.outer(k, taus) / cfg.n_subcarriers * cfg.f_s)
    corr = np.abs(c_col.conj() @ steering)
    best = int(np.argmax(corr))

    def objective(tau):
        return -np.abs(c_col.conj() @ scenario.delay_steering(cfg, tau))

    step = window / grid.delay_grid
    res = minimize_scalar(objective, bounds=(taus[best] - step, taus[best] + step),
                          method="bounded", options={"xatol": 1e-16})
    tau = float(res.x) if -res.fun >= corr[best] else float(taus[best])
    return tau % window


def estimate_doppler(doppler_eig, cfg):
    """Doppler shift from one recovered generator: angle(eig)/(2 pi T_s N_b N_st)."""
    if abs(doppler_eig) == 0:
        raise ValueError("zero Doppler eigenvalue")
    return float(np.angle(doppler_eig) / (2 * np.pi * cfg.slot_period))


def _gain_bases(est, pb, cfg, geom):
    """Per-path building blocks of the regressors Phi_{l,k,m}."""
    length = est.tau.shape[0]
    u = np.empty((pb.upsilon.shape[1], length), dtype=complex)
    w = np.empty((pb.xi.shape[1], length), dtype=complex)
    for l in range(length):
        a_s = np.kron(scenario.ula_steering(cfg.n_bs, est.phi_br),
                      scenario.ula_steering(cfg.n_ms, est.theta_rm[l]))
        u[:, l] = pb.upsilon.T @ a_s
        w[:, l] = pb.xi.T @ scenario.cascade_ris_vector(geom, est.theta_br, est.phi_rm[l])
    k = np.arange(1, cfg.n_pilots + 1)
    gk = np.exp(-2j * np.pi * np.outer(k, est.tau) / cfg.n_subcarriers * cfg.f_s)
    m = np.arange(1, cfg.n_slots + 1)
    dm = np.exp(2j * np.pi * cfg.slot_period * np.outer(m, est.f_d))
    return u, w, gk, dm


def solve_gain_ls(y_slice, phis, cond_limit=1e12):
    """Least-squares gains for one (k, m) slice: Gamma^{-1} zeta with
    Gamma[i, j] = Tr(Phi_j Phi_i^H) and zeta[i] = Tr(Y Phi_i^H)."""
    length = len(phis)
    gamma = np.empty((length, length), dtype=complex)
    zeta = np.empty(length, dtype=complex)
    for i in range(length):
        zeta[i] = np.sum(y_slice * phis[i].conj())
        for j in range(length):
            gamma[i, j] = np.sum(phis[j] * phis[i].conj())
    cond = np.linalg.cond(gamma)
    if not np.isfinite(cond) or cond > cond_limit:
        raise GainSolveError(f"gain system is near singular (cond={cond:.3e})")
    return np.linalg.solve(gamma, zeta)


def estimate_gains(y, est, pb, cfg, geom=None):
    """Cascade gains by per-(k, m) least squares against the fitted model,
    averaged over all pilot subcarriers and slots."""
    if geom is None:
        geom = scenario.RisGeometry.from_config(cfg)
    u, w, gk, dm = _gain_bases(est, pb, cfg, geom)
    length = u.shape[1]
    outer = [np.outer(u[:, l], w[:, l]) for l in range(length)]
    total = np.zeros(length, dtype=complex)
    for ki in range(cfg.n_pilots):
        for mi in range(cfg.n_slots):
            phis = [gk[ki, l] * dm[mi, l] * outer[l] for l in range(length)]
            total += solve_gain_ls(y[:, :, ki, mi], phis)
    return total / (cfg.n_pilots * cfg.n_slots)


def match_paths(truth, est):
    """Bijective truth-to-estimate pairing minimizing squared Doppler mismatch
    (delay mismatch breaks ties); returns `perm` with estimate column perm[i]
    assigned to truth path i."""
    cost = ((truth.f_d[:, None] - est.f_d[None, :]) ** 2
            + (truth.tau[:, None] - est.tau[None, :]) ** 2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def estimate_channel_params(y, factors, pb, cfg, grid=None, geom=None):
    """Full extraction pipeline: angles, delays, Dopplers, then gains.

    `y` is the observed tensor the gains are re-fitted against; `factors` is
    any FactorSet whose columns follow the signal model up to per-path scaling
    and a shared permutation.
    """
    grid = grid or SearchGrid()
    if geom is None:
        base = 2 * math.ceil(2 * math.pi * cfg.ris_radius_wl)
        geom = scenario.RisGeometry.from_config(cfg, trunc_order=grid.ja_oversample * base)
    length = factors.n_paths
    phi_paths = np.empty(length)
    theta_rm = np.empty(length)
    tb_paths = np.empty(length)
    phi_rm = np.empty(length)
    tau = np.empty(length)
    f_d = np.empty(length)
    for l in range(length):
        phi_paths[l], theta_rm[l] = estimate_bs_ms_angles(factors.a[:, l], pb, cfg, grid)
        tb_paths[l], phi_rm[l] = estimate_ris_angles(factors.b[:, l], pb, geom, cfg, grid)
        tau[l] = estimate_delay(factors.c[:, l], cfg, grid)
        f_d[l] = estimate_doppler(factors.doppler_eigs[l], cfg)
    est = EstimatedParams(
        phi_br=circular_mean(phi_paths), theta_br=circular_mean(tb_paths),
        phi_br_paths=phi_paths, theta_br_paths=tb_paths, theta_rm=theta_rm,
        phi_rm=phi_rm, tau=tau, f_d=f_d, rho=np.zeros(length, dtype=complex))
    rho = estimate_gains(y, est, pb, cfg)
    return replace(est, rho=rho)
