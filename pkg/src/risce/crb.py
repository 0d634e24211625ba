"""Closed-form Fisher information and Cramer-Rao bounds for the channel parameters.

The noiseless tensor is vectorized column-major, z = sum_l d_l kron c_l kron
b_l kron a_l, and every parameter derivative replaces exactly one (or, for
the shared BS/RIS angles, each in turn) of the per-path Kronecker blocks by
its derivative vector. The combined noise is Gaussian with block-diagonal
covariance sigma^2 (I kron W^T W^*), so FIM entries reduce to weighted inner
products of derivative columns:

* real parameters (angles, delay, Doppler): 2 Re{ d_i^H C^-1 d_j }
* rows/columns touching a complex gain rho_l: the same inner product without
  the doubled real part (gains enter the model holomorphically).

The resulting matrix is Hermitian positive semidefinite; the bound is the
real diagonal of its inverse. A second, all-real variant treating Re(rho)
and Im(rho) as separate parameters is also reported.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import scenario

__all__ = ["NoiseCovariance", "FimContext", "CrbReport", "param_labels",
           "dz_dparam", "fim", "crb_diag"]


class NoiseCovariance:
    """The structured operator sigma^2 (I kron W^T W^*), applied blockwise.

    Vectors follow the column-major tensor layout, so consecutive length-N_s
    blocks share one (symbol, half-slot, subcarrier, slot) index.
    """

    def __init__(self, w, sigma):
        self.block = w.T @ w.conj()
        self.sigma = float(sigma)
        cond = np.linalg.cond(self.block)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(
                f"combiner Gram matrix is near singular (cond={cond:.3e})")

    @property
    def block_size(self):
        return self.block.shape[0]

    def apply(self, vecs):
        """C @ vecs for stacked column vectors (n,) or (n, p)."""
        return self._blockwise(self.block, vecs) * self.sigma ** 2

    def solve(self, vecs):
        """C^-1 @ vecs."""
        return self._blockwise(np.linalg.inv(self.block), vecs) / self.sigma ** 2

    def _blockwise(self, mat, vecs):
        v = np.asarray(vecs)
        flat = v.reshape(self.block_size, -1, order="F")
        return (mat @ flat).reshape(v.shape, order="F")

    def dense(self, n_blocks):
        """Explicit matrix for small cross-checks."""
        return self.sigma ** 2 * np.kron(np.eye(n_blocks), self.block)


def param_labels(n_paths):
    """FIM parameter order: phi_br, theta_rm x L, theta_br, phi_rm x L,
    tau x L, f_d x L, rho x L (5L + 2 entries)."""
    per_path = lambda name: [f"{name}[{l}]" for l in range(n_paths)]
    return (["phi_br"] + per_path("theta_rm") + ["theta_br"] + per_path("phi_rm")
            + per_path("tau") + per_path("f_d") + per_path("rho"))


@dataclass(frozen=True)
class FimContext:
    """Everything the FIM needs: the true realization, the pilots, and the
    realized noise scale."""

    re: scenario.ChannelRealization
    pb: object
    cfg: scenario.SystemConfig
    sigma: float

    @cached_property
    def geom(self):
        return scenario.RisGeometry.from_config(self.cfg)

    @cached_property
    def _parts(self):
        """Per-path factor columns and their parameter derivatives."""
        cfg, re, geom, pb = self.cfg, self.re, self.geom, self.pb
        ut = pb.upsilon.T
        xit = pb.xi.T
        m_idx = np.arange(1, cfg.n_slots + 1)
        k_idx = np.arange(1, cfg.n_pilots + 1)
        d_c = -2j * np.pi * cfg.f_s / cfg.n_subcarriers * k_idx
        d_d = 2j * np.pi * cfg.slot_period * m_idx
        parts = []
        for l in range(cfg.n_paths):
            a_b = scenario.ula_steering(cfg.n_bs, re.phi_br)
            a_m = scenario.ula_steering(cfg.n_ms, re.theta_rm[l])
            da_b = -1j * np.pi * np.sin(re.phi_br) * np.arange(cfg.n_bs) * a_b
            da_m = -1j * np.pi * np.sin(re.theta_rm[l]) * np.arange(cfg.n_ms) * a_m
            a_r = scenario.cascade_ris_vector(geom, re.theta_br, re.phi_rm[l])
            kr = geom.wavenumber * geom.radius
            g_tau = scenario.delay_steering(cfg, re.tau[l])
            d_col = np.exp(2j * np.pi * re.f_d[l] * cfg.slot_period * m_idx)
            parts.append({
                "a": ut @ np.kron(a_b, a_m),
                "a_dphi": ut @ np.kron(da_b, a_m),
                "a_dtheta": ut @ np.kron(a_b, da_m),
                "b": xit @ a_r,
                "b_dtheta": xit @ (-1j * kr * np.sin(re.theta_br - geom.azimuths) * a_r),
                "b_dphi": xit @ (-1j * kr * np.sin(re.phi_rm[l] - geom.azimuths) * a_r),
                "c": re.rho[l] * g_tau,
                "c_dtau": d_c * re.rho[l] * g_tau,
                "c_drho": g_tau,
                "d": d_col,
                "d_dfd": d_d * d_col,
            })
        return parts

    @cached_property
    def deriv_matrix(self):
        """All derivative columns stacked, shape (N_s*N_b*N_st*K*M, 5L+2)."""
        cols = [dz_dparam(self, label) for label in param_labels(self.cfg.n_paths)]
        return np.column_stack(cols)

    @cached_property
    def noise_cov(self):
        return NoiseCovariance(self.pb.w, self.sigma)


def _kron4(d, c, b, a):
    return np.kron(d, np.kron(c, np.kron(b, a)))


def dz_dparam(ctx, label):
    """Derivative of the vectorized noiseless tensor for one parameter.

    Shared angles (phi_br, theta_br) sum the per-path terms; per-path
    parameters touch only their own rank-1 block.
    """
    parts = ctx._parts
    if label == "phi_br":
        return sum(_kron4(p["d"], p["c"], p["b"], p["a_dphi"]) for p in parts)
    if label == "theta_br":
        return sum(_kron4(p["d"], p["c"], p["b_dtheta"], p["a"]) for p in parts)
    name, _, idx = label.partition("[")
    if not idx:
        raise KeyError(f"unknown parameter {label!r}")
    p = parts[int(idx[:-1])]
    if name == "theta_rm":
        return _kron4(p["d"], p["c"], p["b"], p["a_dtheta"])
    if name == "phi_rm":
        return _kron4(p["d"], p["c"], p["b_dphi"], p["a"])
    if name == "tau":
        return _kron4(p["d"], p["c_dtau"], p["b"], p["a"])
    if name == "f_d":
        return _kron4(p["d_dfd"], p["c"], p["b"], p["a"])
    if name == "rho":
        return _kron4(p["d"], p["c_drho"], p["b"], p["a"])
    raise KeyError(f"unknown parameter {label!r}")


def fim(ctx):
    """Hermitian Fisher information matrix over the 5L+2 parameters."""
    d = ctx.deriv_matrix
    gram = d.conj().T @ ctx.noise_cov.solve(d)
    n_real = 4 * ctx.cfg.n_paths + 2
    out = gram.copy()
    out[:n_real, :n_real] = 2 * gram[:n_real, :n_real].real
    return (out + out.conj().T) / 2


@dataclass(frozen=True)
class CrbReport:
    """Per-parameter variance floors (units: rad^2, s^2, Hz^2, |gain|^2).

    `bounds` follows the complex-gain convention (one entry per rho_l bounding
    E|rho_hat - rho|^2); `bounds_reim` treats Re/Im of each gain separately.
    """

    labels: tuple
    bounds: np.ndarray
    labels_reim: tuple
    bounds_reim: np.ndarray
    fim_cond: float

    def by_group(self):
        """Mean bound per parameter family, e.g. {'tau': mean of tau entries}."""
        groups = {}
        for label, value in zip(self.labels, self.bounds):
            name = label.partition("[")[0]
            groups.setdefault(name, []).append(value)
        return {name: float(np.mean(vals)) for name, vals in groups.items()}


def crb_diag(ctx):
    """Cramer-Rao bounds as the diagonal of the inverted FIM."""
    f = fim(ctx)
    cond = float(np.linalg.cond(f))
    try:
        bounds = np.diag(np.linalg.inv(f)).real
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"singular FIM (cond={cond:.3e}): {err}") from err

    # all-real variant: split each gain into its real and imaginary parts
    n_paths = ctx.cfg.n_paths
    n_real = 4 * n_paths + 2
    d = ctx.deriv_matrix
    d_real = np.column_stack([d[:, :n_real], d[:, n_real:], 1j * d[:, n_real:]])
    gram = d_real.conj().T @ ctx.noise_cov.solve(d_real)
    f_reim = 2 * gram.real
    bounds_reim = np.diag(np.linalg.inv(f_reim)).real
    labels = param_labels(n_paths)
    labels_reim = (labels[:n_real]
                   + [f"re_rho[{l}]" for l in range(n_paths)]
                   + [f"im_rho[{l}]" for l in range(n_paths)])
    return CrbReport(labels=tuple(labels), bounds=bounds,
                     labels_reim=tuple(labels_reim), bounds_reim=bounds_reim,
                     fim_cond=cond)
