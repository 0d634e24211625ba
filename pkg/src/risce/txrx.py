"""Pilot generation and synthesis of the received 4th-order tensor.

One subframe of pilots forms a tensor Y of shape
(N_s*N_b, N_st, K, M): superposed NOMA symbols x combined streams along
mode 0, RIS phase patterns along mode 1, pilot subcarriers along mode 2,
aggregated slots along mode 3. Noiseless, Y is an exact CP tensor of rank L.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import scenario
from .decomp import FactorSet
from .tensorops import cp_reconstruct

__all__ = ["PilotBlock", "Observation", "noma_superpose", "gen_pilot_block",
           "ground_truth_factors", "build_noiseless", "build_noiseless_slices",
           "add_noise"]

QAM4 = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


@dataclass(frozen=True)
class PilotBlock:
    """Known transmit-side quantities for one subframe.

    x : (N_s, N_b) superposed pilot symbols, identical across half slots,
        subcarriers, and slots.
    f : (N_BS, N_s) hybrid precoder, unit-norm columns.
    w : (N_MS, N_s) hybrid combiner, unit-norm columns.
    xi : (N_R, N_st) RIS phase matrix, unit-modulus entries, repeated across
        aggregated slots.
    """

    x: np.ndarray
    f: np.ndarray
    w: np.ndarray
    xi: np.ndarray

    @cached_property
    def upsilon(self):
        """(F X) kron W, the combined transmit/receive map (N_BS*N_MS x N_s*N_b)."""
        return np.kron(self.f @ self.x, self.w)


@dataclass(frozen=True)
class Observation:
    """Noisy tensor y = z + combined noise, with the noise scale that realized
    the requested SNR (sigma == 0 for the infinite-SNR flag)."""

    y: np.ndarray
    z: np.ndarray
    sigma: float
    snr_db: float


def noma_superpose(user_syms, cfg):
    """Power-domain superposition sum_i sqrt(iota_i * P_t) * X_i."""
    if len(user_syms) != len(cfg.power_fracs):
        raise ValueError(f"{len(user_syms)} users but {len(cfg.power_fracs)} power fractions")
    shapes = {s.shape for s in user_syms}
    if len(shapes) != 1:
        raise ValueError(f"user symbol blocks disagree on shape: {sorted(shapes)}")
    out = np.zeros(user_syms[0].shape, dtype=complex)
    for frac, syms in zip(cfg.power_fracs, user_syms):
        out += np.sqrt(frac * cfg.total_power) * syms
    return out


def gen_pilot_block(cfg, rng, max_tries=5):
    """Draw precoder/combiner/RIS patterns and superposed 4-QAM pilots.

    F and W entries are drawn from the unit circle and columns normalized;
    RIS phases are uniform on the unit circle per half slot. Redraws if the
    combined map (FX) kron W falls short of its generic rank (probability
    zero). Note rank((FX) kron W) = rank(FX)*rank(W) <= N_s^2, so the map is
    never column-full-rank when N_b > N_s; the generic rank is what matters
    for identifiability.
    """
    generic_rank = (min(cfg.n_bs, cfg.n_streams, cfg.n_symbols)
                    * min(cfg.n_ms, cfg.n_streams))
    for _ in range(max_tries):
        f = _unit_circle(rng, (cfg.n_bs, cfg.n_streams)) / np.sqrt(cfg.n_bs)
        w = _unit_circle(rng, (cfg.n_ms, cfg.n_streams)) / np.sqrt(cfg.n_ms)
        users = [QAM4[rng.integers(0, 4, (cfg.n_streams, cfg.n_symbols))]
                 for _ in cfg.power_fracs]
        x = noma_superpose(users, cfg)
        xi = _unit_circle(rng, (cfg.n_ris, cfg.n_half_slots))
        pb = PilotBlock(x=x, f=f, w=w, xi=xi)
        if np.linalg.matrix_rank(pb.upsilon) == generic_rank:
            return pb
    raise RuntimeError("combined pilot map stayed rank deficient after redraws")


def _unit_circle(rng, shape):
    return np.exp(2j * np.pi * rng.uniform(size=shape))


def ground_truth_factors(re, cfg, pb, geom=None):
    """CP factors of the noiseless tensor for a known realization.

    A[:, l] = Upsilon^T a_s(phi_br, theta_rm^l), B[:, l] = Xi^T a_r(theta_br,
    phi_rm^l), C[:, l] = rho_l g(tau_l), D[:, l] = [e^{j w_l}, ..., e^{j w_l M}].
    """
    if geom is None:
        geom = scenario.RisGeometry.from_config(cfg)
    length = cfg.n_paths
    a = np.empty((cfg.n_streams * cfg.n_symbols, length), dtype=complex)
    b = np.empty((cfg.n_half_slots, length), dtype=complex)
    c = np.empty((cfg.n_pilots, length), dtype=complex)
    ut = pb.upsilon.T
    for l in range(length):
        a_s = np.kron(scenario.ula_steering(cfg.n_bs, re.phi_br),
                      scenario.ula_steering(cfg.n_ms, re.theta_rm[l]))
        a[:, l] = ut @ a_s
        b[:, l] = pb.xi.T @ scenario.cascade_ris_vector(geom, re.theta_br, re.phi_rm[l])
        c[:, l] = re.rho[l] * scenario.delay_steering(cfg, re.tau[l])
    eigs = np.exp(2j * np.pi * re.f_d * cfg.slot_period)
    d = eigs[None, :] ** np.arange(1, cfg.n_slots + 1)[:, None]
    return FactorSet(a=a, b=b, c=c, d=d, doppler_eigs=eigs)


def build_noiseless(re, pb, cfg, geom=None):
    """Noiseless received tensor (N_s*N_b, N_st, K, M) from the CP factors."""
    fs = ground_truth_factors(re, cfg, pb, geom)
    return cp_reconstruct(fs.a, fs.b, fs.c, fs.d)


def build_noiseless_slices(re, pb, cfg, geom=None):
    """Same tensor assembled per (k, m) slice as Upsilon^T H_k[m]^G Xi.

    Independent of the CP construction; the two paths agreeing is the main
    cross-check of the signal model.
    """
    if geom is None:
        geom = scenario.RisGeometry.from_config(cfg)
    z = np.empty((cfg.n_streams * cfg.n_symbols, cfg.n_half_slots,
                  cfg.n_pilots, cfg.n_slots), dtype=complex)
    ut = pb.upsilon.T
    for k in range(1, cfg.n_pilots + 1):
        for m in range(1, cfg.n_slots + 1):
            hg = scenario.cascade_channel_matrix(re, cfg, k, m, geom)
            z[:, :, k - 1, m - 1] = ut @ hg @ pb.xi
    return z


def add_noise(z, pb, snr_db, rng):
    """Attach combiner-colored noise realizing the requested SNR exactly.

    Raw noise is i.i.d. CN(0,1) over (N_MS, N_b, N_st, K, M); it is combined
    as Vec12(N x_1 W^T) and scaled by sigma so that
    ||Z||_F^2 / ||sigma*N^W||_F^2 hits the target, i.e. sigma is solved from
    the drawn noise energy after combining rather than set nominally.
    """
    if np.isinf(snr_db):
        return Observation(y=z.copy(), z=z, sigma=0.0, snr_db=snr_db)
    n_ms = pb.w.shape[0]
    _, n_half, n_pilots, n_slots = z.shape
    n_symbols = z.shape[0] // pb.w.shape[1]
    raw = (rng.standard_normal((n_ms, n_symbols, n_half, n_pilots, n_slots))
           + 1j * rng.standard_normal((n_ms, n_symbols, n_half, n_pilots, n_slots))) / np.sqrt(2)
    combined = np.tensordot(pb.w.T, raw, axes=(1, 0))        # (N_s, N_b, ...)
    combined = combined.reshape((-1,) + combined.shape[2:], order="F")
    snr_lin = 10.0 ** (snr_db / 10.0)
    sigma = np.linalg.norm(z) / (np.sqrt(snr_lin) * np.linalg.norm(combined))
    return Observation(y=z + sigma * combined, z=z, sigma=float(sigma), snr_db=snr_db)
