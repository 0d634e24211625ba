"""System configuration, geometry, channel-parameter draws, and array responses.

The link is BS -> circular RIS -> mobile station. The BS-RIS leg is a single
quasi-static LoS path; the RIS-MS leg has L mobile paths, each carrying a
Doppler phasor e^{j*w_l*m} across aggregated slots, with
w_l = 2*pi*f_d^l*T_s*N_b*N_st.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.special import jv

SPEED_OF_LIGHT = 299_792_458.0  # m/s

__all__ = [
    "SPEED_OF_LIGHT", "SystemConfig", "RisGeometry", "ChannelRealization",
    "desk_config", "paper_config", "parse_config_file", "config_from_file",
    "ula_steering", "circ_ris_steering", "cascade_ris_vector",
    "jacobi_anger_factors", "doppler_shift", "delay_steering",
    "gen_realization", "bs_ris_channel", "ris_ms_channel",
    "cascade_channel_matrix", "cascade_channel_from_params",
]


@dataclass(frozen=True)
class SystemConfig:
    """Every scenario constant: array sizes, frame arithmetic, NOMA powers.

    Angle intervals are the open search/draw ranges for the four angle
    parameters (BS AoD, MS AoA, RIS AoA, RIS AoD).
    """

    f_c: float = 30e9             # carrier, Hz
    f_s: float = 0.12288e9        # bandwidth, Hz
    n_subcarriers: int = 256      # N
    n_pilots: int = 32            # K, first K subcarriers carry pilots
    delta_f: float = 480e3        # subcarrier spacing, Hz
    n_bs: int = 32
    n_ms: int = 32
    n_rf_bs: int = 4
    n_rf_ms: int = 4
    n_ris: int = 256
    ris_radius_wl: float = 20.0   # RIS radius in carrier wavelengths
    n_streams: int = 4            # N_s
    n_paths: int = 4              # L (RIS-MS side)
    n_slots: int = 8              # M aggregated slots per subframe
    n_half_slots: int = 8         # N_st half slots per aggregated slot
    n_symbols: int = 7            # N_b NOMA symbols per half slot
    speed: float = 80.0 / 3.6     # MS velocity, m/s
    v_c: float = SPEED_OF_LIGHT
    total_power: float = 1.0      # P_t
    power_fracs: tuple = (0.8, 0.2)   # NOMA fractions, strongest user first
    noise_model: str = "gaussian"
    phi_br_range: tuple = (0.0, math.pi / 2)
    theta_rm_range: tuple = (0.0, math.pi)
    theta_br_range: tuple = (-math.pi, -math.pi / 2)
    phi_rm_range: tuple = (-math.pi / 2, 0.0)

    def __post_init__(self):
        if self.n_pilots > self.n_subcarriers:
            raise ValueError("pilot count exceeds subcarrier count")
        if self.n_streams > min(self.n_rf_bs, self.n_rf_ms):
            raise ValueError("stream count exceeds RF chain count")
        counts = (self.n_subcarriers, self.n_pilots, self.n_bs, self.n_ms,
                  self.n_rf_bs, self.n_rf_ms, self.n_ris, self.n_streams,
                  self.n_paths, self.n_slots, self.n_half_slots, self.n_symbols)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if abs(sum(self.power_fracs) - 1.0) > 1e-12:
            raise ValueError("NOMA power fractions must sum to 1")
        if len(self.power_fracs) > 1 and not self.power_fracs[0] > self.power_fracs[1]:
            raise ValueError("power-domain NOMA requires fraction of user 1 > user 2")
        if self.noise_model != "gaussian":
            raise ValueError(f"unsupported noise model {self.noise_model!r}")

    @property
    def wavelength(self):
        return self.v_c / self.f_c

    @property
    def t_sym(self):
        """Ideal symbol period 1/delta_f, s."""
        return 1.0 / self.delta_f

    @property
    def slot_period(self):
        """Doppler phase time base T_s*N_b*N_st, s.

        Note: the nominal aggregated-slot duration including cyclic-prefix
        overhead is 4 x 0.03125 ms = 0.125 ms at the 480 kHz numerology; the
        Doppler phasor uses the ideal T_s*N_b*N_st = 116.67 us instead.
        """
        return self.t_sym * self.n_symbols * self.n_half_slots

    @property
    def doppler_max(self):
        return self.f_c * self.speed / self.v_c

    @property
    def doppler_nyquist(self):
        """Largest unambiguously identifiable |f_d|, Hz."""
        return 0.5 / self.slot_period

    @property
    def delay_window(self):
        """Delay period N/f_s of the pilot-band response, s."""
        return self.n_subcarriers / self.f_s


def desk_config(**overrides):
    """Small configuration exercising every model term at desk-scale runtime."""
    base = dict(n_bs=8, n_ms=8, n_rf_bs=4, n_rf_ms=4, n_ris=32,
                ris_radius_wl=2.0, n_streams=2, n_paths=2, n_pilots=16)
    base.update(overrides)
    return SystemConfig(**base)


def paper_config(**overrides):
    """Full-size configuration (32x32 arrays, 256-element RIS, L=4)."""
    return SystemConfig(**overrides)


def parse_config_file(path):
    """Parse a ``key = value`` text file into a dict.

    ``#`` starts a comment; values are parsed as int, float, or a
    comma-separated tuple of numbers, falling back to a bare string.
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, text = (s.strip() for s in line.split("=", 1))
            out[key] = _parse_value(text)
    return out


def _parse_value(text):
    if "," in text:
        return tuple(_parse_value(t.strip()) for t in text.split(","))
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def config_from_file(path):
    """Build a SystemConfig (and search-grid overrides) from a config file.

    Returns ``(cfg, grid_overrides)`` where grid_overrides maps SearchGrid
    field names (file keys prefixed ``grid.``) to values. Unknown keys raise.
    """
    fields = set(SystemConfig.__dataclass_fields__)
    cfg_kw, grid_kw = {}, {}
    for key, value in parse_config_file(path).items():
        if key.startswith("grid."):
            grid_kw[key[len("grid."):]] = value
        elif key in fields:
            cfg_kw[key] = value
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    return SystemConfig(**cfg_kw), grid_kw


@dataclass(frozen=True)
class RisGeometry:
    """Circular-RIS layout: element azimuths/positions and the harmonic order
    used to truncate the Jacobi-Anger expansion of its steering vector."""

    n_ris: int
    radius: float                 # m
    wavelength: float             # m
    trunc_order: int              # I; harmonics run -I..I

    @classmethod
    def from_config(cfg_cls, cfg, trunc_order=None):
        radius = cfg.ris_radius_wl * cfg.wavelength
        if trunc_order is None:
            trunc_order = 2 * math.ceil(2 * math.pi * radius / cfg.wavelength)
        return cfg_cls(cfg.n_ris, radius, cfg.wavelength, trunc_order)

    @property
    def azimuths(self):
        return 2 * np.pi * np.arange(self.n_ris) / self.n_ris

    @property
    def positions(self):
        z = self.azimuths
        return self.radius * np.stack([np.cos(z), np.sin(z)], axis=1)

    @property
    def wavenumber(self):
        return 2 * np.pi / self.wavelength

    @property
    def element_spacing(self):
        """Arc-chord spacing between adjacent elements, m."""
        return 2 * self.radius * math.sin(math.pi / self.n_ris)


@dataclass(frozen=True)
class ChannelRealization:
    """Ground-truth parameter vector plus the raw per-leg quantities.

    The cascade delay tau = tau_br + tau_rm and cascade gain rho = alpha*beta
    are what the estimator sees; the raw legs are kept so the composite
    channel can be cross-checked against its Khatri-Rao construction.
    """

    phi_br: float
    theta_br: float
    theta_rm: np.ndarray       # (L,)
    phi_rm: np.ndarray         # (L,)
    theta_v: np.ndarray        # (L,)
    tau_br: float
    tau_rm: np.ndarray         # (L,)
    tau: np.ndarray            # (L,)
    f_d: np.ndarray            # (L,)
    alpha: complex
    beta: np.ndarray           # (L,)
    rho: np.ndarray            # (L,)


def ula_steering(n_ant, angle):
    """Half-wavelength ULA response (1/sqrt(n))[1, e^{j*pi*cos}, ...]."""
    if n_ant < 1:
        raise ValueError("need at least one antenna")
    k = np.arange(n_ant)
    return np.exp(1j * np.pi * k * np.cos(angle)) / np.sqrt(n_ant)


def circ_ris_steering(geom, angle):
    """Circular-array response, entries e^{j*k0*p_n.d(angle)}/sqrt(N_R)."""
    phase = geom.wavenumber * geom.radius * np.cos(angle - geom.azimuths)
    return np.exp(1j * phase) / np.sqrt(geom.n_ris)


def cascade_ris_vector(geom, theta_br, phi_rm):
    """Composite incidence+departure RIS vector for the cascade channel.

    Equals the transposed Khatri-Rao of the two single-angle steering rows:
    entries (1/N_R) e^{j*2*k0*r*cos(theta_eq)*cos(phi_eq - zeta_n)} with
    theta_eq = (theta_br - phi_rm)/2 and phi_eq = (theta_br + phi_rm)/2.
    """
    theta_eq = 0.5 * (theta_br - phi_rm)
    phi_eq = 0.5 * (theta_br + phi_rm)
    phase = 2 * geom.wavenumber * geom.radius * np.cos(theta_eq) * np.cos(phi_eq - geom.azimuths)
    return np.exp(1j * phase) / geom.n_ris


def jacobi_anger_factors(geom, theta_eq, phi_eq):
    """Truncated Jacobi-Anger factorization of the cascade RIS vector.

    Returns (Theta, jd, v): Theta[n, i] = j^i e^{-j*zeta_n*i}, the real Bessel
    weights jd[i] = J_i(2*k0*r*cos(theta_eq)), and v[i] = e^{j*phi_eq*i}, for
    i = -I..I. Theta @ (jd * v) approximates N_R * cascade_ris_vector; the
    angles decouple into jd (theta_eq only) and v (phi_eq only).
    """
    orders = np.arange(-geom.trunc_order, geom.trunc_order + 1)
    theta = (1j ** orders)[None, :] * np.exp(-1j * np.outer(geom.azimuths, orders))
    jd = jv(orders, 2 * geom.wavenumber * geom.radius * np.cos(theta_eq))
    if not np.all(np.isfinite(jd)):
        raise ArithmeticError("Bessel evaluation failed")
    v = np.exp(1j * phi_eq * orders)
    return theta, jd, v


def doppler_shift(cfg, theta_v):
    """Per-path Doppler f_d = (f_c*v/v_c)*cos(theta_v), Hz."""
    return cfg.f_c * cfg.speed / cfg.v_c * np.cos(theta_v)


def delay_steering(cfg, tau):
    """Pilot-band delay response g(tau), entries e^{-j*2*pi*(k/N)*f_s*tau}, k=1..K."""
    k = np.arange(1, cfg.n_pilots + 1)
    return np.exp(-2j * np.pi * k / cfg.n_subcarriers * cfg.f_s * tau)


def _draw_cn(rng, size=None):
    """Unit-variance circularly-symmetric complex normal draw."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


def gen_realization(cfg, rng, doppler_gap_hz=1.0, max_tries=1000):
    """Draw a channel realization from the configured parameter ranges.

    Angles are uniform on their open intervals; alpha and beta_l are CN(0,1);
    delays are uniform on [0, 0.4*N/f_s) per leg so the cascade stays inside
    the unambiguous window; motion angles are redrawn until the path Dopplers
    are pairwise separated by at least `doppler_gap_hz` (the downstream
    eigenvalue pairing degenerates under repeated Doppler phasors).
    """
    length = cfg.n_paths
    uni = lambda rg, size=None: rng.uniform(rg[0], rg[1], size)
    phi_br = uni(cfg.phi_br_range)
    theta_br = uni(cfg.theta_br_range)
    theta_rm = uni(cfg.theta_rm_range, length)
    phi_rm = uni(cfg.phi_rm_range, length)
    for _ in range(max_tries):
        theta_v = rng.uniform(0.0, np.pi, length)
        f_d = doppler_shift(cfg, theta_v)
        if np.abs(f_d).max() >= cfg.doppler_nyquist:
            continue
        gaps = np.abs(f_d[:, None] - f_d[None, :])[np.triu_indices(length, 1)]
        if length == 1 or gaps.min() >= doppler_gap_hz:
            break
    else:
        raise RuntimeError("could not draw pairwise-distinct path Dopplers")
    tau_br = rng.uniform(0.0, 0.4 * cfg.delay_window)
    tau_rm = rng.uniform(0.0, 0.4 * cfg.delay_window, length)
    alpha = complex(_draw_cn(rng))
    beta = _draw_cn(rng, length)
    return ChannelRealization(
        phi_br=float(phi_br), theta_br=float(theta_br), theta_rm=theta_rm,
        phi_rm=phi_rm, theta_v=theta_v, tau_br=float(tau_br), tau_rm=tau_rm,
        tau=tau_br + tau_rm, f_d=f_d, alpha=alpha, beta=beta, rho=alpha * beta)


def bs_ris_channel(re, cfg, geom, k):
    """Quasi-static BS-RIS frequency-domain channel G_k (N_R x N_BS)."""
    phase = np.exp(-2j * np.pi * k / cfg.n_subcarriers * cfg.f_s * re.tau_br)
    return re.alpha * phase * np.outer(circ_ris_steering(geom, re.theta_br),
                                       ula_steering(cfg.n_bs, re.phi_br))


def ris_ms_channel(re, cfg, geom, k, m):
    """Mobile RIS-MS channel H_k[m] (N_MS x N_R) at slot m (1-based)."""
    omega = 2 * np.pi * re.f_d * cfg.slot_period
    h = np.zeros((cfg.n_ms, cfg.n_ris), dtype=complex)
    for l in range(cfg.n_paths):
        phase = np.exp(-2j * np.pi * k / cfg.n_subcarriers * cfg.f_s * re.tau_rm[l]
                       + 1j * omega[l] * m)
        h += re.beta[l] * phase * np.outer(ula_steering(cfg.n_ms, re.theta_rm[l]),
                                           circ_ris_steering(geom, re.phi_rm[l]))
    return h


def cascade_channel_from_params(cfg, geom, k, m, phi_br, theta_rm, theta_br,
                                phi_rm, tau, f_d, rho):
    """Composite channel sum_l rho_l e^{-j2pi(k/N)f_s tau_l} a_s a_r^T e^{j w_l m}."""
    h = np.zeros((cfg.n_bs * cfg.n_ms, cfg.n_ris), dtype=complex)
    for l in range(len(rho)):
        a_s = np.kron(ula_steering(cfg.n_bs, phi_br), ula_steering(cfg.n_ms, theta_rm[l]))
        a_r = cascade_ris_vector(geom, theta_br, phi_rm[l])
        phase = np.exp(-2j * np.pi * k / cfg.n_subcarriers * cfg.f_s * tau[l]
                       + 2j * np.pi * f_d[l] * cfg.slot_period * m)
        h += rho[l] * phase * np.outer(a_s, a_r)
    return h


def cascade_channel_matrix(re, cfg, k, m, geom=None):
    """Ground-truth cascade channel (N_BS*N_MS x N_R) at subcarrier k, slot m.

    Indices are 1-based: 1 <= k <= K, 1 <= m <= M. Rank is at most L, and the
    matrix equals khatri_rao(G_k^T, H_k[m]) built from the raw legs.
    """
    if not 1 <= k <= cfg.n_pilots:
        raise IndexError(f"subcarrier {k} outside 1..{cfg.n_pilots}")
    if not 1 <= m <= cfg.n_slots:
        raise IndexError(f"slot {m} outside 1..{cfg.n_slots}")
    if geom is None:
        geom = RisGeometry.from_config(cfg)
    return cascade_channel_from_params(cfg, geom, k, m, re.phi_br, re.theta_rm,
                                       re.theta_br, re.phi_rm, re.tau, re.f_d, re.rho)
