from dataclasses import replace

import numpy as np
import pytest

from risce import scenario, txrx
from risce.txrx import QAM4, add_noise, build_noiseless, build_noiseless_slices, \
    gen_pilot_block, ground_truth_factors, noma_superpose


def tiny_config():
    return scenario.desk_config(n_bs=2, n_ms=2, n_rf_bs=2, n_rf_ms=2, n_ris=4,
                                n_streams=2, n_paths=1, n_pilots=2,
                                n_slots=2, n_half_slots=2, n_symbols=2,
                                ris_radius_wl=0.5)


class TestNomaSuperpose:
    def test_single_user_identity(self, desk_cfg):
        cfg = replace(desk_cfg, power_fracs=(1.0,))
        x = np.ones((2, 3), dtype=complex)
        assert np.abs(noma_superpose([x], cfg) - x).max() < 1e-15

    def test_two_user_hand_value(self, desk_cfg):
        ones = np.ones((1, 1), dtype=complex)
        out = noma_superpose([ones, ones], desk_cfg)
        assert abs(out[0, 0] - (np.sqrt(0.8) + np.sqrt(0.2))) < 1e-12
        assert abs(out[0, 0] - 1.3416407) < 1e-6

    def test_zero_second_user(self, desk_cfg):
        x1 = np.full((2, 2), 1 - 1j)
        out = noma_superpose([x1, np.zeros_like(x1)], desk_cfg)
        assert np.abs(out - np.sqrt(0.8) * x1).max() < 1e-14

    def test_shape_mismatch(self, desk_cfg):
        with pytest.raises(ValueError):
            noma_superpose([np.ones((2, 2)), np.ones((2, 3))], desk_cfg)


class TestGenPilotBlock:
    def test_seed_reproducibility(self, desk_cfg):
        p1 = gen_pilot_block(desk_cfg, np.random.default_rng(3))
        p2 = gen_pilot_block(desk_cfg, np.random.default_rng(3))
        assert np.array_equal(p1.f, p2.f)
        assert np.array_equal(p1.x, p2.x)
        assert np.array_equal(p1.xi, p2.xi)

    def test_unit_norm_columns(self, desk_cfg):
        pb = gen_pilot_block(desk_cfg, np.random.default_rng(4))
        assert np.abs(np.linalg.norm(pb.f, axis=0) - 1).max() < 1e-12
        assert np.abs(np.linalg.norm(pb.w, axis=0) - 1).max() < 1e-12
        assert np.abs(np.abs(pb.xi) - 1).max() < 1e-12

    def test_superposed_qam_lattice(self, desk_cfg):
        pb = gen_pilot_block(desk_cfg, np.random.default_rng(5))
        # enumerate the 16 possible two-user superpositions of 4-QAM points
        lattice = np.array([np.sqrt(0.8) * s1 + np.sqrt(0.2) * s2
                            for s1 in QAM4 for s2 in QAM4])
        for entry in pb.x.ravel():
            assert np.abs(lattice - entry).min() < 1e-12

    def test_combined_map_generic_rank(self, desk_cfg):
        pb = gen_pilot_block(desk_cfg, np.random.default_rng(6))
        assert np.linalg.matrix_rank(pb.upsilon) == desk_cfg.n_streams ** 2


class TestBuildNoiseless:
    def test_static_single_path_is_rank_one(self):
        cfg = tiny_config()
        re = scenario.ChannelRealization(
            phi_br=0.8, theta_br=-2.0, theta_rm=np.array([1.4]),
            phi_rm=np.array([-0.8]), theta_v=np.array([np.pi / 2]),
            tau_br=0.0, tau_rm=np.array([0.0]), tau=np.array([0.0]),
            f_d=np.array([0.0]), alpha=1.0 + 0j, beta=np.array([1.0 + 0j]),
            rho=np.array([1.0 + 0j]))
        pb = gen_pilot_block(cfg, np.random.default_rng(7))
        z = build_noiseless(re, pb, cfg)
        # static, zero-delay path: subcarrier and slot fibers are constant
        assert np.abs(z - z[:, :, :1, :1]).max() < 1e-13
        from risce.tensorops import unfold
        svals = np.linalg.svd(unfold(z, 0), compute_uv=False)
        assert svals[1] < 1e-12 * svals[0]

    def test_two_construction_paths_agree(self, desk_cfg, desk_scene):
        re, pb, z = desk_scene
        z_slices = build_noiseless_slices(re, pb, desk_cfg)
        assert np.abs(z - z_slices).max() < 1e-10

    def test_multilinearity_in_gain(self, desk_cfg, desk_scene):
        re, pb, z = desk_scene
        rho2 = re.rho.copy()
        rho2[0] *= 2
        z2 = build_noiseless(replace(re, rho=rho2), pb, desk_cfg)
        # doubling rho_1 adds the path-1 rank-1 component once more
        only_path1 = replace(re, rho=np.array([re.rho[0], 0.0]))
        z_path1 = build_noiseless(only_path1, pb, desk_cfg)
        assert np.abs(z2 - (z + z_path1)).max() < 1e-12

    def test_mode3_fibers_geometric(self, desk_cfg, desk_scene):
        re, pb, _ = desk_scene
        only_path1 = replace(re, rho=np.array([re.rho[0], 0.0]))
        z = build_noiseless(only_path1, pb, desk_cfg)
        ratio = np.exp(2j * np.pi * re.f_d[0] * desk_cfg.slot_period)
        fibers = z.reshape(-1, desk_cfg.n_slots)
        assert np.abs(fibers[:, 1:] - ratio * fibers[:, :-1]).max() < 1e-12


class TestAddNoise:
    def test_infinite_snr_flag(self, desk_cfg, desk_scene):
        _, pb, z = desk_scene
        obs = add_noise(z, pb, float("inf"), np.random.default_rng(8))
        assert np.array_equal(obs.y, z)
        assert obs.sigma == 0.0

    def test_exact_snr(self, desk_cfg, desk_scene):
        _, pb, z = desk_scene
        for snr_db in (-10.0, 0.0, 17.0):
            obs = add_noise(z, pb, snr_db, np.random.default_rng(9))
            realized = (np.linalg.norm(z) ** 2
                        / np.linalg.norm(obs.y - z) ** 2)
            assert abs(10 * np.log10(realized) - snr_db) < 1e-9

    def test_determinism_and_scale_equivariance(self, desk_cfg, desk_scene):
        _, pb, z = desk_scene
        o1 = add_noise(z, pb, 5.0, np.random.default_rng(10))
        o2 = add_noise(z, pb, 5.0, np.random.default_rng(10))
        assert np.array_equal(o1.y, o2.y)
        o3 = add_noise(3.0 * z, pb, 5.0, np.random.default_rng(10))
        assert np.isclose(o3.sigma, 3.0 * o1.sigma)
        assert np.abs(o3.y - 3.0 * o1.y).max() < 1e-12

    def test_combined_noise_covariance(self):
        # sample covariance of the combined noise blocks vs sigma^2 W^T W^*
        cfg = tiny_config()
        pb = gen_pilot_block(cfg, np.random.default_rng(11))
        z = np.ones((cfg.n_streams * cfg.n_symbols, cfg.n_half_slots,
                     cfg.n_pilots, cfg.n_slots), dtype=complex)
        rng = np.random.default_rng(12)
        acc = np.zeros((cfg.n_streams, cfg.n_streams), dtype=complex)
        count = 0
        for _ in range(400):
            obs = add_noise(z, pb, 0.0, rng)
            noise = (obs.y - z).flatten(order="F") / obs.sigma
            blocks = noise.reshape(cfg.n_streams, -1, order="F")
            acc += blocks @ blocks.conj().T
            count += blocks.shape[1]
        sample = acc / count
        expected = pb.w.T @ pb.w.conj()
        assert np.abs(sample - expected).max() < 0.05 * np.abs(expected).max()


def test_ground_truth_factors_match_tensor(desk_cfg, desk_scene):
    re, pb, z = desk_scene
    fs = ground_truth_factors(re, desk_cfg, pb)
    from risce.tensorops import cp_reconstruct
    assert np.abs(cp_reconstruct(fs.a, fs.b, fs.c, fs.d) - z).max() < 1e-12
    omega = 2 * np.pi * re.f_d * desk_cfg.slot_period
    assert np.abs(fs.doppler_eigs - np.exp(1j * omega)).max() < 1e-12
