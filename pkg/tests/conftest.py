import numpy as np
import pytest

from risce import scenario, txrx


@pytest.fixture(scope="session")
def desk_cfg():
    return scenario.desk_config()


@pytest.fixture(scope="session")
def desk_scene(desk_cfg):
    """One seeded desk realization with pilots and the noiseless tensor."""
    rng = np.random.default_rng(1234)
    re = scenario.gen_realization(desk_cfg, rng)
    pb = txrx.gen_pilot_block(desk_cfg, rng)
    z = txrx.build_noiseless(re, pb, desk_cfg)
    return re, pb, z


def rand_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
