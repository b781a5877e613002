import numpy as np
import pytest

from irs_alloc.chansim import GeometryConfig, gen_scenario
from irs_alloc.model import ChannelSet, ScenarioConfig


@pytest.fixture
def make_scenario():
    """Factory for seeded geometry-based scenarios in physical units."""
    def _make(M=2, K=2, N=2, B_bits=1, gamma_db=5.0, sigma2_dbm=-90.0, seed=47, geo=None):
        cfg = ScenarioConfig.from_db(M, K, N, B_bits, gamma_db, sigma2_dbm)
        return cfg, gen_scenario(cfg, geo or GeometryConfig(), seed)
    return _make


@pytest.fixture
def small(make_scenario):
    """M=2, K=2, N=2, L=2 at 5 dB, channel seed 47."""
    return make_scenario()


@pytest.fixture
def unit_channels():
    """Factory for unit-variance Gaussian channels with unit noise."""
    def _make(M, K, N, seed=0):
        rng = np.random.default_rng(seed)

        def draw(*shape):
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        return ChannelSet(F=draw(N, M), h=draw(K, N), d=draw(K, M))
    return _make
