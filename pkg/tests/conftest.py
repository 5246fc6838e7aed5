import datetime as dt

import numpy as np
import pytest

from trafficflux.network import NetworkConfig, build_synthetic_network
from trafficflux.synth import SynthConfig, WeeklyProfile, generate_block


@pytest.fixture(scope="session")
def small_net():
    # every segment sensorized so all coverage paradigms have something to chew on
    return build_synthetic_network(NetworkConfig(n_segments=12, sensorized_fraction=1.0, side_m=2000.0), seed=3)


@pytest.fixture(scope="session")
def default_net():
    return build_synthetic_network(NetworkConfig(), seed=0)


@pytest.fixture(scope="session")
def noiseless_cfg():
    return SynthConfig(start_date=dt.date(2016, 1, 4), end_date=dt.date(2016, 1, 17),
                       noise_rel_std=0.0, outlier_rate=0.0, latent_factor_std=0.0)


@pytest.fixture(scope="session")
def noiseless_data(small_net, noiseless_cfg):
    return generate_block(small_net, WeeklyProfile.default(), noiseless_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
