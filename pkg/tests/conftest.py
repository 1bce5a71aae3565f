import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbfal import scenarios as S
from cbfal.integrator import simulate_capture

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def _run(name, items):
    sc = S.build(name, dict(items))
    traj = simulate_capture(sc.plant, sc.filter_spec, sc.initial, sc.sim, monitor=sc.monitor)
    return sc, traj


def run_scenario(name, **overrides):
    """Simulate once per session and share the result between tests."""
    return _run(name, tuple(sorted(overrides.items())))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
