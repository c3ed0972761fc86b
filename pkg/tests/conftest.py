import numpy as np
import pytest

from relaybuf import SystemConfig


def sample_config(rng, nr_max=120, p_lo=0.05, p_hi=0.95):
    """Uniform draw over the valid config space used by the random suites."""
    rs = int(rng.integers(1, 7))
    rr = int(rng.integers(1, 7))
    nr = int(rng.integers(max(rs, rr) + 1, nr_max + 1))
    ps = float(rng.uniform(p_lo, p_hi))
    pr = float(rng.uniform(p_lo, p_hi))
    return SystemConfig(rs=rs, rr=rr, nr=nr, ps=ps, pr=pr)


@pytest.fixture
def rng():
    return np.random.default_rng(886231)
