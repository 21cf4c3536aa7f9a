import numpy as np
import pytest

from dmmtl.model import StageTopology, init_params


def random_batch(topology, n, seed):
    rng = np.random.default_rng(seed)
    X = [rng.normal(size=(n, w)) for w in topology.nx]
    Y = [rng.normal(size=(n, w)) for w in topology.ny]
    return X, Y


def perturbed_params(topology, seed, bias_scale=0.3):
    """Random parameters with non-zero biases (init_params leaves biases at zero)."""
    rng = np.random.default_rng(seed + 1000)
    p = init_params(topology, seed)
    return p.map(lambda a: a + bias_scale * rng.normal(size=a.shape) if a.ndim == 1 else a)


@pytest.fixture
def small_topology():
    return StageTopology(K=3, nx=(4, 4, 4), ny=(2, 2, 2), nh=3)
