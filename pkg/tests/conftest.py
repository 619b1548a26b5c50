import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from navsafe.mlp import Mlp, MlpSpec

settings.register_profile("navsafe", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("navsafe")


def random_net(seed: int, sizes=(13, 64, 64, 5), bias_scale: float = 0.1) -> Mlp:
    """Glorot weights plus small random biases (plain init leaves biases at zero)."""
    rng = np.random.default_rng(seed)
    net = Mlp.init(MlpSpec(sizes), rng)
    return Mlp(net.spec, net.weights, [rng.normal(0, bias_scale, b.shape) for b in net.biases])


@pytest.fixture
def small_net():
    return random_net(0, (4, 6, 5, 3))
