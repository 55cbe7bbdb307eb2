import numpy as np
import pytest

from stable_loewner.loewner_core import Driver
from stable_loewner.stable_process import StableParams, TruncationConfig, sample_truncated_path


class MirroredRng:
    """Generator whose signed draws are negated.

    ``uniform(a, b)`` returns a + b - x and ``standard_normal`` returns -x;
    unsigned draws (exponential, random, poisson) pass through unchanged.
    Sharing the bit stream with a plain generator of the same seed makes
    every symmetric sampler produce the exact negation.
    """

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + high - self._rng.uniform(low, high, size)

    def standard_normal(self, size=None):
        return -self._rng.standard_normal(size)

    def __getattr__(self, name):
        return getattr(self._rng, name)


@pytest.fixture
def mirrored():
    return MirroredRng


def random_truncated_driver(rng, alpha=1.0, kappa=1.0, T=1.0, n_steps=50, eps=1e-2):
    params = StableParams(alpha, kappa)
    path = sample_truncated_path(params, TruncationConfig(alpha, small_jump_threshold=eps),
                                 T, n_steps, rng)
    return Driver.from_levy_path(path)


@pytest.fixture
def truncated_driver():
    return random_truncated_driver
