"""Shared synthetic fixtures for the test suite."""

import numpy as np
import pytest

from grangernet.synthetic import Coupling, planted_system
from grangernet.xpfsa import XpfsaParams, collect_stats, infer_xpfsa


def noisy_copy_pair(length=10_000, flip=0.1, lag=1, seed=0):
    """(source, target) where target repeats source at the lag with flips."""
    streams = planted_system([(0, "x"), (1, "x")], length,
                             [Coupling((0, "x"), (1, "x"), lag, flip)],
                             seed=seed)
    return streams[(0, "x")], streams[(1, "x")]


@pytest.fixture
def planted_machine():
    """Machine inferred on the canonical flip-0.1 noisy-copy pair."""
    src, tgt = noisy_copy_pair()
    stats = collect_stats(src, tgt, delay=1, max_depth=7)
    return infer_xpfsa(stats, epsilon=0.05, n_min=10), src, tgt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def default_params(**kw):
    return XpfsaParams(**{"max_depth": 5, "epsilon": 0.05, "n_min": 10, **kw})
