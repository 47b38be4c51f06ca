"""Shared fixtures and small builders used across the suite."""

import numpy as np
import pytest

from tensreg.tensor_ops import multi_mode_product


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


def random_tucker(rng, dims, ranks, scale=1.0):
    """Random tensor with exact Tucker ranks; returns (core, frames, coeff)."""
    core = scale * rng.standard_normal(tuple(ranks))
    frames = [rng.standard_normal((p, r)) for p, r in zip(dims, ranks)]
    return core, frames, multi_mode_product(core, frames)


def random_dims(rng, order, lo=2, hi=6):
    return tuple(int(rng.integers(lo, hi + 1)) for _ in range(order))
