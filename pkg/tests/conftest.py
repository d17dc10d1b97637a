import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)


def make_rank1_series(rng, dims=(6, 5), T=30, scale=4.0):
    """Noiseless rank-1 tensor series with unit-norm loadings."""
    vecs = []
    for d in dims:
        v = rng.standard_normal(d)
        vecs.append(v / np.linalg.norm(v))
    f = rng.standard_normal(T)
    core = vecs[0]
    for v in vecs[1:]:
        core = np.multiply.outer(core, v)
    stack = scale * f.reshape((T,) + (1,) * len(dims)) * core[None]
    return stack, vecs, f


@pytest.fixture
def rank1_series(rng):
    return make_rank1_series(rng)
