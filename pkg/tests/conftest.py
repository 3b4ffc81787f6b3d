import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cocyclelab.cocycle import CocycleMap, rotation
from cocyclelab.markov import StochasticMatrix

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def diag_cocycle(sigma: float, q: int = 2) -> CocycleMap:
    return CocycleMap(np.tile(np.diag([sigma, 1 / sigma]), (q, 1, 1)))


def random_cocycle(rng: np.random.Generator, q: int, lo: float = -2.0, hi: float = 2.0,
                   min_det: float = 0.1) -> CocycleMap:
    mats = []
    while len(mats) < q:
        a = rng.uniform(lo, hi, size=(2, 2))
        if abs(np.linalg.det(a)) >= min_det:
            mats.append(a)
    return CocycleMap(np.array(mats))


def random_chain(rng: np.random.Generator, q: int) -> StochasticMatrix:
    rows = rng.uniform(0.05, 1.0, size=(q, q))
    return StochasticMatrix.from_rows(rows / rows.sum(axis=1, keepdims=True))


def brute_force_transport(m1, m2, cost):
    """Minimum over the vertices of the transportation polytope, by enumeration.

    A vertex is a basic feasible solution: a set of at most m+n-1 cells whose
    equality system has a unique nonnegative solution.
    """
    s1, s2 = np.flatnonzero(m1 > 0), np.flatnonzero(m2 > 0)
    cells = [(a, b) for a in s1 for b in s2 if np.isfinite(cost[a, b])]
    rhs = np.concatenate([m1[s1], m2[s2]])
    best = np.inf
    for k in range(1, len(s1) + len(s2)):
        for subset in itertools.combinations(cells, k):
            M = np.zeros((len(s1) + len(s2), k))
            for c, (a, b) in enumerate(subset):
                M[np.searchsorted(s1, a), c] = 1
                M[len(s1) + np.searchsorted(s2, b), c] = 1
            x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            if np.all(x >= -1e-14) and np.allclose(M @ x, rhs, atol=1e-14):
                best = min(best, sum(x[c] * cost[a, b] for c, (a, b) in enumerate(subset)))
    return best


@pytest.fixture
def fair_coin() -> StochasticMatrix:
    return StochasticMatrix.bernoulli([0.5, 0.5])


@pytest.fixture
def sticky_chain() -> StochasticMatrix:
    return StochasticMatrix.from_rows([[0.9, 0.1], [0.3, 0.7]])


@pytest.fixture
def rotations() -> CocycleMap:
    return CocycleMap(np.array([rotation(0.7), rotation(np.sqrt(2))]))
