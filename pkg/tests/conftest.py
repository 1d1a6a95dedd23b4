import math

import numpy as np
import pytest

from zrpeq.weights import builtin


@pytest.fixture(scope="session")
def eh4():
    return builtin("evans-hanney", b=4)


@pytest.fixture(scope="session")
def sf4():
    return builtin("slowed-free", b=4)


@pytest.fixture(scope="session")
def sym4():
    return builtin("symmetrized", b=4)


@pytest.fixture(scope="session")
def single5():
    return builtin("single-species", b=5)


@pytest.fixture(scope="session")
def mu_star():
    """Root of mu + exp(mu) = 0 by plain bisection."""
    lo, hi = -1.0, 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid + math.exp(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def direct_z(w, psi, n=200):
    """Brute double sum of w(k) psi^k over a box, in plain floats."""
    k = np.arange(n)
    tot = 0.0
    m1 = m2 = 0.0
    for k1 in range(n):
        row = np.array([w.eval(k1, k2) for k2 in range(n)]) * psi[0] ** k1 * psi[1] ** k
        tot += row.sum()
        m1 += k1 * row.sum()
        m2 += (k * row).sum()
    return tot, np.array([m1, m2]) / tot
