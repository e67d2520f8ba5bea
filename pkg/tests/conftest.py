import numpy as np
import pytest
from scipy.optimize import lsq_linear


def random_signal(rng, n):
    return rng.random(n)


def piecewise_signal(rng, n, pieces):
    """Random piecewise-constant signal with at most ``pieces`` plateaus (hence at most ``pieces - 1`` events)."""
    cuts = np.sort(rng.choice(np.arange(1, n), size=pieces - 1, replace=False))
    levels = rng.random(pieces)
    return np.repeat(levels, np.diff(np.r_[0, cuts, n]))


def min_norm_subgradient(f):
    """Independent oracle: the minimal-norm element ``-D^T z`` of the TV subdifferential.

    ``z_j = sign((Df)_j)`` where the difference is nonzero; the remaining
    entries solve a box-constrained least-squares problem.
    """
    f = np.asarray(f, dtype=float)
    n = f.size
    if n == 1:
        return np.zeros(1)
    D = np.diff(np.eye(n), axis=0)  # (n-1, n), (Df)_j = f_{j+1} - f_j
    d = D @ f
    fixed = d != 0
    z = np.zeros(n - 1)
    z[fixed] = np.sign(d[fixed])
    free = ~fixed
    if free.any():
        A = D.T[:, free]
        b = D.T[:, fixed] @ z[fixed]
        res = lsq_linear(A, -b, bounds=(-1, 1), tol=1e-14, method="bvls")
        z[free] = res.x
    return -D.T @ z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
