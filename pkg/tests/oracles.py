"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical paths.
"""
import itertools

import mpmath
import numpy as np
from scipy.optimize import minimize

mpmath.mp.dps = 50


def mp_log_sum_exp(values):
    return float(mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(v)) for v in values)))


def mp_nll(log_lik, weights, alpha=1.0):
    """Linear-domain NLL in 50-digit arithmetic."""
    total = mpmath.mpf(0)
    for row in log_lik:
        ev = mpmath.fsum(mpmath.mpf(w) * mpmath.exp(alpha * mpmath.mpf(v)) for w, v in zip(weights, row))
        total += mpmath.log(ev)
    return float(-total / len(log_lik))


def linear_nll(log_lik, weights):
    """Plain linear-domain NLL for a batch of priors (rows of ``weights``)."""
    lik = np.exp(np.asarray(log_lik, dtype=float))
    ev = np.atleast_2d(weights) @ lik.T
    with np.errstate(divide="ignore"):
        return -np.log(ev).mean(axis=1)


def simplex_grid(m, step):
    n = int(round(1 / step))
    pts = [c + (n - sum(c),) for c in itertools.product(range(n + 1), repeat=m - 1) if sum(c) <= n]
    return np.array(pts, dtype=float) / n


def grid_min(log_lik, step=0.005):
    """Brute-force minimum NLL over a simplex grid (M <= 3)."""
    m = np.asarray(log_lik).shape[1]
    grid = simplex_grid(m, step)
    vals = linear_nll(log_lik, grid)
    i = int(np.argmin(vals))
    return float(vals[i]), grid[i]


def polished_min(log_lik, step=0.005):
    """Grid minimum refined by a generic constrained solver started at the grid argmin."""
    gmin, p0 = grid_min(log_lik, step)
    m = len(p0)
    res = minimize(
        lambda p: float(linear_nll(log_lik, np.clip(p, 0, None))[0]),
        p0,
        method="SLSQP",
        bounds=[(0, 1)] * m,
        constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1}],
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    p = np.clip(res.x, 0, None)
    p = p / p.sum()
    return min(gmin, float(linear_nll(log_lik, p)[0]))
