"""Random instances shared by the test modules."""

import numpy as np

from mdfa.model import Bounds, Denominator, FactorParams, ScoreMatrix


def random_params(rng, p, m, scale=1.0, ic5=False, bounds=None):
    lam = rng.uniform(-scale, scale, (p, m))
    if ic5:
        lam[~np.tri(p, m, dtype=bool)] = 0.0
        lam[np.arange(m), np.arange(m)] = np.abs(lam[np.arange(m), np.arange(m)]) + 0.2
    psi = rng.uniform(0.4, 1.2, p)
    return FactorParams(lam, psi, bounds or Bounds())


def random_data(rng, n, p, m, params=None):
    """Gaussian data from a factor model (random parameters unless given)."""
    params = params or random_params(rng, p, m)
    return rng.standard_normal((n, m)) @ params.loadings.T + rng.standard_normal((n, p)) * params.psi


def feasible_scores(rng, n, m, p, denominator=Denominator.N):
    """Random scores satisfying all five constraints."""
    G = rng.standard_normal((n, m + p))
    G -= G.mean(axis=0)
    Q, _ = np.linalg.qr(G)
    Z = np.sqrt(denominator.divisor(n)) * Q
    return ScoreMatrix(Z[:, :m], Z[:, m:], denominator)


def random_rotation(rng, m):
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


# criterion number -> "PASS/FAIL" line, printed at the end of the session
ACCEPTANCE = {}
