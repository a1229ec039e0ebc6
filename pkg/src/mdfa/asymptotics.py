"""Sandwich covariance of the identified estimator and its Monte Carlo check."""

import itertools
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import InvalidInput, NotIdentifiable, NotIdentified, NotPsd, SingularHessian
from .estimator import FitOptions, fit_mdfa_cov
from .model import (
    Denominator,
    FactorParams,
    ThetaVector,
    center_columns,
    covariance,
    n_free_loadings,
    phi_to_theta,
    theta_to_phi,
)
from .population import numeric_gradient, numeric_hessian, population_loss
from .simulation import gen_dataset


def vech_indices(p):
    """(row, col) pairs of the lower triangle, column by column."""
    return [(i, j) for j in range(p) for i in range(j, p)]


def vech(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidInput("vech needs a square matrix")
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(S).max(initial=0.0)):
        raise InvalidInput("vech needs a symmetric matrix")
    return S.T[np.triu_indices(S.shape[0])]


def unvech(v, p):
    v = np.asarray(v, dtype=float)
    if v.size != p * (p + 1) // 2:
        raise InvalidInput(f"vector of length {v.size} is not vech of a {p}x{p} matrix")
    S = np.zeros((p, p))
    S.T[np.triu_indices(p)] = v
    return S + np.tril(S, -1).T


def gamma_normal(sigma):
    """Asymptotic covariance of vech of the sample covariance under normality.

    ``Gamma[(ij), (kl)] = s_ik s_jl + s_il s_jk``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.linalg.eigvalsh((sigma + sigma.T) / 2)[0] < -1e-10 * max(1.0, np.abs(sigma).max()):
        raise NotPsd("sigma is not positive semidefinite")
    idx = np.array(vech_indices(sigma.shape[0]))
    i, j = idx[:, 0], idx[:, 1]
    G = sigma[np.ix_(i, i)] * sigma[np.ix_(j, j)] + sigma[np.ix_(i, j)] * sigma[np.ix_(j, i)]
    return (G + G.T) / 2


def gamma_empirical(X):
    """Sample covariance of ``vech(x_i x_i^T)`` over the rows of a centered ``X``."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    q = p * (p + 1) // 2
    if n < 10 * q:
        warnings.warn(f"only {n} rows to estimate a {q}x{q} fourth-moment matrix", RuntimeWarning, stacklevel=2)
    idx = np.array(vech_indices(p))
    W = X[:, idx[:, 0]] * X[:, idx[:, 1]]
    W = W - W.mean(axis=0)
    G = W.T @ W / max(n - 1, 1)
    return (G + G.T) / 2


def anderson_rubin(loadings, tol=None):
    """True when deleting any row leaves two disjoint row blocks of rank ``m``.

    Brute force: for each deleted row, search the bipartitions of the
    remaining rows (growing a block never lowers its rank, so bipartitions
    are enough).
    """
    Lam = np.asarray(loadings, dtype=float)
    p, m = Lam.shape
    if p > 16:
        raise InvalidInput("brute-force check limited to p <= 16")

    def full_rank(rows):
        return len(rows) >= m and np.linalg.matrix_rank(Lam[list(rows)], tol=tol) == m

    for drop in range(p):
        rest = [r for r in range(p) if r != drop]
        first, others = rest[0], rest[1:]
        ok = False
        for size in range(len(others) + 1):
            for combo in itertools.combinations(others, size):
                a = (first,) + combo
                b = tuple(r for r in others if r not in combo)
                if full_rank(a) and full_rank(b):
                    ok = True
                    break
            if ok:
                break
        if not ok:
            return False
    return True


@dataclass
class AsymptoticReport:
    theta_star: ThetaVector
    V: np.ndarray
    H: np.ndarray
    J: np.ndarray
    gamma_source: str
    mc_covariance: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "theta_star": self.theta_star.vector.tolist(),
            "V": arr(self.V),
            "H": arr(self.H),
            "J": arr(self.J),
            "gamma_source": self.gamma_source,
            "mc_covariance": arr(self.mc_covariance),
            "diagnostics": {k: (arr(v) if isinstance(v, np.ndarray) else v) for k, v in self.diagnostics.items()},
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _m_from_theta(k, p):
    for m in range(1, p):
        if n_free_loadings(p, m) == k:
            return m
    raise InvalidInput(f"{k} free loadings do not match any m for p={p}")


def loss_in_theta(theta, sigma, p, m):
    return population_loss(theta_to_phi(theta, p, m), sigma).value


def asymptotic_covariance(theta_star, sigma_star, gamma, gamma_source="normal", h_theta=1e-4, h_sigma=1e-4):
    """``V = J Gamma J^T`` with ``J = -H^{-1} d2L/(dtheta dvech(Sigma)^T)``.

    Both second derivatives are central finite differences of the loss in
    ``(theta, vech(Sigma))``.
    """
    sigma_star = np.asarray(sigma_star, dtype=float)
    p = sigma_star.shape[0]
    m = _m_from_theta(theta_star.free_loadings.size, p)
    t0 = theta_star.vector
    d = t0.size

    def f(t):
        return loss_in_theta(t, sigma_star, p, m)

    H, asym = numeric_hessian(f, t0, full_output=True)
    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > 1e10:
        raise SingularHessian(f"Hessian condition number {cond:.3g}")

    pairs = vech_indices(p)
    C = np.empty((d, len(pairs)))
    for k, (i, j) in enumerate(pairs):
        hs = h_sigma * max(1.0, abs(sigma_star[i, j]))
        E = np.zeros((p, p))
        E[i, j] = E[j, i] = hs
        for a in range(d):
            e = np.zeros(d)
            e[a] = h_theta
            C[a, k] = (
                loss_in_theta(t0 + e, sigma_star + E, p, m)
                - loss_in_theta(t0 + e, sigma_star - E, p, m)
                - loss_in_theta(t0 - e, sigma_star + E, p, m)
                + loss_in_theta(t0 - e, sigma_star - E, p, m)
            ) / (4 * h_theta * hs)
    J = -np.linalg.solve(H, C)
    V = J @ np.asarray(gamma, dtype=float) @ J.T
    V = (V + V.T) / 2
    diagnostics = {
        "cond_H": cond,
        "hessian_asymmetry": asym,
        "gradient_norm": float(np.linalg.norm(numeric_gradient(f, t0))),
        "min_eig_V": float(np.linalg.eigvalsh(V)[0]),
    }
    return AsymptoticReport(theta_star, V, H, J, gamma_source, None, diagnostics)


@dataclass(frozen=True)
class NormalityConfig:
    loadings: np.ndarray
    psi2: np.ndarray
    n: int = 20000
    replications: int = 2000
    seed: int = 0
    gamma: str = "normal"
    init_noise: float = 0.01
    tol: float = 1e-14
    max_iter: int = 20000
    workers: int = 1


def validate_truth(loadings, psi2):
    """Check identification of the true loadings; return ``(theta*, Sigma*)``."""
    Lam = np.asarray(loadings, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    p, m = Lam.shape
    if np.any(psi2 <= 0):
        raise InvalidInput("unique variances must be positive")
    params = FactorParams(Lam, np.sqrt(psi2))
    try:
        theta = phi_to_theta(params)
    except NotIdentified as exc:
        raise NotIdentifiable(str(exc)) from None
    if np.any(np.diag(Lam[:m]) <= 0):
        raise NotIdentifiable("diagonal loadings must be positive")
    if not anderson_rubin(Lam):
        raise NotIdentifiable("loadings violate the Anderson-Rubin row-deletion condition")
    return theta, params.covariance()


def _one_fit(args):
    theta_star, sigma, p, m, n, seed, rep, noise, tol, max_iter = args
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))
    X = center_columns(gen_dataset(sigma, n, rng))
    S = covariance(X, Denominator.N_MINUS_1)
    start = theta_star + rng.normal(0.0, noise, theta_star.size)
    opts = FitOptions(max_iter=max_iter, tol=tol, init=theta_to_phi(start, p, m), ic5=True)
    res = fit_mdfa_cov(S, m, opts)
    return phi_to_theta(res.params).vector, res.converged


def _mc_estimates(theta_star, sigma, p, m, cfg):
    tasks = [(theta_star, sigma, p, m, cfg.n, cfg.seed, r, cfg.init_noise, cfg.tol, cfg.max_iter)
             for r in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(_one_fit, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        out = [_one_fit(t) for t in tasks]
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def normality_study(config):
    """Compare the sandwich covariance with the spread of repeated fits.

    Each replication draws fresh Gaussian data, fits the identified model
    from the true parameters plus small noise, and records
    ``sqrt(n) (theta_hat - theta*)``.
    """
    theta, sigma = validate_truth(config.loadings, config.psi2)
    p, m = np.asarray(config.loadings).shape
    if config.gamma == "normal":
        gamma = gamma_normal(sigma)
    elif config.gamma == "empirical":
        X = center_columns(gen_dataset(sigma, max(config.n, 100000), np.random.SeedSequence([config.seed, 2**31])))
        gamma = gamma_empirical(X)
    else:
        raise InvalidInput(f"unknown gamma source {config.gamma!r}")
    report = asymptotic_covariance(theta, sigma, gamma, gamma_source=config.gamma)
    if config.replications < 2:
        return report
    t0 = theta.vector
    est, conv = _mc_estimates(t0, sigma, p, m, config)
    Zs = np.sqrt(config.n) * (est - t0)
    mc = np.cov(Zs, rowvar=False)
    std = (Zs - Zs.mean(axis=0)) / Zs.std(axis=0, ddof=1)
    report.mc_covariance = (mc + mc.T) / 2
    report.diagnostics.update({
        "n": config.n,
        "replications": config.replications,
        "converged_fraction": float(conv.mean()),
        "mc_mean": Zs.mean(axis=0),
        "variance_ratio": np.diag(report.mc_covariance) / np.diag(report.V),
        "skewness": stats.skew(std, axis=0),
        "kurtosis": stats.kurtosis(std, axis=0, fisher=False),
    })
    return report
