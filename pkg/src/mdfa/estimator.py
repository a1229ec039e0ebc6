"""Matrix decomposition factor analysis (MDFA) estimators.

The loss is ``||X - Z Phi^T||_F^2 / d`` over parameters ``Phi = [Lambda, Psi]``
and scores ``Z = [F, E]`` with centered, orthonormal (after scaling by
``1/d``) columns. The fit alternates the closed-form optimal ``Z`` for
fixed ``Phi`` with the closed-form optimal ``Phi`` for fixed ``Z``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._config import TOL
from .errors import DimensionError, InvalidInput, NotPsd, RankDeficient
from .linalg import orth_complement, spectral_decomp, thin_svd
from .model import (
    Bounds,
    CovarianceEstimate,
    Denominator,
    FactorParams,
    ScoreMatrix,
    center_columns,
    covariance,
    lower_trapezoid_mask,
)
from .population import _check_sigma, fixed_point_map, population_loss


@dataclass(frozen=True)
class FitOptions:
    """Options shared by the MDFA fitting routines.

    ``init`` is ``"pca"``, ``"random"`` (drawn with ``seed``) or a
    :class:`FactorParams` starting point.
    """

    max_iter: int = 5000
    tol: float = 1e-9
    denominator: Denominator = Denominator.N_MINUS_1
    init: Union[str, FactorParams] = "pca"
    seed: Optional[int] = None
    ic5: bool = False
    sparsity_k: Optional[int] = None
    bounds: Bounds = field(default_factory=Bounds)
    keep_scores: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInput("tol must be positive")
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be positive")
        if self.sparsity_k is not None and self.sparsity_k < 1:
            raise InvalidInput("sparsity_k must be a positive integer")
        if not (isinstance(self.init, FactorParams) or self.init in ("pca", "random")):
            raise InvalidInput(f"unknown init {self.init!r}")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: FactorParams
    scores: Optional[ScoreMatrix]
    loss_trace: np.ndarray
    iterations: int
    converged: bool

    @property
    def loss(self):
        return float(self.loss_trace[-1])


def _check_dims(n, p, m, need_rows=True):
    if not 1 <= m < p:
        raise DimensionError(f"need 1 <= m < p, got m={m}, p={p}")
    if need_rows and n <= m + p:
        raise DimensionError(f"need n > m + p, got n={n}, m={m}, p={p}")


def _cov_matrix(S):
    if isinstance(S, CovarianceEstimate):
        return np.asarray(S.s, dtype=float)
    return np.asarray(S, dtype=float)


def joint_loss(X, Z, params):
    """``||X - Z Phi^T||_F^2 / d`` with ``d`` taken from ``Z.denominator``."""
    X = np.asarray(X, dtype=float)
    d = Z.denominator.divisor(X.shape[0])
    return float(np.sum((X - Z.z @ params.phi.T) ** 2) / d)


def concentrated_loss(params, S):
    """Minimum of the joint loss over feasible scores, computed from ``S`` only."""
    return population_loss(params, _cov_matrix(S), require_pd=False).value


def update_scores(X, params, denominator=Denominator.N_MINUS_1):
    """Optimal scores for fixed parameters.

    ``Z = sqrt(d) (K L^T + K_perp L_perp^T)`` where ``K D L^T`` is the SVD of
    ``X Phi / sqrt(d)``. ``K_perp`` is also kept orthogonal to the ones vector
    so that the scores stay centered.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    m = params.m
    _check_dims(n, p, m)
    d = denominator.divisor(n)
    K, D, L = thin_svd(X @ params.phi / np.sqrt(d), k=p)
    if D[0] == 0 or D[-1] ** 2 < TOL.eig_clamp * D[0] ** 2:
        raise RankDeficient("X Phi has rank below p")
    K_aug = np.hstack([np.full((n, 1), 1 / np.sqrt(n)), K])
    Z = np.sqrt(d) * (K @ L.T + orth_complement(K_aug, m) @ orth_complement(L, m).T)
    return ScoreMatrix(Z[:, :m], Z[:, m:], denominator)


def _project(G, m, ic5=False, sparsity_k=None, bounds=None):
    """Constrained minimizer of ``||G - Phi||_F^2`` over the parameter set.

    ``G`` is p x (m+p); only its first ``m`` columns and the diagonal of the
    rest are used. Upper-triangle zeroing, top-k truncation and clamping are
    elementwise, so applying them in turn is an exact projection.
    """
    G = np.asarray(G, dtype=float)
    p = G.shape[0]
    Lam = G[:, :m].copy()
    psi = np.diag(G[:, m:]).copy()
    if ic5:
        Lam[~lower_trapezoid_mask(p, m)] = 0.0
    if sparsity_k is not None and sparsity_k < Lam.size:
        # stable sort on row-major order: ties keep the smaller (row, col)
        order = np.argsort(-np.abs(Lam).ravel(), kind="stable")
        flat = Lam.ravel()
        flat[order[sparsity_k:]] = 0.0
        Lam = flat.reshape(p, m)
    return FactorParams(Lam, psi, bounds or Bounds()).clamped()


def update_params(X, Z, ic5=False, sparsity_k=None, bounds=None):
    """``[X^T F / d, diag(X^T E / d)]``, then the optional constraints."""
    X = np.asarray(X, dtype=float)
    d = Z.denominator.divisor(X.shape[0])
    return _project(X.T @ Z.z / d, Z.f.shape[1], ic5, sparsity_k, bounds)


def _rotate_to_ic5(Lam):
    m = Lam.shape[1]
    Q, _ = np.linalg.qr(Lam[:m].T)
    return Lam @ Q


def _initial_params(S, m, opts):
    p = S.shape[0]
    if isinstance(opts.init, FactorParams):
        init = opts.init
        if init.loadings.shape != (p, m):
            raise DimensionError(f"initial loadings must be {p}x{m}")
        Lam, psi = init.loadings, init.psi
    else:
        dS = np.diag(S)
        if opts.init == "pca":
            L, w = spectral_decomp(S, k=m)
            Lam = L * np.sqrt(np.maximum(w, 0.0))
        else:
            rng = np.random.default_rng(opts.seed)
            Lam = rng.uniform(-1.0, 1.0, (p, m)) * np.sqrt(dS)[:, None]
        psi = np.sqrt(np.maximum(dS - np.sum(Lam**2, axis=1), 0.1 * dS))
        if opts.ic5:
            Lam = _rotate_to_ic5(Lam)
    G = np.hstack([Lam, np.diag(psi)])
    return _project(G, m, opts.ic5, opts.sparsity_k, opts.bounds)


def _sign_pass(params, scores=None):
    """Flip columns so that the diagonal loadings are nonnegative."""
    m = params.m
    s = np.where(np.diag(params.loadings[:m]) < 0, -1.0, 1.0)
    out = FactorParams(params.loadings * s, params.psi, params.bounds)
    if scores is not None:
        scores = ScoreMatrix(scores.f * s, scores.e, scores.denominator)
    return out, scores


def _scores_with_retry(X, params, denominator):
    try:
        return update_scores(X, params, denominator), params
    except RankDeficient:
        bumped = FactorParams(
            params.loadings,
            params.psi + np.where(params.psi < 0, -1.0, 1.0) * TOL.rank_perturbation,
            params.bounds,
        )
        return update_scores(X, bumped, denominator), bumped


def fit_mdfa(X, m, options=None):
    """Fit by alternating score and parameter updates on the data matrix.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Data; columns are centered internally.
    m : int
        Number of common factors.
    options : FitOptions, optional

    Returns
    -------
    FitResult
        ``loss_trace[t]`` is the concentrated loss at the t-th iterate,
        evaluated on the data as ``||X - Z(Phi) Phi^T||^2 / d``.
    """
    opts = options or FitOptions()
    X = center_columns(X)
    n, p = X.shape
    _check_dims(n, p, m)
    S = covariance(X, opts.denominator).s
    params = _initial_params(S, m, opts)
    Z, params = _scores_with_retry(X, params, opts.denominator)
    trace = [joint_loss(X, Z, params)]
    converged = False
    it = 0
    with warnings.catch_warnings():
        warnings.simplefilter("once", RuntimeWarning)
        for it in range(1, opts.max_iter + 1):
            params = update_params(X, Z, opts.ic5, opts.sparsity_k, opts.bounds)
            Z, params = _scores_with_retry(X, params, opts.denominator)
            trace.append(joint_loss(X, Z, params))
            if trace[-2] - trace[-1] < opts.tol:
                converged = True
                break
    if opts.ic5:
        params, Z = _sign_pass(params, Z)
    return FitResult(params, Z if opts.keep_scores else None, np.array(trace), it, converged)


def fit_mdfa_cov(S, m, options=None):
    """Same iteration as :func:`fit_mdfa`, driven by the covariance matrix only.

    Each step maps ``Phi`` to the first ``m`` columns and the diagonal of the
    last ``p`` columns of ``(Phi^T)^+ (Phi^T S Phi)^{1/2}``.
    """
    opts = options or FitOptions()
    S = _check_sigma(_cov_matrix(S), require_pd=True)
    p = S.shape[0]
    _check_dims(None, p, m, need_rows=False)
    params = _initial_params(S, m, opts)
    trace = [concentrated_loss(params, S)]
    converged = False
    it = 0
    with warnings.catch_warnings():
        warnings.simplefilter("once", RuntimeWarning)
        for it in range(1, opts.max_iter + 1):
            params = _project(fixed_point_map(params, S), m, opts.ic5, opts.sparsity_k, opts.bounds)
            trace.append(concentrated_loss(params, S))
            if trace[-2] - trace[-1] < opts.tol:
                converged = True
                break
    if opts.ic5:
        params, _ = _sign_pass(params)
    return FitResult(params, None, np.array(trace), it, converged)


def fit_pca(X, m, denominator=Denominator.N):
    """Principal component loadings ``L_m D_m / sqrt(d)`` and scores ``sqrt(d) K_m``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < m:
        raise DimensionError(f"need n >= m, got n={n}, m={m}")
    d = denominator.divisor(n)
    K, D, L = thin_svd(X, k=m)
    return L * D / np.sqrt(d), np.sqrt(d) * K


def ols_objective(S, params):
    return float(np.sum((S - params.loadings @ params.loadings.T - np.diag(params.psi2)) ** 2))


def fit_ols(S, m, options=None):
    """Least-squares factor analysis by principal-factor alternation.

    Minimizes ``||S - Lambda Lambda^T - Psi^2||_F^2``: ``Lambda`` from the
    top-``m`` eigenpairs of ``S - Psi^2``, then ``Psi^2 = diag(S - Lambda
    Lambda^T)`` clamped at zero. Starts from ``Psi^2 = 1 / diag(S^+)``.
    Returns a :class:`FitResult` whose trace holds the objective.
    """
    opts = options or FitOptions()
    S = _check_sigma(_cov_matrix(S), require_pd=False)
    p = S.shape[0]
    _check_dims(None, p, m, need_rows=False)
    dS = np.diag(S)
    inv_diag = np.diag(np.linalg.pinv(S))
    psi2 = np.where(inv_diag > 0, 1.0 / np.where(inv_diag > 0, inv_diag, 1.0), dS)
    psi2 = np.clip(psi2, 0.0, dS)

    def lam_step(psi2):
        L, w = spectral_decomp(S - np.diag(psi2), k=m)
        return L * np.sqrt(np.maximum(w, 0.0))

    Lam = lam_step(psi2)
    psi2 = np.maximum(np.diag(S) - np.sum(Lam**2, axis=1), 0.0)
    params = FactorParams(Lam, np.sqrt(psi2), opts.bounds)
    trace = [ols_objective(S, params)]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        Lam = lam_step(psi2)
        psi2 = np.maximum(dS - np.sum(Lam**2, axis=1), 0.0)
        params = FactorParams(Lam, np.sqrt(psi2), opts.bounds)
        trace.append(ols_objective(S, params))
        if trace[-2] - trace[-1] < opts.tol:
            converged = True
            break
    return FitResult(params, None, np.array(trace), it, converged)
