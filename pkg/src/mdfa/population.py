"""Profile loss as a function of the parameters and a covariance matrix.

The same code evaluates the sample-level concentrated loss (``sigma`` = the
sample covariance) and the population loss (``sigma`` = the true
covariance).
"""

from typing import NamedTuple

import numpy as np

from ._config import TOL
from .errors import EvalError, NotPsd
from .linalg import pinv, spectral_decomp


class LossAtSigma(NamedTuple):
    value: float
    term_projection: float
    term_sqrt: float


class _Pieces(NamedTuple):
    phi: np.ndarray
    phi_pinv: np.ndarray
    L: np.ndarray  # eigenvectors of Phi^T Sigma Phi with nonzero eigenvalue
    w: np.ndarray  # the matching eigenvalues


def _as_phi(params):
    return params.phi if hasattr(params, "phi") else np.asarray(params, dtype=float)


def _check_sigma(sigma, require_pd):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NotPsd("covariance must be square")
    w = np.linalg.eigvalsh((sigma + sigma.T) / 2)
    top = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w[0] < -TOL.psd_reject * top:
        raise NotPsd(f"covariance has eigenvalue {w[0]:.3g} < 0")
    if require_pd and w[0] <= TOL.eig_clamp * top:
        raise NotPsd("covariance must be positive definite")
    return sigma


def _pieces(params, sigma):
    phi = _as_phi(params)
    M = phi.T @ sigma @ phi
    L, w = spectral_decomp((M + M.T) / 2, k=phi.shape[0])
    keep = w > TOL.eig_clamp * max(w[0], 0.0) if w.size else w.astype(bool)
    return _Pieces(phi, pinv(phi), L[:, keep], w[keep])


def fixed_point_map(params, sigma):
    """``(Phi^T)^+ (Phi^T Sigma Phi)^{1/2}``, a p x (m+p) matrix.

    With ``sigma`` the sample covariance this equals ``X^T Z(Phi) / d`` for the
    optimal scores, so the parameter update can be run from ``sigma`` alone.
    """
    pc = _pieces(params, np.asarray(sigma, dtype=float))
    return pc.phi_pinv.T @ ((pc.L * np.sqrt(pc.w)) @ pc.L.T)


def projector_A(params, sigma, require_pd=True):
    """``A = Phi L L^T Phi^+`` from the spectral decomposition of ``Phi^T Sigma Phi``."""
    sigma = _check_sigma(sigma, require_pd)
    pc = _pieces(params, sigma)
    return pc.phi @ pc.L @ pc.L.T @ pc.phi_pinv


def population_loss(params, sigma, require_pd=True):
    """Loss split into its projection (trace) term and its square-root term."""
    sigma = _check_sigma(sigma, require_pd)
    pc = _pieces(params, sigma)
    p = pc.phi.shape[0]
    R = np.eye(p) - pc.phi @ pc.L @ pc.L.T @ pc.phi_pinv
    t1 = float(np.trace(R.T @ sigma @ R))
    root = (pc.L * np.sqrt(pc.w)) @ pc.L.T
    t2 = float(np.sum((pc.phi_pinv.T @ root - pc.phi) ** 2))
    if -1e-10 < t1 < 0.0:
        t1 = 0.0
    return LossAtSigma(t1 + t2, t1, t2)


def _steps(x, rel, h):
    if h is None:
        return rel * np.maximum(1.0, np.abs(x))
    return np.broadcast_to(np.asarray(h, dtype=float), x.shape).copy()


def _eval(f, x):
    v = f(x)
    if not np.isfinite(v):
        raise EvalError(f"non-finite function value at {x!r}", point=x.copy())
    return float(v)


def numeric_gradient(f, x, h=None):
    """Central-difference gradient; default step ``1e-5 * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    hs = _steps(x, 1e-5, h)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = hs[i]
        g[i] = (_eval(f, x + e) - _eval(f, x - e)) / (2 * hs[i])
    return g


def numeric_hessian(f, x, h=None, full_output=False):
    """Hessian as the central-difference Jacobian of :func:`numeric_gradient`.

    The raw Jacobian is not exactly symmetric; the returned matrix is
    ``(H + H^T) / 2``. With ``full_output`` the largest relative asymmetry
    ``max|H - H^T| / max|H|`` is returned as well.
    """
    x = np.asarray(x, dtype=float)
    hs = _steps(x, 1e-4, h)
    H = np.empty((x.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = hs[j]
        H[:, j] = (numeric_gradient(f, x + e) - numeric_gradient(f, x - e)) / (2 * hs[j])
    asym = float(np.abs(H - H.T).max(initial=0.0) / max(np.abs(H).max(initial=0.0), 1e-300))
    H = (H + H.T) / 2
    return (H, asym) if full_output else H
