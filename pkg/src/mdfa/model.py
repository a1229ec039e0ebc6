"""Parameter and score containers for the matrix decomposition factor model."""

import enum
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ._config import TOL
from .errors import DimensionError, InvalidInput, NotIdentified, TooFewRows


class Denominator(enum.Enum):
    """Divisor used for the covariance and for the score constraints."""

    N = "n"
    N_MINUS_1 = "n-1"

    def divisor(self, n):
        return n if self is Denominator.N else n - 1


@dataclass(frozen=True)
class Bounds:
    """Box bounds of the parameter space: |lambda| <= c_lambda, c_lower <= |sigma| <= c_upper."""

    c_lambda: float = 10.0
    c_lower: float = 1e-3
    c_upper: float = 10.0


@dataclass(frozen=True, eq=False)
class FactorParams:
    """Loadings ``Lambda`` (p x m) and signed unique standard deviations ``sigma``.

    ``Phi = [Lambda, diag(sigma)]`` and the implied covariance is
    ``Lambda Lambda^T + diag(sigma)^2``.
    """

    loadings: np.ndarray
    psi: np.ndarray
    bounds: Bounds = field(default_factory=Bounds)

    def __post_init__(self):
        L = np.array(self.loadings, dtype=float)
        psi = np.array(self.psi, dtype=float).ravel()
        if L.ndim != 2 or L.shape[0] != psi.size:
            raise DimensionError(f"loadings {L.shape} incompatible with {psi.size} uniquenesses")
        L.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "psi", psi)

    @property
    def p(self):
        return self.loadings.shape[0]

    @property
    def m(self):
        return self.loadings.shape[1]

    @property
    def psi2(self):
        return self.psi**2

    @property
    def phi(self):
        return np.hstack([self.loadings, np.diag(self.psi)])

    def covariance(self):
        return self.loadings @ self.loadings.T + np.diag(self.psi2)

    @classmethod
    def from_phi(cls, phi, m, bounds=None):
        phi = np.asarray(phi, dtype=float)
        return cls(phi[:, :m], np.diag(phi[:, m:]).copy(), bounds or Bounds())

    def is_valid(self):
        b = self.bounds
        a = np.abs(self.psi)
        return bool(
            np.all(np.abs(self.loadings) <= b.c_lambda)
            and np.all(a >= b.c_lower)
            and np.all(a <= b.c_upper)
        )

    def clamped(self, warn=True):
        """Project onto the parameter box, keeping the sign of each sigma."""
        b = self.bounds
        L = np.clip(self.loadings, -b.c_lambda, b.c_lambda)
        sign = np.where(self.psi < 0, -1.0, 1.0)
        psi = sign * np.clip(np.abs(self.psi), b.c_lower, b.c_upper)
        if warn and (np.any(L != self.loadings) or np.any(psi != self.psi)):
            warnings.warn("parameters clamped to the parameter box", RuntimeWarning, stacklevel=2)
        return FactorParams(L, psi, b)


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Identified parameter vector: free lower-trapezoid loadings then unique variances."""

    free_loadings: np.ndarray
    unique_variances: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.free_loadings, self.unique_variances])

    @classmethod
    def from_vector(cls, v, p, m):
        v = np.asarray(v, dtype=float)
        k = n_free_loadings(p, m)
        if v.size != k + p:
            raise DimensionError(f"theta has length {v.size}, expected {k + p}")
        return cls(v[:k].copy(), v[k:].copy())


class ScoreMatrix(NamedTuple):
    f: np.ndarray
    e: np.ndarray
    denominator: Denominator = Denominator.N

    @property
    def z(self):
        return np.hstack([self.f, self.e])


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    s: np.ndarray
    denominator: Denominator = Denominator.N
    n: Optional[int] = None


class ScoreReport(NamedTuple):
    """Largest absolute violation of each score constraint."""

    mean_f: float
    mean_e: float
    ff: float
    ee: float
    fe: float
    tol: float

    @property
    def passed(self):
        return max(self[:5]) <= self.tol


def n_free_loadings(p, m):
    return p * m - m * (m - 1) // 2


def center_columns(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInput("data must be a 2-d matrix")
    if X.shape[0] < 2:
        raise TooFewRows(f"need at least 2 rows, got {X.shape[0]}")
    return X - X.mean(axis=0)


def covariance(X, denominator=Denominator.N):
    """``X^T X / d`` for an already centered ``X``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    S = X.T @ X / denominator.divisor(n)
    return CovarianceEstimate((S + S.T) / 2, denominator, n)


def check_scores(Z, tol=TOL.score_check):
    """Maximum violation of each of the five score constraints."""
    F, E = np.asarray(Z.f, float), np.asarray(Z.e, float)
    n, m = F.shape
    p = E.shape[1]
    if E.shape[0] != n:
        raise DimensionError("F and E must have the same number of rows")
    if n <= m + p:
        raise DimensionError(f"need n > m + p, got n={n}, m={m}, p={p}")
    d = Z.denominator.divisor(n)
    return ScoreReport(
        mean_f=float(np.abs(F.sum(axis=0)).max(initial=0.0)),
        mean_e=float(np.abs(E.sum(axis=0)).max(initial=0.0)),
        ff=float(np.abs(F.T @ F / d - np.eye(m)).max(initial=0.0)),
        ee=float(np.abs(E.T @ E / d - np.eye(p)).max(initial=0.0)),
        fe=float(np.abs(F.T @ E).max(initial=0.0)),
        tol=tol,
    )


def lower_trapezoid_mask(p, m):
    """Boolean mask of the free loadings (j >= k)."""
    return np.tri(p, m, dtype=bool)


def phi_to_theta(params):
    L = params.loadings
    p, m = L.shape
    if np.abs(L[~lower_trapezoid_mask(p, m)]).max(initial=0.0) > TOL.upper_triangle:
        raise NotIdentified("loadings have nonzero entries above the diagonal")
    # column-major order of the lower trapezoid
    free = L.T[lower_trapezoid_mask(p, m).T]
    return ThetaVector(free.copy(), params.psi2.copy())


def theta_to_phi(theta, p, m, bounds=None):
    if not isinstance(theta, ThetaVector):
        theta = ThetaVector.from_vector(theta, p, m)
    if theta.free_loadings.size != n_free_loadings(p, m) or theta.unique_variances.size != p:
        raise DimensionError("theta does not match (p, m)")
    Lt = np.zeros((m, p))
    Lt[lower_trapezoid_mask(p, m).T] = theta.free_loadings
    psi = np.sqrt(np.maximum(theta.unique_variances, 0.0))
    return FactorParams(Lt.T, psi, bounds or Bounds())
