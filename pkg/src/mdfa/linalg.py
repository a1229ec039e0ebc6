"""Dense linear-algebra kernels.

Every function here is pure and deterministic: identical input bits give
identical output bits. Singular vectors and eigenvectors use one sign
convention throughout, namely the entry of largest absolute value in each
(left) vector is made nonnegative.
"""

from typing import NamedTuple

import numpy as np

from ._config import TOL
from .errors import DimensionError, InvalidInput, NotPsd


class ThinSvd(NamedTuple):
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray


class SpectralDecomp(NamedTuple):
    L: np.ndarray
    D2: np.ndarray


def _finite(M, name="input"):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


def _sign_flips(U):
    """+1/-1 per column so that each column's largest-magnitude entry is >= 0."""
    if U.size == 0:
        return np.ones(U.shape[1])
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def thin_svd(M, k=None):
    """Rank-``k`` thin SVD with deterministic signs.

    Parameters
    ----------
    M : array_like, shape (r, c)
    k : int, optional
        Number of singular triplets to keep; defaults to ``min(r, c)``.

    Returns
    -------
    ThinSvd
        ``U`` (r, k), ``D`` (k,) nonincreasing, ``V`` (c, k).
    """
    M = _finite(M)
    if M.ndim != 2:
        raise InvalidInput("expected a 2-d matrix")
    kmax = min(M.shape)
    if k is None:
        k = kmax
    if not 0 < k <= kmax:
        raise DimensionError(f"rank bound k={k} outside [1, {kmax}]")
    U, D, Vt = np.linalg.svd(M, full_matrices=False)
    U, D, V = U[:, :k], D[:k], Vt[:k].T
    s = _sign_flips(U)
    return ThinSvd(U * s, D.copy(), V * s)


def spectral_decomp(A, k=None):
    """Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.

    Only the leading ``k`` eigenpairs are returned when ``k`` is given.
    """
    A = _finite(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("expected a square matrix")
    scale = max(1.0, np.abs(A).max(initial=0.0))
    if np.abs(A - A.T).max(initial=0.0) > TOL.symmetry * scale:
        raise InvalidInput("matrix is not symmetric")
    A = (A + A.T) / 2
    w, L = np.linalg.eigh(A)
    w, L = w[::-1], L[:, ::-1]
    if k is not None:
        w, L = w[:k], L[:, :k]
    return SpectralDecomp(L * _sign_flips(L), w.copy())


def _check_psd(w, what="matrix"):
    top = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w[-1] < -TOL.psd_reject * top:
        raise NotPsd(f"{what} has eigenvalue {w[-1]:.3g} < 0")


def psd_sqrt(A):
    """Symmetric PSD square root.

    Eigenvalues below ``eig_clamp`` times the largest one (including small
    negative values from rounding) are set to zero first.
    """
    L, w = spectral_decomp(A)
    _check_psd(w)
    w = np.where(w > TOL.eig_clamp * max(w[0], 0.0), w, 0.0) if w.size else w
    R = (L * np.sqrt(w)) @ L.T
    return (R + R.T) / 2


def pinv(M):
    """Moore-Penrose pseudoinverse via the thin SVD.

    Singular values below ``eig_clamp`` times the largest one are treated as
    zero.
    """
    M = _finite(M)
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, D, V = thin_svd(M)
    keep = D > TOL.eig_clamp * D[0] if D[0] > 0 else np.zeros_like(D, bool)
    return (V[:, keep] / D[keep]) @ U[:, keep].T


def orth_complement(K, m):
    """``m`` orthonormal columns orthogonal to the columns of ``K``.

    Identity columns are tried in order of decreasing residual norm after
    projecting out ``K`` (ties broken by index), orthonormalized by modified
    Gram-Schmidt with one reorthogonalization pass, and finally sign
    normalized.
    """
    K = _finite(K)
    n, q = K.shape
    if q + m > n:
        raise DimensionError(f"cannot complete {q} columns with {m} more in R^{n}")
    if m == 0:
        return np.zeros((n, 0))
    residual = 1.0 - np.einsum("ij,ij->i", K, K)
    order = np.argsort(-residual, kind="stable")
    C = np.zeros((n, m))
    found = 0
    for i in order:
        v = np.zeros(n)
        v[i] = 1.0
        for _ in range(2):
            v -= K @ (K.T @ v)
            v -= C[:, :found] @ (C[:, :found].T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            C[:, found] = v / norm
            found += 1
            if found == m:
                break
    return C * _sign_flips(C)


def procrustes(A, B):
    """Orthogonal ``P`` minimizing ``||A P - B||_F``.

    ``P = U V^T`` where ``U D V^T`` is the SVD of ``A^T B``.
    """
    A, B = _finite(A, "A"), _finite(B, "B")
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    U, _, V = thin_svd(A.T @ B)
    return U @ V.T
