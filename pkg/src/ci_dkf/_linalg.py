"""Small dense linear-algebra helpers shared by the filter and the analysis code."""

import numpy as np
from scipy import linalg

from .errors import NumericalError


def symmetrize(M):
    return 0.5 * (M + M.T)


def cho_factor(M, what="matrix"):
    """Cholesky factor of an SPD matrix.

    On failure the matrix is symmetrized and a jitter of ``1e-12 * Tr(M)/n``
    is added once before giving up.
    """
    try:
        return linalg.cho_factor(M, lower=True)
    except (linalg.LinAlgError, ValueError):
        pass
    S = symmetrize(np.asarray(M, dtype=float))
    n = S.shape[0]
    jitter = 1e-12 * max(abs(np.trace(S)) / n, np.finfo(float).tiny)
    try:
        return linalg.cho_factor(S + jitter * np.eye(n), lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


def spd_solve(M, B, what="matrix"):
    return linalg.cho_solve(cho_factor(M, what), B)


def spd_inv(M, what="matrix"):
    n = M.shape[0]
    return symmetrize(linalg.cho_solve(cho_factor(M, what), np.eye(n)))


def min_eig(M):
    return float(np.linalg.eigvalsh(symmetrize(M))[0])


def max_eig(M):
    return float(np.linalg.eigvalsh(symmetrize(M))[-1])


def is_symmetric(M, tol=1e-10):
    M = np.asarray(M)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.allclose(M, M.T, rtol=0, atol=tol * scale)


def is_spd(M):
    if not is_symmetric(M):
        return False
    try:
        linalg.cho_factor(M, lower=True)
    except (linalg.LinAlgError, ValueError):
        return False
    return True


def is_psd(M, tol=1e-12):
    if not is_symmetric(M):
        return False
    scale = max(1.0, float(np.max(np.abs(M)))) if np.size(M) else 1.0
    return min_eig(M) >= -tol * scale


def psd_sqrt_factor(M):
    """Return ``L`` with ``L @ L.T == M`` for a PSD (possibly singular) matrix."""
    w, V = np.linalg.eigh(symmetrize(M))
    return V * np.sqrt(np.clip(w, 0.0, None))


def block_diag(blocks):
    return linalg.block_diag(*blocks)


def rel_err(a, b):
    """Relative Frobenius error of ``a`` against reference ``b``."""
    denom = np.linalg.norm(b)
    if denom == 0:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom)
