"""Complex dense linear algebra: vectorization, Kronecker products, pseudoinverse."""

import logging
from typing import Optional

import numpy as np
import scipy.linalg

from src.errors import DimensionError, DomainError, NumericalError

logger = logging.getLogger(__name__)

# Dense complex128 matrix; vec() is column-major everywhere in this package
ComplexMatrix = np.ndarray


def as_matrix(a) -> ComplexMatrix:
    """Coerce to a finite 2-D complex128 array."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("matrix has non-finite entries")
    return m


def vec(a: ComplexMatrix) -> np.ndarray:
    """Column-wise vectorization: element k*rows + i is a[i, k]."""
    return as_matrix(a).reshape(-1, order="F")


def ivec(v, rows: int, cols: int) -> ComplexMatrix:
    """Reshape a vector into a rows x cols matrix, inverse of vec."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise DimensionError(
            f"cannot reshape vector of length {v.size} into {rows}x{cols}"
        )
    return v.astype(np.complex128).reshape((rows, cols), order="F")


def kron(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Kronecker product; block (i, j) of the result is a[i, j] * b."""
    return np.kron(as_matrix(a), as_matrix(b))


def pinv(m: ComplexMatrix, tol: Optional[float] = None) -> ComplexMatrix:
    """
    Moore-Penrose pseudoinverse via SVD.

    Singular values at or below tol * sigma_max are treated as zero. The default
    tol is max(rows, cols) * machine epsilon.

    Raises:
        NumericalError: if the SVD does not converge with either LAPACK driver.
    """
    m = as_matrix(m)
    if tol is None:
        tol = max(m.shape) * np.finfo(np.float64).eps
    if tol < 0:
        raise DomainError("tol must be non-negative")

    try:
        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        # gesdd occasionally fails where the slower QR-iteration driver succeeds
        logger.warning("gesdd did not converge, retrying with gesvd")
        try:
            u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"SVD did not converge: {e}") from e

    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]), dtype=np.complex128)

    keep = s > tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * s_inv) @ u.conj().T


def numerical_rank(m: ComplexMatrix, rel_tol: float = 1e-10) -> int:
    """Number of singular values above rel_tol * sigma_max."""
    s = scipy.linalg.svdvals(as_matrix(m))
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def fro_norm(a: ComplexMatrix) -> float:
    """Frobenius norm."""
    return float(np.linalg.norm(np.asarray(a), "fro"))
