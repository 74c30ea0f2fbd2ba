"""
Small dense linear algebra for the forwarding design.

Matrices and vectors are plain float64 numpy arrays marked read-only once
validated, so design objects can be shared between threads. The dimensions
involved never exceed a handful of states, so everything is computed with
numpy.linalg directly.
"""

import logging

import numpy as np

from sdforward.config import config
from sdforward.errors import (
    DimensionMismatch,
    NotNegativeDefinite,
    NotPositiveDefinite,
    SingularMatrix,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Construction / validation
# ---------------------------------------------------------------------------


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def as_matrix(obj, name: str = "matrix") -> np.ndarray:
    """Validate and freeze a 2-D real matrix (rows, cols >= 1, finite)."""
    arr = np.array(obj, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return _freeze(arr)


def as_vector(obj, name: str = "vector") -> np.ndarray:
    """Validate and freeze a 1-D real vector with finite entries."""
    arr = np.array(obj, dtype=float).reshape(-1)
    if arr.size < 1:
        raise DimensionMismatch(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return _freeze(arr)


def _require_square(M: np.ndarray, name: str = "matrix") -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")


# ---------------------------------------------------------------------------
# Chain structure
# ---------------------------------------------------------------------------


def chain_matrices(i: int) -> tuple[np.ndarray, np.ndarray]:
    """Integrator chain of length i: ones on the first subdiagonal, b = e_1."""
    if i < 1:
        raise DimensionMismatch(f"chain dimension must be >= 1, got {i}")
    A = np.zeros((i, i))
    for k in range(1, i):
        A[k, k - 1] = 1.0
    b = np.zeros(i)
    b[0] = 1.0
    return _freeze(A), _freeze(b)


def selection_matrix(i: int, n: int) -> np.ndarray:
    """Q_i with Q_i x = (x_1, ..., x_i)'."""
    if not 1 <= i <= n:
        raise DimensionMismatch(f"selection of {i} coordinates out of {n}")
    return _freeze(np.eye(i, n))


# ---------------------------------------------------------------------------
# Basic operations
# ---------------------------------------------------------------------------


def symmetric_part(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    _require_square(M)
    return 0.5 * (M + M.T)


def induced_norm(M) -> float:
    """Spectral (induced 2-) norm; the Euclidean norm for vectors."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.norm(M, 2))


def solve(M, rhs) -> np.ndarray:
    """Solve M x = rhs, refusing numerically singular M."""
    M = np.asarray(M, dtype=float)
    _require_square(M)
    tol = config.TOLERANCES
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        raise SingularMatrix("matrix is identically zero")
    pivot = float(np.min(np.abs(np.diag(np.linalg.qr(M, mode="r")))))
    if pivot < tol["singular_pivot"] * scale:
        raise SingularMatrix(f"smallest pivot {pivot:.3e} below {tol['singular_pivot']:.0e} of the largest entry")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > tol["condition_max"]:
        raise SingularMatrix(f"condition number {cond:.3e} above {tol['condition_max']:.0e}")
    try:
        return np.linalg.solve(M, np.asarray(rhs, dtype=float))
    except np.linalg.LinAlgError as e:
        raise SingularMatrix(str(e)) from e


def closed_loop_sum(P, A, b, p) -> np.ndarray:
    """P(A + bp') + (A' + pb')P."""
    P, A = np.asarray(P, dtype=float), np.asarray(A, dtype=float)
    Acl = A + np.outer(b, p)
    return P @ Acl + Acl.T @ P


# ---------------------------------------------------------------------------
# Forwarding constructions
# ---------------------------------------------------------------------------


def c_vector(A, b, p) -> np.ndarray:
    """c = -(A' + pb')^{-1} e_n."""
    A = np.asarray(A, dtype=float)
    _require_square(A, "A")
    n = A.shape[0]
    b, p = np.asarray(b, dtype=float), np.asarray(p, dtype=float)
    if b.shape != (n,) or p.shape != (n,):
        raise DimensionMismatch(f"b and p must have length {n}")
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    M = A.T + np.outer(p, b)
    c = solve(M, -e_n)
    residual = float(np.linalg.norm(M @ c + e_n))
    if residual > config.TOLERANCES["residual"] * max(1.0, float(np.max(np.abs(M)))):
        logger.warning(f"c_vector residual {residual:.3e} above tolerance")
    if float(c @ b) == 0.0:
        raise SingularMatrix("c'b vanishes; the added integrator cannot be reached")
    return _freeze(c)


def is_neg_definite(M) -> tuple[bool, float]:
    """(flag, margin) where margin is the largest eigenvalue of sym(M)."""
    margin = float(np.linalg.eigvalsh(symmetric_part(M))[-1])
    return margin < 0.0, margin


def is_pos_definite(M) -> tuple[bool, float]:
    """(flag, margin) where margin is the smallest eigenvalue of sym(M)."""
    margin = float(np.linalg.eigvalsh(symmetric_part(M))[0])
    return margin > 0.0, margin


def sandwich_constants(P) -> tuple[float, float]:
    """
    Constants with a1^2 x'Px <= |x|^2 <= a2^2 x'Px:
    a1 = 1/sqrt(lambda_max(P)), a2 = 1/sqrt(lambda_min(P)).
    """
    eig = np.linalg.eigvalsh(symmetric_part(P))
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    if lam_min <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam_min:.3e} is not positive")
    return 1.0 / np.sqrt(lam_max), 1.0 / np.sqrt(lam_min)


def decay_constant_q(P, A, b, p) -> float:
    """Largest q with x'P(A+bp')x <= -q|x|^2."""
    flag, margin = is_neg_definite(closed_loop_sum(P, A, b, p))
    if not flag:
        raise NotNegativeDefinite(
            f"P(A+bp')+(A'+pb')P has eigenvalue {margin:.3e} >= 0"
        )
    return -0.5 * margin


def shell_factor(P) -> np.ndarray:
    """
    Matrix F with x = F v mapping the unit sphere onto {x'Px = 1}.

    F = L^{-T} for the Cholesky factor P = L L'.
    """
    try:
        L = np.linalg.cholesky(symmetric_part(P))
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(str(e)) from e
    return np.linalg.inv(L).T
