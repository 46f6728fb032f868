"""Dense linear-algebra helpers shared across the package.

Conventions: column-stacking vectorization (``vec(AXB) = (B^T (x) A) vec X``),
complex128 matrices throughout.
"""

from __future__ import annotations

import numpy as np

HERM_TOL = 1e-12


class ValidationError(ValueError):
    """An input violates one of the documented invariants."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def dag(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def herm_defect(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - dag(a)))) if a.size else 0.0


def hermitize(a, tol: float = HERM_TOL, name: str = "matrix") -> np.ndarray:
    """Symmetrize round-off level Hermiticity defects; reject anything larger."""
    m = as_matrix(a, name)
    defect = herm_defect(m)
    if defect > tol:
        raise ValidationError(
            f"{name} is not Hermitian (max |A - A^dag| = {defect:.3e} > {tol:.0e})"
        )
    return 0.5 * (m + dag(m))


def is_psd(a: np.ndarray, tol: float = 1e-10) -> bool:
    return float(np.linalg.eigvalsh(a)[0]) >= -tol


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of ``-i[H, .]`` in the column-stacking convention."""
    d = h.shape[0]
    eye = np.eye(d)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def dissipator_superop(gamma_op: np.ndarray) -> np.ndarray:
    """Superoperator of ``G . G^dag - (1/2){G^dag G, .}`` (unit rate)."""
    d = gamma_op.shape[0]
    eye = np.eye(d)
    gg = dag(gamma_op) @ gamma_op
    return (
        np.kron(gamma_op.conj(), gamma_op)
        - 0.5 * np.kron(eye, gg)
        - 0.5 * np.kron(gg.T, eye)
    )


def pauli() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s1 = np.array([[0, 1], [1, 0]], dtype=complex)
    s2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
    s3 = np.array([[1, 0], [0, -1]], dtype=complex)
    return s1, s2, s3


def gell_mann_basis(d: int, include_identity: bool = True) -> list[np.ndarray]:
    """Orthonormal Hermitian basis (generalized Gell-Mann), Tr(B_i B_j) = delta_ij.

    Ordering: identity (optional), symmetric off-diagonal, antisymmetric
    off-diagonal, then diagonal traceless elements.
    """
    basis: list[np.ndarray] = []
    if include_identity:
        basis.append(np.eye(d, dtype=complex) / np.sqrt(d))
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = m[j, i] = 1 / np.sqrt(2)
            basis.append(m)
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = -1j / np.sqrt(2)
            m[j, i] = 1j / np.sqrt(2)
            basis.append(m)
    for k in range(1, d):
        diag = np.zeros(d)
        diag[:k] = 1.0
        diag[k] = -k
        basis.append(np.diag(diag).astype(complex) / np.sqrt(k * (k + 1)))
    return basis


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    """Quadrature weights such that ``w @ f`` equals the trapezoid rule on x."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValidationError("quadrature grid needs at least 2 points")
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w
