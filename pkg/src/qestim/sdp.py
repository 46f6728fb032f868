"""Dense ADMM solver for small conic programs (free variables + Hermitian
PSD blocks), used by the Holevo / Nagaoka-Hayashi bound computations.

Problem form:

    minimize    c_free . x  +  sum_k Tr(C_k M_k)
    subject to  a_free^(i) . x  +  sum_k Tr(A_k^(i) M_k)  =  b_i
                M_k Hermitian PSD

All cost/constraint matrices are Hermitian, so every inner product above is
real.  Internally Hermitian matrices are mapped isometrically to real
vectors ("hvec": diagonal, then sqrt(2)-scaled real and imaginary upper
triangles) and the program is solved by over-relaxed ADMM with residual
balancing; the equality projection reuses one Cholesky factor of A A^T.

The solver is deliberately pluggable: pass any callable with the signature
``backend(program, tol, max_iter) -> SdpSolution`` to the bound functions
to substitute an external conic solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "ConeProgram",
    "SdpSolution",
    "SdpError",
    "hvec",
    "unhvec",
    "hvec_dim",
    "solve_cone_program",
]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50_000


class SdpError(RuntimeError):
    """Raised when ADMM does not reach tolerance within the iteration cap."""

    def __init__(self, message, primal_residual, dual_residual, objective):
        super().__init__(
            f"{message} (primal residual {primal_residual:.3e}, "
            f"dual residual {dual_residual:.3e}, objective {objective:.9g})"
        )
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.objective = objective


def hvec_dim(d: int) -> int:
    return d * d


def hvec(m: np.ndarray) -> np.ndarray:
    """Isometric real embedding of a Hermitian matrix.

    Layout: [diag; sqrt2 * Re upper; sqrt2 * Im upper], row-major upper
    triangle, so that hvec(A) . hvec(B) = Tr(A B).
    """
    d = m.shape[0]
    iu = np.triu_indices(d, 1)
    out = np.empty(d * d)
    out[:d] = m.diagonal().real
    off = m[iu]
    s = np.sqrt(2.0)
    out[d : d + len(off)] = s * off.real
    out[d + len(off) :] = s * off.imag
    return out


def unhvec(v: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`hvec`."""
    iu = np.triu_indices(d, 1)
    k = len(iu[0])
    m = np.zeros((d, d), dtype=complex)
    m[np.arange(d), np.arange(d)] = v[:d]
    s = 1.0 / np.sqrt(2.0)
    upper = s * (v[d : d + k] + 1j * v[d + k :])
    m[iu] = upper
    m[(iu[1], iu[0])] = upper.conj()
    return m


@dataclass
class ConeProgram:
    """Conic program over free reals and Hermitian PSD blocks."""

    n_free: int
    block_dims: list
    c_free: np.ndarray = None
    c_blocks: list = None
    rows: list = field(default_factory=list)  # (a_free, [A_k or None], rhs)

    def __post_init__(self):
        if self.c_free is None:
            self.c_free = np.zeros(self.n_free)
        if self.c_blocks is None:
            self.c_blocks = [None] * len(self.block_dims)

    def add_row(self, rhs: float, a_free=None, blocks: dict | None = None):
        """Add one equality row; ``blocks`` maps block index -> Hermitian
        coefficient matrix."""
        self.rows.append((a_free, dict(blocks or {}), float(rhs)))

    # -- dense assembly ----------------------------------------------------

    def _offsets(self):
        offs = [self.n_free]
        for d in self.block_dims:
            offs.append(offs[-1] + hvec_dim(d))
        return offs

    def assemble(self):
        offs = self._offsets()
        n_total = offs[-1]
        m = len(self.rows)
        A = np.zeros((m, n_total))
        b = np.empty(m)
        for i, (a_free, blocks, rhs) in enumerate(self.rows):
            if a_free is not None:
                A[i, : self.n_free] = a_free
            for k, mat in blocks.items():
                A[i, offs[k] : offs[k + 1]] = hvec(mat)
            b[i] = rhs
        c = np.zeros(n_total)
        c[: self.n_free] = self.c_free
        for k, mat in enumerate(self.c_blocks):
            if mat is not None:
                c[offs[k] : offs[k + 1]] = hvec(mat)
        return A, b, c, offs


@dataclass
class SdpSolution:
    x_free: np.ndarray
    blocks: list  # Hermitian PSD matrices
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float


def _project_cone(v, n_free, block_dims, offs):
    out = v.copy()
    for k, d in enumerate(block_dims):
        mat = unhvec(v[offs[k] : offs[k + 1]], d)
        lam, vecs = np.linalg.eigh(mat)
        lam = np.maximum(lam, 0.0)
        mat = (vecs * lam) @ vecs.conj().T
        out[offs[k] : offs[k + 1]] = hvec(mat)
    return out


def solve_cone_program(
    prog: ConeProgram,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    rho: float = 1.0,
    alpha: float = 1.6,
) -> SdpSolution:
    """Over-relaxed ADMM with residual-balanced penalty adaptation."""
    A, b, c, offs = prog.assemble()
    m, n = A.shape
    if m == 0:
        raise ValueError("cone program has no constraints")

    # Cholesky of A A^T for the affine projection; tiny ridge on rank
    # deficiency.
    gram = A @ A.T
    try:
        cho = scipy.linalg.cho_factor(gram, check_finite=False)
    except scipy.linalg.LinAlgError:
        cho = scipy.linalg.cho_factor(
            gram + 1e-12 * np.eye(m) * max(1.0, np.trace(gram) / m),
            check_finite=False,
        )

    def affine_project(v):
        """argmin ||w - v|| s.t. A w = b."""
        nu = scipy.linalg.cho_solve(cho, b - A @ v, check_finite=False)
        return v + A.T @ nu

    z = np.zeros(n)
    u = np.zeros(n)
    x = np.zeros(n)
    sqrt_n = np.sqrt(n)
    check_every = 10
    prim = dual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        x = affine_project(z - u - c / rho)
        x_relaxed = alpha * x + (1 - alpha) * z
        z_prev = z
        z = _project_cone(x_relaxed + u, prog.n_free, prog.block_dims, offs)
        u = u + x_relaxed - z
        if it % check_every == 0 or it == max_iter:
            prim = float(np.linalg.norm(x - z))
            dual = float(rho * np.linalg.norm(z - z_prev))
            scale_p = sqrt_n * tol + tol * max(
                float(np.linalg.norm(x)), float(np.linalg.norm(z))
            )
            scale_d = sqrt_n * tol + tol * float(rho * np.linalg.norm(u))
            if prim <= scale_p and dual <= scale_d:
                break
            # residual balancing
            if prim > 10 * dual and rho < 1e6:
                rho *= 2.0
                u /= 2.0
            elif dual > 10 * prim and rho > 1e-6:
                rho /= 2.0
                u *= 2.0
    else:
        it = max_iter

    xf = z[: prog.n_free]
    blocks = [
        unhvec(z[offs[k] : offs[k + 1]], d) for k, d in enumerate(prog.block_dims)
    ]
    obj = float(c @ z)
    converged = prim <= sqrt_n * tol + tol * max(
        float(np.linalg.norm(x)), float(np.linalg.norm(z))
    ) and dual <= sqrt_n * tol + tol * float(rho * np.linalg.norm(u))
    if not converged:
        raise SdpError(
            f"ADMM did not converge within {max_iter} iterations",
            prim,
            dual,
            obj,
        )
    return SdpSolution(
        x_free=xf,
        blocks=blocks,
        objective=obj,
        iterations=it,
        primal_residual=prim,
        dual_residual=dual,
    )
