"""Holevo and Nagaoka-Hayashi bounds as dense semidefinite programs.

Both bounds minimize over vectors of Hermitian estimator observables
X = (X_1..X_n) subject to local unbiasedness Tr(X_a d_b rho) = delta_ab.

* ``hcrb``: min Tr(W Re Z) + ||sqrt(W) Im Z sqrt(W)||_1 with
  Z_ab = Tr(rho X_a X_b), cast as an SDP over a real matrix V >= Z via a
  Schur complement in a rank-revealing factorization S = R† R of the
  operator Gram matrix S_jk = Tr(rho B_j B_k).

* ``nhb``: block-matrix program over S >= "X X^T" with block-Hermitian
  structure, objective Tr[(W (x) rho) L].

The returned HCRB value is the exact Holevo functional evaluated at the
solver's X projected onto the unbiasedness constraints, so it is a true
upper bound for the mathematical HCRB regardless of solver tolerance.
"""

from __future__ import annotations

import numpy as np

from ._linalg import ValidationError, gell_mann_basis, hermitize
from .sdp import ConeProgram, SdpSolution, solve_cone_program

__all__ = ["hcrb", "nhb"]

# Bound orderings are asserted downstream with 1e-6 slack; solve tighter.
_BOUND_TOL = 1e-7
_MAX_ITER = 50_000


def _validate_inputs(rho, drho, W):
    rho = hermitize(rho, tol=1e-8, name="rho")
    drho = [hermitize(m, tol=1e-8, name=f"drho[{a}]") for a, m in enumerate(drho)]
    n = len(drho)
    if n < 1:
        raise ValidationError("bounds require at least one parameter")
    W = np.asarray(W, dtype=float) if np.isrealobj(W) else np.asarray(W)
    W = np.real_if_close(W, tol=1e6)
    if W.shape != (n, n):
        raise ValidationError(f"weight matrix must be {n}x{n}, got {W.shape}")
    W = np.asarray(W, dtype=float)
    if np.max(np.abs(W - W.T)) > 1e-10:
        raise ValidationError("weight matrix must be symmetric")
    if np.min(np.linalg.eigvalsh(W)) < -1e-10:
        raise ValidationError("weight matrix must be PSD")
    return rho, drho, n, W


def _re_picker(dim, p, q):
    """Hermitian H with Tr(H M) = Re M_pq for Hermitian M."""
    h = np.zeros((dim, dim), dtype=complex)
    if p == q:
        h[p, p] = 1.0
    else:
        h[p, q] = 0.5
        h[q, p] = 0.5
    return h


def _im_picker(dim, p, q):
    """Hermitian H with Tr(H M) = Im M_pq for Hermitian M (p != q)."""
    h = np.zeros((dim, dim), dtype=complex)
    h[p, q] = 0.5j
    h[q, p] = -0.5j
    return h


def _herm_functional(dim, C):
    """Hermitian H with Tr(H M) = Re Tr(C† M) for Hermitian M."""
    return (C + C.conj().T) / 2


def _holevo_functional(x, S, W):
    """Tr(W Re Z) + ||sqrt(W) Im Z sqrt(W)||_1 at Z = x^T S x (x real)."""
    Z = x.T @ S @ x
    val = float(np.trace(W @ Z.real))
    lam, vecs = np.linalg.eigh(W)
    sqw = (vecs * np.sqrt(np.maximum(lam, 0.0))) @ vecs.T
    imz = sqw @ Z.imag @ sqw
    val += float(np.sum(np.abs(np.linalg.svd(imz, compute_uv=False))))
    return val


def _project_unbiased(x, t):
    """Minimal Frobenius correction so that t^T x = I exactly."""
    n = x.shape[1]
    gram = t.T @ t
    resid = t.T @ x - np.eye(n)
    return x - t @ np.linalg.solve(gram, resid)


def hcrb(rho, drho, W, solver=None) -> float:
    """Holevo Cramér-Rao bound for the model (rho, drho) under weight W."""
    rho, drho, n, W = _validate_inputs(rho, drho, W)
    d = rho.shape[0]
    basis = gell_mann_basis(d, include_identity=True)
    mb = len(basis)

    S = np.empty((mb, mb), dtype=complex)
    for j, bj in enumerate(basis):
        for k, bk in enumerate(basis):
            S[j, k] = np.trace(rho @ bj @ bk)
    S = (S + S.conj().T) / 2
    lam, U = np.linalg.eigh(S)
    keep = lam > max(1e-14, float(lam.max()) * 1e-12)
    r = int(np.count_nonzero(keep))
    R = (np.sqrt(lam[keep])[:, None]) * U[:, keep].conj().T  # (r, mb): S = R†R

    t = np.empty((mb, n))
    for j, bj in enumerate(basis):
        for b in range(n):
            t[j, b] = float(np.real(np.trace(bj @ drho[b])))

    p_dim = n + r
    prog = ConeProgram(n_free=mb * n, block_dims=[p_dim])

    def xidx(j, a):
        return a * mb + j

    # objective: Tr(W V) with V the top-left block of P
    cb = np.zeros((p_dim, p_dim), dtype=complex)
    cb[:n, :n] = W
    prog.c_blocks = [cb]

    # local unbiasedness: sum_j t_jb x_ja = delta_ab
    for a in range(n):
        for b in range(n):
            av = np.zeros(mb * n)
            for j in range(mb):
                av[xidx(j, a)] = t[j, b]
            prog.add_row(1.0 if a == b else 0.0, a_free=av)

    # bottom-right identity block
    for i in range(r):
        for j in range(i, r):
            prog.add_row(
                1.0 if i == j else 0.0, blocks={0: _re_picker(p_dim, n + i, n + j)}
            )
            if i != j:
                prog.add_row(0.0, blocks={0: _im_picker(p_dim, n + i, n + j)})

    # link P[n+i, a] = (R x)_{ia}
    for i in range(r):
        for a in range(n):
            av = np.zeros(mb * n)
            for j in range(mb):
                av[xidx(j, a)] = -R[i, j].real
            prog.add_row(0.0, a_free=av, blocks={0: _re_picker(p_dim, n + i, a)})
            av = np.zeros(mb * n)
            for j in range(mb):
                av[xidx(j, a)] = -R[i, j].imag
            prog.add_row(0.0, a_free=av, blocks={0: _im_picker(p_dim, n + i, a)})

    # V real: vanish imaginary parts of the top-left block
    for a in range(n):
        for b in range(a + 1, n):
            prog.add_row(0.0, blocks={0: _im_picker(p_dim, a, b)})

    backend = solver or (
        lambda p: solve_cone_program(p, tol=_BOUND_TOL, max_iter=_MAX_ITER)
    )
    sol = backend(prog)

    x = np.empty((mb, n))
    for a in range(n):
        x[:, a] = sol.x_free[a * mb : (a + 1) * mb]
    x = _project_unbiased(x, t)
    return _holevo_functional(x, S, W)


def nhb(rho, drho, W, solver=None) -> float:
    """Nagaoka-Hayashi bound for the model (rho, drho) under weight W."""
    rho, drho, n, W = _validate_inputs(rho, drho, W)
    d = rho.shape[0]
    big = (n + 1) * d  # block layout: n estimator rows + one identity row

    def xrow(a, i):  # index into block a of the L part
        return a * d + i

    off = n * d  # start of the X column block

    prog = ConeProgram(n_free=0, block_dims=[big])
    cb = np.zeros((big, big), dtype=complex)
    cb[:off, :off] = np.kron(W, rho)
    prog.c_blocks = [cb]

    # bottom-right block pinned to the identity
    for i in range(d):
        for j in range(i, d):
            prog.add_row(
                1.0 if i == j else 0.0,
                blocks={0: _re_picker(big, off + i, off + j)},
            )
            if i != j:
                prog.add_row(0.0, blocks={0: _im_picker(big, off + i, off + j)})

    # each X_a Hermitian (X_a sits at rows a*d.., columns off..)
    for a in range(n):
        for i in range(d):
            prog.add_row(0.0, blocks={0: _im_picker(big, xrow(a, i), off + i)})
            for j in range(i + 1, d):
                h = _re_picker(big, xrow(a, i), off + j) - _re_picker(
                    big, xrow(a, j), off + i
                )
                prog.add_row(0.0, blocks={0: h})
                h = _im_picker(big, xrow(a, i), off + j) + _im_picker(
                    big, xrow(a, j), off + i
                )
                prog.add_row(0.0, blocks={0: h})

    # off-diagonal L blocks Hermitian: L_ab[i,j] = conj(L_ab[j,i]) for a < b
    for a in range(n):
        for b in range(a + 1, n):
            for i in range(d):
                prog.add_row(
                    0.0, blocks={0: _im_picker(big, xrow(a, i), xrow(b, i))}
                )
                for j in range(i + 1, d):
                    h = _re_picker(big, xrow(a, i), xrow(b, j)) - _re_picker(
                        big, xrow(a, j), xrow(b, i)
                    )
                    prog.add_row(0.0, blocks={0: h})
                    h = _im_picker(big, xrow(a, i), xrow(b, j)) + _im_picker(
                        big, xrow(a, j), xrow(b, i)
                    )
                    prog.add_row(0.0, blocks={0: h})

    # local unbiasedness: Re Tr(X_a drho_b) = delta_ab
    for a in range(n):
        for b in range(n):
            C = np.zeros((big, big), dtype=complex)
            C[xrow(a, 0) : xrow(a, 0) + d, off : off + d] = drho[b]
            prog.add_row(1.0 if a == b else 0.0, blocks={0: _herm_functional(big, C)})

    backend = solver or (
        lambda p: solve_cone_program(p, tol=_BOUND_TOL, max_iter=_MAX_ITER)
    )
    sol = backend(prog)
    return float(sol.objective)
