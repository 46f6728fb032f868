"""Search for Weyl-Heisenberg SIC fiducial vectors and bundle them as
package data (src/qestim/data/sic_fiducials.json).

A fiducial |psi> generates a SIC-POVM through the d^2 displacement
operators D_pq = X^p Z^q when |<psi|D_pq|psi>|^2 = 1/(d+1) for every
(p, q) != (0, 0).  We minimize the squared residual of that condition with
L-BFGS (analytic Wirtinger gradient) from random restarts.

Run from the repository root:  python tools/gen_sic_fiducials.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

D_MIN, D_MAX = 3, 16
LOSS_TARGET = 1e-23
MAX_RESTARTS = 200


def displacements(d: int) -> np.ndarray:
    """All d^2 - 1 non-identity operators X^p Z^q, shape (d^2-1, d, d)."""
    omega = np.exp(2j * np.pi / d)
    x = np.roll(np.eye(d), 1, axis=0)  # X|k> = |k+1 mod d>
    z = np.diag(omega ** np.arange(d))
    ops = []
    xp = np.eye(d)
    for p in range(d):
        zq = np.eye(d)
        for q in range(d):
            if p or q:
                ops.append(xp @ zq)
            zq = zq @ z
        xp = xp @ x
    return np.array(ops)


def loss_and_grad(params: np.ndarray, ops: np.ndarray, c: float):
    d = ops.shape[1]
    z = params[:d] + 1j * params[d:]
    n = float(np.real(np.vdot(z, z)))
    dz = ops @ z                       # (m, d)
    t = dz @ z.conj()                  # t_k = <z|D_k|z>
    f = (t.real**2 + t.imag**2) / n**2 - c
    loss = float(np.sum(f**2))
    # dloss/d(conj z) = sum_k 2 f_k [ (conj t_k) D_k z + t_k D_k^H z ] / n^2
    #                   - sum_k 4 f_k |t_k|^2 z / n^3
    w = 2.0 * f / n**2
    g = (w * t.conj()) @ dz + np.einsum("k,kij,j->i", w * t, ops.conj(), z.conj()).conj()
    g -= (2.0 / n) * np.sum(f * (t.real**2 + t.imag**2) * 2.0 / n**2) * z
    grad = np.concatenate([2 * g.real, 2 * g.imag])
    return loss, grad


def search(d: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    ops = displacements(d)
    c = 1.0 / (d + 1)
    best_v, best_loss = None, np.inf
    for attempt in range(MAX_RESTARTS):
        z0 = rng.standard_normal(2 * d)
        res = minimize(
            loss_and_grad,
            z0,
            args=(ops, c),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 20000, "ftol": 1e-18, "gtol": 1e-14},
        )
        x = res.x
        loss, _ = loss_and_grad(x, ops, c)
        if loss < 1e6 * LOSS_TARGET:
            # promising basin: polish with the gradient criterion only
            # (scipy's ftol is relative to max(|f|, 1) and stalls near zero)
            res = minimize(
                loss_and_grad, x, args=(ops, c), jac=True, method="L-BFGS-B",
                options={"maxiter": 50000, "ftol": 0.0, "gtol": 1e-16},
            )
            x = res.x
            loss, _ = loss_and_grad(x, ops, c)
        if loss < best_loss:
            v = x[:d] + 1j * x[d:]
            v /= np.linalg.norm(v)
            best_v, best_loss = v, loss
        if best_loss < LOSS_TARGET:
            return best_v, best_loss
    raise RuntimeError(f"d={d}: no fiducial below {LOSS_TARGET} in {MAX_RESTARTS} restarts "
                       f"(best {best_loss:.3e})")


def check(d: int, v: np.ndarray) -> tuple[float, float]:
    """Max |overlap^2 - 1/(d+1)| over the orbit and completeness defect."""
    ops = displacements(d)
    c = 1.0 / (d + 1)
    t = (ops @ v) @ v.conj()
    sym = float(np.max(np.abs(np.abs(t) ** 2 - c)))
    states = [v] + [op @ v for op in ops]
    total = sum(np.outer(s, s.conj()) for s in states) / d
    comp = float(np.max(np.abs(total - np.eye(d))))
    return sym, comp


def main() -> int:
    rng = np.random.default_rng(20240817)
    out: dict[str, list[list[float]]] = {}

    # d = 3 has an exact fiducial; verify it and store it verbatim.
    v3 = np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0)
    sym, comp = check(3, v3)
    print(f"d= 3 exact candidate: symmetry {sym:.3e}, completeness {comp:.3e}")
    if sym > 1e-12:
        print("  -> candidate rejected, falling back to search")
        v3 = None

    for d in range(D_MIN, D_MAX + 1):
        if d == 3 and v3 is not None:
            v = v3
        else:
            v, loss = search(d, rng)
        sym, comp = check(d, v)
        status = "ok" if sym < 1e-10 and comp < 1e-12 else "FAIL"
        print(f"d={d:2d}: symmetry {sym:.3e}, completeness {comp:.3e}  [{status}]")
        if status == "FAIL":
            return 1
        # fix the global phase (largest component real and positive)
        k = int(np.argmax(np.abs(v)))
        v = v * np.exp(-1j * np.angle(v[k]))
        out[str(d)] = [[float(x.real), float(x.imag)] for x in v]

    dest = Path(__file__).resolve().parent.parent / "src" / "qestim" / "data" / "sic_fiducials.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(out, indent=1))
    print(f"wrote {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
