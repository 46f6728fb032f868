"""Estimation bounds: logarithmic derivatives, Fisher information, SDP and
Bayesian bounds.

Everything here is pure: bounds are computed either from explicit
``(rho, drho)`` data or from a :class:`~qestim.scheme.Scheme`, in which case
the scheme's dynamics are evolved and the bound is evaluated at every time
step (Kraus parameterizations have a single evaluation point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import ValidationError, as_matrix, hermitize
from .dynamics import KrausSpec, LindbladSpec, evolve, kraus_apply
from .holevo import hcrb, nhb
from .scheme import Scheme, grid_quadrature

__all__ = [
    "SldConfig",
    "BoundResult",
    "sld",
    "qfim",
    "cfim",
    "hcrb",
    "nhb",
    "vtb",
    "qvtb",
]

# Probability/derivative floor shared by the CFIM term rules and the
# infinity flags of the one-sided logarithmic derivatives.
_PROB_TOL = 1e-14

# Hermiticity tolerance for states coming out of an ODE integration, which
# accumulate a small non-Hermitian drift on top of round-off.
_STATE_HERM_TOL = 1e-8

_LD_TYPES = ("SLD", "RLD", "LLD")


@dataclass(frozen=True)
class SldConfig:
    """Eigenvalue truncation threshold for the logarithmic derivatives.

    Density-matrix eigenvalue sums (SLD) or eigenvalues (RLD/LLD) at or
    below ``eps`` are dropped from the spectral sums.
    """

    eps: float = 1e-8

    def __post_init__(self):
        eps = float(self.eps)
        if not eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps!r}")
        object.__setattr__(self, "eps", eps)


@dataclass(frozen=True)
class BoundResult:
    """A computed estimation bound.

    ``values`` holds a scalar (single parameter) or an n-by-n matrix, or a
    per-time stack of those when the bound was evaluated along a trajectory;
    ``times`` then carries the matching time grid.  ``truncation_report``
    records, per evaluation, the largest change any QFIM entry suffers from
    the ``eps`` eigenvalue truncation (0 whenever every eigenvalue of the
    state exceeds ``eps``).
    """

    quantity: str
    values: object
    times: np.ndarray | None = None
    ld_type: str | None = None
    weight: np.ndarray | None = None
    truncation_report: object = None


# ---------------------------------------------------------------------------
# spectral workhorses


def _eigen_frame(rho, drho, herm_tol=_STATE_HERM_TOL):
    """Eigenvalues of rho plus the derivatives rotated into its eigenbasis."""
    rho = hermitize(as_matrix(rho, "rho"), tol=herm_tol, name="rho")
    lam, basis = np.linalg.eigh(rho)
    rotated = [
        basis.conj().T
        @ hermitize(as_matrix(m, "drho"), tol=herm_tol, name="drho")
        @ basis
        for m in drho
    ]
    return lam, basis, rotated


def _fisher_sld(lam, rotated, cutoff):
    den = lam[:, None] + lam[None, :]
    keep = den > cutoff
    weight = np.where(keep, 2.0 / np.where(keep, den, 1.0), 0.0)
    n = len(rotated)
    fisher = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            val = float(np.real(np.sum(weight * rotated[a] * np.conj(rotated[b]))))
            fisher[a, b] = fisher[b, a] = val
    return fisher


def _fisher_one_sided(lam, rotated, cutoff, side):
    """RLD (side="row") or LLD (side="col") Fisher matrix with inf flags.

    In the eigenbasis the right/left operators divide each derivative entry
    by the row/column eigenvalue; eigenvalues at or below ``cutoff`` are
    excluded, and an entry is flagged infinite when the excluded rows or
    columns still carry weight of both derivatives.
    """
    good = lam > cutoff
    inv = np.where(good, 1.0 / np.where(good, lam, 1.0), 0.0)
    axis = 1 if side == "row" else 0
    weight = inv[:, None] if side == "row" else inv[None, :]
    n = len(rotated)
    fisher = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            prod = rotated[a] * np.conj(rotated[b])
            fisher[a, b] = np.sum(weight * prod)
            lost = np.sum(prod, axis=axis)
            if np.any(np.abs(lost[~good]) > _PROB_TOL):
                fisher[a, b] = np.inf
    return fisher


def _qfim_matrix(lam, rotated, ld_type, eps):
    """QFIM of one state plus the truncation delta (before vs after eps)."""
    if ld_type == "SLD":
        after = _fisher_sld(lam, rotated, eps)
        before = _fisher_sld(lam, rotated, 0.0)
    else:
        side = "row" if ld_type == "RLD" else "col"
        after = _fisher_one_sided(lam, rotated, eps, side)
        before = _fisher_one_sided(lam, rotated, 0.0, side)
    finite_after = np.isfinite(after)
    finite_both = finite_after & np.isfinite(before)
    delta = 0.0
    if np.any(finite_both):
        delta = float(np.max(np.abs(before[finite_both] - after[finite_both])))
    if np.any(np.isfinite(before) & ~finite_after):
        delta = float("inf")
    return after, delta


def _scheme_states(scheme):
    """Per-time (rho, [drho_a]) pairs of a scheme plus the time grid."""
    param = scheme.param
    if isinstance(param, LindbladSpec):
        traj = evolve(param, scheme.probe)
        states = [
            (traj.rho[t], [traj.drho[t, a] for a in range(traj.n_params)])
            for t in range(len(traj.times))
        ]
        return states, np.asarray(traj.times)
    if isinstance(param, KrausSpec):
        rho, drho = kraus_apply(param, scheme.probe)
        return [(rho, list(drho))], None
    raise ValidationError(
        f"unsupported parameterization of type {type(param).__name__}"
    )


def _squeeze(matrix):
    """1x1 matrices become plain floats (single-parameter convenience)."""
    m = np.asarray(matrix)
    if m.shape == (1, 1):
        return float(np.real(m[0, 0]))
    return m


def _stack(mats):
    if mats[0].shape == (1, 1):
        return np.array([float(np.real(m[0, 0])) for m in mats])
    return np.stack(mats)


# ---------------------------------------------------------------------------
# logarithmic derivatives and Fisher matrices


def sld(rho, drho_a, config: SldConfig | None = None) -> np.ndarray:
    """Symmetric logarithmic derivative: solves (rho L + L rho)/2 = drho_a.

    Computed in the eigenbasis of rho; matrix elements whose eigenvalue sum
    is at or below ``config.eps`` are set to zero.
    """
    cfg = config if config is not None else SldConfig()
    lam, basis, rotated = _eigen_frame(rho, [drho_a])
    dr = rotated[0]
    den = lam[:, None] + lam[None, :]
    keep = den > cfg.eps
    core = np.where(keep, 2.0 * dr / np.where(keep, den, 1.0), 0.0)
    out = basis @ core @ basis.conj().T
    return hermitize(out, tol=1e-10, name="sld")


def qfim(scheme_or_rho, drho=None, ld_type: str = "SLD", config=None) -> BoundResult:
    """Quantum Fisher information matrix.

    Accepts either a Scheme (per-time evaluation along its trajectory) or an
    explicit ``(rho, drho)`` pair.  ``ld_type`` selects the symmetric, right
    or left logarithmic derivative; RLD/LLD entries that diverge on a
    truncated eigenspace are flagged ``inf``.
    """
    cfg = config if config is not None else SldConfig()
    ld = str(ld_type).upper()
    if ld not in _LD_TYPES:
        raise ValidationError(f"ld_type must be one of {_LD_TYPES}, got {ld_type!r}")
    if isinstance(scheme_or_rho, Scheme):
        states, times = _scheme_states(scheme_or_rho)
        mats, deltas = [], []
        for rho_t, drho_t in states:
            lam, _, rotated = _eigen_frame(rho_t, drho_t)
            fisher, delta = _qfim_matrix(lam, rotated, ld, cfg.eps)
            mats.append(fisher)
            deltas.append(delta)
        if times is None:
            return BoundResult(
                "QFIM", _squeeze(mats[0]), ld_type=ld, truncation_report=deltas[0]
            )
        return BoundResult(
            "QFIM",
            _stack(mats),
            times=times,
            ld_type=ld,
            truncation_report=np.array(deltas),
        )
    if drho is None:
        raise ValidationError("qfim needs a Scheme or an explicit (rho, drho) pair")
    lam, _, rotated = _eigen_frame(scheme_or_rho, list(drho))
    fisher, delta = _qfim_matrix(lam, rotated, ld, cfg.eps)
    return BoundResult("QFIM", _squeeze(fisher), ld_type=ld, truncation_report=delta)


def _cfim_matrix(rho, drho, povm):
    rho = hermitize(as_matrix(rho, "rho"), tol=_STATE_HERM_TOL, name="rho")
    drs = [
        hermitize(as_matrix(m, "drho"), tol=_STATE_HERM_TOL, name="drho")
        for m in drho
    ]
    n = len(drs)
    fisher = np.zeros((n, n))
    for elem in povm:
        pi = as_matrix(elem, "POVM element")
        p = float(np.real(np.trace(rho @ pi)))
        grad = np.array([float(np.real(np.trace(d @ pi))) for d in drs])
        if p < _PROB_TOL:
            big = np.abs(grad) >= _PROB_TOL
            if np.any(big):
                fisher[np.outer(big, big)] = np.inf
            continue
        fisher += np.outer(grad, grad) / p
    return fisher


def cfim(scheme_or_rho, drho=None, povm=None):
    """Classical Fisher information matrix of a POVM.

    With a Scheme the POVM defaults to the scheme's measurement and the
    matrix is evaluated at every trajectory time (returning a BoundResult);
    with explicit ``(rho, drho, povm)`` the plain matrix is returned.
    Outcomes with probability below 1e-14 are skipped unless their
    probability derivative survives, in which case the affected entries are
    flagged ``inf``.
    """
    if isinstance(scheme_or_rho, Scheme):
        scheme = scheme_or_rho
        elems = scheme.measurement.povm if povm is None else tuple(povm)
        states, times = _scheme_states(scheme)
        mats = [_cfim_matrix(rho_t, drho_t, elems) for rho_t, drho_t in states]
        if times is None:
            return BoundResult("CFIM", _squeeze(mats[0]))
        return BoundResult("CFIM", _stack(mats), times=times)
    if drho is None or povm is None:
        raise ValidationError("cfim needs a Scheme or explicit (rho, drho, povm)")
    return _cfim_matrix(scheme_or_rho, drho, povm)


# ---------------------------------------------------------------------------
# Bayesian (Van Trees) bounds


def _final_state(scheme, u):
    """Evolve the scheme at parameter point u and return (rho, drho) at T."""
    param = scheme.param
    if isinstance(param, LindbladSpec):
        ham = param.hamiltonian
        if ham.variant != "parametric":
            raise ValidationError(
                "Bayesian bounds need a parametric Hamiltonian so the prior "
                "grid can be swept"
            )
        traj = evolve(param.replace(hamiltonian=ham.with_u(u)), scheme.probe)
        return traj.at(-1)
    if isinstance(param, KrausSpec):
        return kraus_apply(param.with_u(u), scheme.probe)
    raise ValidationError(
        f"unsupported parameterization of type {type(param).__name__}"
    )


def _van_trees(scheme, quantity, config):
    cfg = config if config is not None else SldConfig()
    if not isinstance(scheme, Scheme):
        raise ValidationError(f"{quantity.lower()} needs a Scheme")
    prior = scheme.prior
    if prior is None:
        raise ValidationError(f"{quantity.lower()} needs a scheme with a prior")
    grids = prior.x
    n = scheme.n_params
    shape = tuple(len(g) for g in grids)
    povm = scheme.measurement.povm

    fisher_grid = np.zeros(shape + (n, n))
    for idx in np.ndindex(shape):
        u = np.array([grids[a][idx[a]] for a in range(n)])
        rho, drho = _final_state(scheme, u)
        if quantity == "QVTB":
            lam, _, rotated = _eigen_frame(rho, drho)
            fisher = _fisher_sld(lam, rotated, cfg.eps)
        else:
            fisher = _cfim_matrix(rho, drho, povm)
        if not np.all(np.isfinite(fisher)):
            raise ValidationError(
                f"non-finite Fisher information at prior grid point {idx}"
            )
        fisher_grid[idx] = fisher

    info = np.empty((n, n))
    prior_info = np.empty((n, n))
    positive = prior.p > _PROB_TOL
    for a in range(n):
        for b in range(a, n):
            info[a, b] = info[b, a] = grid_quadrature(
                grids, prior.p * fisher_grid[..., a, b]
            )
            integrand = np.zeros(shape)
            np.divide(
                prior.dp[a] * prior.dp[b], prior.p, out=integrand, where=positive
            )
            prior_info[a, b] = prior_info[b, a] = grid_quadrature(grids, integrand)

    cov = np.linalg.inv(prior_info + info)
    return _squeeze((cov + cov.T) / 2)


def vtb(scheme, config: SldConfig | None = None):
    """Van Trees bound: (I_p + ∫ p(x) CFIM(x) dx)^-1 at the final time."""
    return _van_trees(scheme, "VTB", config)


def qvtb(scheme, config: SldConfig | None = None):
    """Quantum Van Trees bound: (I_p + ∫ p(x) QFIM(x) dx)^-1 at the final time."""
    return _van_trees(scheme, "QVTB", config)
