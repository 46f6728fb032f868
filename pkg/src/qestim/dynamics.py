"""Open-system propagation with parameter derivatives.

``evolve`` solves the Lindblad master equation

    drho/dt = -i[H, rho] + sum_i gamma_i (G_i rho G_i† - {G_i†G_i, rho}/2)

together with the forward-sensitivity equations

    d(d_a rho)/dt = L_t(d_a rho) - i[d_a H, rho]

for every estimated parameter, either by per-sub-interval matrix
exponentials of the stacked vectorized generator ("expm") or by adaptive
Runge-Kutta integration ("ode").  ``kraus_apply`` is the discrete-channel
counterpart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from ._linalg import (
    ValidationError,
    commutator_superop,
    dissipator_superop,
    unvec,
    vec,
)
from ._ode import IntegrationError, integrate, integrate_affine
from .scheme import ControlSpec, DecayChannel, HamiltonianSpec, ProbeState

__all__ = [
    "LindbladSpec",
    "KrausSpec",
    "Trajectory",
    "EvolveError",
    "evolve",
    "kraus_apply",
    "DEFAULT_RTOL",
    "DEFAULT_ATOL",
]

# Defaults for the ODE path.  1e-10 keeps the two evolution paths within
# 1e-6 of each other even for stiff-phase systems (fast coherences at
# ~1e4 rad per time unit accumulate dispersion error linearly in the
# tolerance, so 1e-8 is not enough there).
DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-10

_DT_CACHE_TOL = 1e-14


class EvolveError(RuntimeError):
    """Propagation failure (non-finite state, step-size underflow)."""


@dataclass(frozen=True)
class LindbladSpec:
    """Lindblad parameterization: Hamiltonian + controls + decay channels.

    dyn_method selects the propagation path: "expm" (matrix exponential of
    the piecewise-constant generator) or "ode" (adaptive RK 5(4)).
    """

    hamiltonian: HamiltonianSpec
    tspan: np.ndarray
    controls: ControlSpec = field(default_factory=ControlSpec)
    decays: tuple = ()
    dyn_method: str = "expm"
    rtol: float | None = None
    atol: float | None = None

    def __post_init__(self):
        tspan = np.asarray(self.tspan, dtype=float).reshape(-1)
        if len(tspan) < 2:
            raise ValidationError("tspan must contain at least two times")
        if np.any(np.diff(tspan) <= 0):
            raise ValidationError("tspan must be strictly increasing")
        tspan = tspan.copy()
        tspan.setflags(write=False)
        object.__setattr__(self, "tspan", tspan)
        method = self.dyn_method.lower()
        if method not in ("expm", "ode"):
            raise ValidationError(
                f"dyn_method must be 'expm' or 'ode', got {self.dyn_method!r}"
            )
        object.__setattr__(self, "dyn_method", method)
        decays = tuple(
            d if isinstance(d, DecayChannel) else DecayChannel(*d) for d in self.decays
        )
        object.__setattr__(self, "decays", decays)
        d = self.hamiltonian.dim
        for i, ch in enumerate(decays):
            if ch.dim != d:
                raise ValidationError(f"decay operator {i} dimension {ch.dim} != {d}")
            if not np.isscalar(ch.rate) and len(ch.rate) != len(tspan):
                raise ValidationError(
                    f"decay rate vector {i} length {len(ch.rate)} != tspan length {len(tspan)}"
                )
        if self.hamiltonian.variant == "time_series" and len(
            self.hamiltonian.h0_series
        ) != len(tspan):
            raise ValidationError(
                "time-series Hamiltonian length must equal tspan length"
            )
        for i, hc in enumerate(self.controls.hc):
            if hc.shape[0] != d:
                raise ValidationError(f"control Hamiltonian {i} dimension mismatch")

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @property
    def n_params(self) -> int:
        return self.hamiltonian.n_params

    def replace(self, **kw) -> "LindbladSpec":
        fields = {
            "hamiltonian": self.hamiltonian,
            "tspan": self.tspan,
            "controls": self.controls,
            "decays": self.decays,
            "dyn_method": self.dyn_method,
            "rtol": self.rtol,
            "atol": self.atol,
        }
        fields.update(kw)
        return LindbladSpec(**fields)


@dataclass(frozen=True)
class KrausSpec:
    """Quantum channel in operator-sum form with parameter derivatives.

    ``dk[a][i]`` is the derivative of ``k[i]`` w.r.t. parameter a.  ``k`` and
    ``dk`` may be callables of the parameter vector ``u``.
    """

    k: object
    dk: object
    u: np.ndarray | None = None

    def __post_init__(self):
        if self.u is not None:
            u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
            u.setflags(write=False)
            object.__setattr__(self, "u", u)
        kmats, _ = self._realize()
        d = kmats[0].shape[0]
        total = sum(m.conj().T @ m for m in kmats)
        defect = float(np.max(np.abs(total - np.eye(d))))
        if defect > 1e-10:
            raise ValidationError(
                f"Kraus completeness violated: max |sum K†K - I| = {defect:.3e}"
            )

    def _realize(self):
        k, dk = self.k, self.dk
        if callable(k):
            if self.u is None:
                raise ValidationError("callable Kraus operators require u")
            uarg = self.u if self.u.size > 1 else float(self.u[0])
            k = k(uarg)
            dk = dk(uarg)
        kmats = [np.asarray(m, dtype=complex) for m in k]
        dkmats = [[np.asarray(m, dtype=complex) for m in row] for row in dk]
        d = kmats[0].shape[0]
        for m in kmats:
            if m.shape != (d, d):
                raise ValidationError("Kraus operators must share one square shape")
        for a, row in enumerate(dkmats):
            if len(row) != len(kmats):
                raise ValidationError(
                    f"dK[{a}] must hold one derivative per Kraus operator"
                )
        return kmats, dkmats

    @property
    def dim(self) -> int:
        return self._realize()[0][0].shape[0]

    @property
    def n_params(self) -> int:
        return len(self._realize()[1])

    def with_u(self, u) -> "KrausSpec":
        return KrausSpec(self.k, self.dk, u)


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed density matrices and their parameter derivatives."""

    times: np.ndarray
    rho: np.ndarray  # (T, d, d)
    drho: np.ndarray  # (T, n, d, d)
    method: str = "expm"
    h_max: float | None = None  # largest accepted ODE step, None on expm path

    def __post_init__(self):
        for name in ("times", "rho", "drho"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_params(self) -> int:
        return self.drho.shape[1]

    @property
    def dim(self) -> int:
        return self.rho.shape[1]

    def at(self, index: int = -1):
        """(rho, [d_a rho]) at one stored time."""
        return self.rho[index], [self.drho[index, a] for a in range(self.n_params)]


def _segment_of(k: int, n_sub: int, n_seg: int) -> int:
    return k // (n_sub // n_seg)


def _build_generator(h_tot, dh_list, gammas, decay_ops):
    """(L, [G_a]) for fixed Hamiltonian and rates."""
    L = commutator_superop(h_tot)
    for g, op in zip(gammas, decay_ops):
        if g != 0.0:
            L = L + g * dissipator_superop(op)
    G = [commutator_superop(m) for m in dh_list]
    return L, G


def _stack_generator(L, G):
    """Block-lower-triangular generator of the sensitivity system:
    L on every diagonal block, G_a feeding block a+1 from block 0."""
    n = len(G)
    m = L.shape[0]
    M = np.zeros(((n + 1) * m, (n + 1) * m), dtype=complex)
    M[:m, :m] = L
    for a in range(n):
        sl = slice((a + 1) * m, (a + 2) * m)
        M[sl, sl] = L
        M[sl, :m] = G[a]
    return M


def evolve(spec: LindbladSpec, probe) -> Trajectory:
    """Propagate probe and parameter sensitivities over spec.tspan."""
    if not isinstance(probe, ProbeState):
        probe = ProbeState.from_array(probe)
    d = spec.dim
    if probe.dim != d:
        raise ValidationError(
            f"dimension mismatch: probe is {probe.dim}, dynamics is {d}"
        )
    tspan = spec.tspan
    n_sub = len(tspan) - 1
    n = spec.n_params
    m = d * d
    ham = spec.hamiltonian

    amp = spec.controls.amplitudes(tspan)  # (n_c, n_seg)
    n_seg = amp.shape[1] if amp.size else max(1, n_sub)
    if amp.size == 0:
        n_seg = n_sub
    hc = spec.controls.hc
    decay_ops = [ch.operator for ch in spec.decays]

    rho_out = np.empty((n_sub + 1, d, d), dtype=complex)
    drho_out = np.empty((n_sub + 1, n, d, d), dtype=complex)
    rho_out[0] = probe.density_matrix()
    drho_out[0] = 0.0

    y = np.zeros((n + 1, m), dtype=complex)
    y[0] = vec(rho_out[0])

    rtol = DEFAULT_RTOL if spec.rtol is None else float(spec.rtol)
    atol = DEFAULT_ATOL if spec.atol is None else float(spec.atol)

    use_ode = spec.dyn_method == "ode"
    parametric_td = ham.variant == "parametric" and ham.time_dependent

    prev_key = None
    prop = None
    h_carry = None
    h_max_acc = 0.0

    for k in range(n_sub):
        t0, t1 = float(tspan[k]), float(tspan[k + 1])
        dt = t1 - t0
        idx = k if ham.variant == "time_series" else None
        h0, dh_list = ham.at(t0, index=idx)
        if hc:
            seg = _segment_of(k, n_sub, amp.shape[1])
            h_tot = h0 + sum(amp[j, seg] * hc[j] for j in range(len(hc)))
        else:
            h_tot = h0
        gam0 = [ch.rate_at(k, len(tspan)) for ch in spec.decays]

        if not use_ode:
            L, G = _build_generator(h_tot, dh_list, gam0, decay_ops)
            M = _stack_generator(L, G)
            if (
                prev_key is not None
                and abs(dt - prev_key[1]) <= _DT_CACHE_TOL * max(1.0, abs(dt))
                and np.array_equal(M, prev_key[0])
            ):
                pass  # reuse cached propagator
            else:
                prop = scipy.linalg.expm(M * dt)
                prev_key = (M, dt)
            y = (prop @ y.reshape(-1)).reshape(n + 1, m)
        elif parametric_td:
            # generator must be rebuilt at arbitrary t: generic RK path
            gam1 = [ch.rate_at(k + 1, len(tspan)) for ch in spec.decays]
            diss = [dissipator_superop(op) for op in decay_ops]

            def rhs(t, yy, _t0=t0, _dt=dt, _gam0=gam0, _gam1=gam1, _diss=diss,
                    _hc_part=(h_tot - h0)):
                h_t, dh_t = ham.at(t)
                L = commutator_superop(h_t + _hc_part)
                theta = (t - _t0) / _dt
                for g0, g1, dm in zip(_gam0, _gam1, _diss):
                    g = g0 + theta * (g1 - g0)
                    if g != 0.0:
                        L = L + g * dm
                out = yy @ L.T
                for a in range(n):
                    out[a + 1] += yy[0] @ commutator_superop(dh_t[a]).T
                return out

            try:
                y, h_carry, h_acc = integrate(rhs, t0, t1, y, rtol, atol, h0=h_carry)
            except IntegrationError as exc:
                raise EvolveError(str(exc)) from exc
            h_max_acc = max(h_max_acc, h_acc)
        else:
            L, G = _build_generator(h_tot, dh_list, gam0, decay_ops)
            dL = None
            if any(not np.isscalar(ch.rate) for ch in spec.decays):
                gam1 = [ch.rate_at(k + 1, len(tspan)) for ch in spec.decays]
                dL = np.zeros((m, m), dtype=complex)
                for g0, g1, op in zip(gam0, gam1, decay_ops):
                    if g1 != g0:
                        dL += (g1 - g0) * dissipator_superop(op)
            try:
                y, h_carry, h_acc = integrate_affine(
                    L, dL, G, t0, t1, y, rtol, atol, h0=h_carry
                )
            except IntegrationError as exc:
                raise EvolveError(str(exc)) from exc
            h_max_acc = max(h_max_acc, h_acc)

        if not np.all(np.isfinite(y.view(float))):
            raise EvolveError(f"non-finite values encountered at t = {t1!r}")
        rho_out[k + 1] = unvec(y[0], d)
        for a in range(n):
            drho_out[k + 1, a] = unvec(y[a + 1], d)

    return Trajectory(
        times=tspan,
        rho=rho_out,
        drho=drho_out,
        method=spec.dyn_method,
        h_max=(h_max_acc if use_ode else None),
    )


def kraus_apply(spec: KrausSpec, probe):
    """Apply the channel: returns (rho, drho) with drho shaped (n, d, d)."""
    if not isinstance(probe, ProbeState):
        probe = ProbeState.from_array(probe)
    kmats, dkmats = spec._realize()
    d = kmats[0].shape[0]
    if probe.dim != d:
        raise ValidationError(
            f"dimension mismatch: probe is {probe.dim}, channel is {d}"
        )
    rho0 = probe.density_matrix()
    rho = np.zeros((d, d), dtype=complex)
    for km in kmats:
        rho += km @ rho0 @ km.conj().T
    drho = np.zeros((len(dkmats), d, d), dtype=complex)
    for a, row in enumerate(dkmats):
        acc = np.zeros((d, d), dtype=complex)
        for km, dm in zip(kmats, row):
            t = dm @ rho0 @ km.conj().T
            acc += t + t.conj().T
        drho[a] = acc
    return rho, drho
