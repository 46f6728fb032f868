"""Scheme optimization: the design loop of scenario -> objective -> update.

Scenarios choose which scheme variables are free (controls, probe state,
measurement, or combinations); objectives score a candidate scheme by a
Fisher-information scalar or the Holevo bound; algorithms drive the update
(gradient ascent with backtracking, particle swarm, differential evolution).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._linalg import (
    ValidationError,
    as_matrix,
    commutator_superop,
    gell_mann_basis,
    hermitize,
    unvec,
    vec,
)
from .dynamics import (
    KrausSpec,
    LindbladSpec,
    _build_generator,
    _segment_of,
    evolve,
    kraus_apply,
)
from .holevo import hcrb
from .io import to_jsonable, write_csv, write_json
from .metrology import SldConfig, _cfim_matrix, _eigen_frame, _fisher_sld, sld
from .scheme import MeasurementSpec, ProbeState, Scheme

__all__ = [
    "ControlOpt",
    "StateOpt",
    "MeasurementOpt",
    "CompOpt",
    "ObjectiveConfig",
    "GRAPE",
    "PSO",
    "DE",
    "OptimizationRecord",
    "optimize",
]

# Convergence rule shared by all algorithms: the best objective must move
# less than this relative amount for this many consecutive iterations.
_REL_TOL = 1e-8
_PATIENCE = 20

_PROB_TOL = 1e-14


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ControlOpt:
    """Optimize piecewise-constant control amplitudes.

    ``ctrl0`` seeds the amplitudes (defaults to the scheme's current ones);
    ``ctrl_bound`` overrides the control spec's (lo, hi) box.
    """

    ctrl0: object = None
    ctrl_bound: tuple | None = None


@dataclass(frozen=True)
class StateOpt:
    """Optimize the pure probe state (normalized after every update)."""

    psi0: object = None


@dataclass(frozen=True)
class MeasurementOpt:
    """Optimize the measurement.

    mtype "Projection" optimizes an orthonormal rank-one projective basis,
    "LC" nonnegative linear combinations of the input POVM elements
    (renormalized to completeness), "Rotation" a unitary exp(iG) applied to
    the input POVM, with G Hermitian in the Gell-Mann basis.
    """

    mtype: str = "Projection"
    povm0: object = None

    def __post_init__(self):
        if self.mtype not in ("Projection", "LC", "Rotation"):
            raise ValidationError(
                f"mtype must be Projection, LC or Rotation, got {self.mtype!r}"
            )


@dataclass(frozen=True)
class CompOpt:
    """Comprehensive optimization over several variable groups.

    type: SM (state+measurement), SC (state+control), CM (control+measurement)
    or SCM (all three). Measurement blocks use the Projection parameterization
    unless ``mtype`` says otherwise.
    """

    type: str = "SM"
    psi0: object = None
    ctrl0: object = None
    ctrl_bound: tuple | None = None
    povm0: object = None
    mtype: str = "Projection"

    def __post_init__(self):
        if self.type not in ("SM", "SC", "CM", "SCM"):
            raise ValidationError(
                f"CompOpt type must be SM, SC, CM or SCM, got {self.type!r}"
            )
        if self.mtype not in ("Projection", "LC", "Rotation"):
            raise ValidationError(
                f"mtype must be Projection, LC or Rotation, got {self.mtype!r}"
            )


# ---------------------------------------------------------------------------
# objectives and algorithms


@dataclass(frozen=True)
class ObjectiveConfig:
    """What to optimize: QFIM/CFIM scalar or the HCRB.

    Single-parameter Fisher objectives are maximized; multiparameter ones
    minimize Tr(W F^-1); HCRB is always minimized. ``direction`` overrides
    the inferred sense.
    """

    kind: str = "QFIM"
    weight: object = None
    direction: str | None = None

    def __post_init__(self):
        if self.kind not in ("QFIM", "CFIM", "HCRB"):
            raise ValidationError(
                f"objective kind must be QFIM, CFIM or HCRB, got {self.kind!r}"
            )
        if self.direction not in (None, "max", "min"):
            raise ValidationError("direction must be 'max' or 'min'")
        if self.weight is not None:
            w = hermitize(as_matrix(self.weight, "weight"), name="weight")
            if float(np.linalg.eigvalsh(w)[0]) < -1e-10:
                raise ValidationError("weight matrix must be PSD")
            object.__setattr__(self, "weight", np.real(w))


@dataclass(frozen=True)
class GRAPE:
    """Gradient ascent on control amplitudes with backtracking halving."""

    learning_rate: float = 0.01
    max_episode: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_episode < 1:
            raise ValidationError("max_episode must be at least 1")


@dataclass(frozen=True)
class PSO:
    population: int = 10
    inertia: float = 1.0
    cognitive: float = 2.0
    social: float = 2.0
    max_episode: int = 1000
    seed: int = 1234

    def __post_init__(self):
        if self.population < 2:
            raise ValidationError("PSO population must be at least 2")
        if self.max_episode < 1:
            raise ValidationError("max_episode must be at least 1")


@dataclass(frozen=True)
class DE:
    population: int = 10
    mutation: float = 1.0
    crossover: float = 0.5
    max_episode: int = 1000
    seed: int = 1234

    def __post_init__(self):
        if self.population < 2:
            raise ValidationError("DE population must be at least 2")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValidationError("crossover rate must lie in [0, 1]")
        if self.max_episode < 1:
            raise ValidationError("max_episode must be at least 1")


@dataclass
class OptimizationRecord:
    """Per-iteration best objective log plus the winning variables."""

    objectives: np.ndarray
    best_objective: float
    best_variables: dict
    converged: bool
    reason: str
    wall_time: float
    direction: str
    history: list | None = None


# ---------------------------------------------------------------------------
# variable blocks


class _ControlBlock:
    name = "controls"

    def __init__(self, scheme, ctrl0, ctrl_bound):
        param = scheme.param
        if not isinstance(param, LindbladSpec) or not param.controls.hc:
            raise ValidationError(
                "control optimization needs Lindblad dynamics with control "
                "Hamiltonians"
            )
        current = param.controls.amplitudes(param.tspan)
        if ctrl0 is not None:
            ctrl0 = np.asarray(ctrl0, dtype=float)
            if ctrl0.shape != current.shape:
                raise ValidationError(
                    f"ctrl0 shape {ctrl0.shape} != expected {current.shape}"
                )
            current = ctrl0
        lo, hi = ctrl_bound if ctrl_bound is not None else param.controls.bounds
        if not lo < hi:
            raise ValidationError(f"control bounds must satisfy lo < hi, got {(lo, hi)}")
        self.shape = current.shape
        self.size = current.size
        self.lo, self.hi = float(lo), float(hi)
        self._x0 = np.clip(current, self.lo, self.hi).ravel()

    def initial(self):
        return self._x0.copy()

    def random(self, rng):
        if np.isfinite(self.lo) and np.isfinite(self.hi):
            return rng.uniform(self.lo, self.hi, self.size)
        return self._x0 + rng.standard_normal(self.size)

    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)

    def apply(self, scheme, x):
        param = scheme.param
        controls = param.controls.with_amplitudes(x.reshape(self.shape))
        return scheme.replace(param=param.replace(controls=controls))

    def describe(self, x):
        return {"controls": x.reshape(self.shape).copy()}


class _StateBlock:
    name = "state"

    def __init__(self, scheme, psi0):
        d = scheme.dim
        if psi0 is not None:
            psi = np.asarray(psi0, dtype=complex).reshape(-1)
            if psi.shape != (d,):
                raise ValidationError(f"psi0 must be a length-{d} vector")
        elif scheme.probe.kind == "pure":
            psi = scheme.probe.data.copy()
        else:
            raise ValidationError(
                "StateOpt optimizes pure probes; give psi0 explicitly for a "
                "mixed-probe scheme"
            )
        self.d = d
        self.size = 2 * d
        self._x0 = self.clamp(np.concatenate([psi.real, psi.imag]))

    def _vector(self, x):
        return x[: self.d] + 1j * x[self.d :]

    def initial(self):
        return self._x0.copy()

    def random(self, rng):
        return rng.standard_normal(self.size)

    def clamp(self, x):
        psi = self._vector(x)
        norm = float(np.linalg.norm(psi))
        if norm < 1e-12:
            psi = np.full(self.d, 1.0 / np.sqrt(self.d), dtype=complex)
        else:
            psi = psi / norm
        return np.concatenate([psi.real, psi.imag])

    def apply(self, scheme, x):
        return scheme.replace(probe=ProbeState.from_array(self._vector(x)))

    def describe(self, x):
        return {"state": self._vector(x).copy()}


def _kets_from_povm(povm, d):
    kets = []
    for elem in povm:
        w, v = np.linalg.eigh(np.asarray(elem, dtype=complex))
        kets.append(v[:, -1] * np.sqrt(max(w[-1], 0.0)))
    m = np.stack(kets)
    if m.shape != (d, d):
        raise ValidationError(
            f"Projection optimization needs {d} rank-one elements, got {m.shape[0]}"
        )
    return m


class _ProjectionBlock:
    name = "povm"

    def __init__(self, scheme, povm0):
        d = scheme.dim
        self.d = d
        self.size = 2 * d * d
        if povm0 is not None:
            kets = _kets_from_povm(povm0, d)
        else:
            kets = np.eye(d, dtype=complex)
        self._x0 = self.clamp(
            np.concatenate([kets.real.ravel(), kets.imag.ravel()])
        )

    def _kets(self, x):
        d = self.d
        return (x[: d * d] + 1j * x[d * d :]).reshape(d, d)

    def initial(self):
        return self._x0.copy()

    def random(self, rng):
        return rng.standard_normal(self.size)

    def clamp(self, x):
        # Orthonormalize the kets (rows) with a phase-fixed QR so the map is
        # continuous around the current point.
        kets = self._kets(x)
        q, r = np.linalg.qr(kets.conj().T)
        diag = np.diagonal(r).copy()
        phase = np.where(np.abs(diag) > 0, diag / np.where(np.abs(diag) > 0, np.abs(diag), 1.0), 1.0)
        kets = (q * phase[None, :]).conj().T
        return np.concatenate([kets.real.ravel(), kets.imag.ravel()])

    def _povm(self, x):
        kets = self._kets(x)
        return tuple(np.outer(k, k.conj()) for k in kets)

    def apply(self, scheme, x):
        return scheme.replace(measurement=MeasurementSpec(self._povm(x)))

    def describe(self, x):
        return {"povm": [m.copy() for m in self._povm(x)]}


class _LCBlock:
    name = "povm"

    def __init__(self, scheme, povm0):
        base = tuple(povm0) if povm0 is not None else scheme.measurement.povm
        self.base = tuple(np.asarray(m, dtype=complex) for m in base)
        self.k = len(self.base)
        self.size = self.k * self.k
        self._x0 = np.eye(self.k).ravel()

    def initial(self):
        return self._x0.copy()

    def random(self, rng):
        return rng.uniform(0.0, 1.0, self.size)

    def clamp(self, x):
        c = np.abs(x.reshape(self.k, self.k))
        colsum = c.sum(axis=0)
        dead = colsum <= 0
        if np.any(dead):
            c[:, dead] = 1.0 / self.k
            colsum = c.sum(axis=0)
        return (c / colsum).ravel()

    def _povm(self, x):
        c = x.reshape(self.k, self.k)
        return tuple(
            sum(c[i, j] * self.base[j] for j in range(self.k)) for i in range(self.k)
        )

    def apply(self, scheme, x):
        return scheme.replace(measurement=MeasurementSpec(self._povm(x)))

    def describe(self, x):
        return {"povm": [m.copy() for m in self._povm(x)]}


class _RotationBlock:
    name = "povm"

    def __init__(self, scheme, povm0):
        base = tuple(povm0) if povm0 is not None else scheme.measurement.povm
        self.base = tuple(np.asarray(m, dtype=complex) for m in base)
        d = scheme.dim
        self.basis = gell_mann_basis(d, include_identity=False)
        self.size = len(self.basis)
        self._x0 = np.zeros(self.size)

    def initial(self):
        return self._x0.copy()

    def random(self, rng):
        return rng.standard_normal(self.size)

    def clamp(self, x):
        return x

    def _povm(self, x):
        gen = sum(g * b for g, b in zip(x, self.basis))
        u = scipy.linalg.expm(1j * gen)
        return tuple(u @ m @ u.conj().T for m in self.base)

    def apply(self, scheme, x):
        return scheme.replace(measurement=MeasurementSpec(self._povm(x)))

    def describe(self, x):
        return {"rotation": x.copy(), "povm": [m.copy() for m in self._povm(x)]}


def _measurement_block(scheme, mtype, povm0):
    if mtype == "Projection":
        return _ProjectionBlock(scheme, povm0)
    if mtype == "LC":
        return _LCBlock(scheme, povm0)
    return _RotationBlock(scheme, povm0)


# ---------------------------------------------------------------------------
# the optimization problem


def _final_state(scheme):
    param = scheme.param
    if isinstance(param, LindbladSpec):
        return evolve(param, scheme.probe).at(-1)
    if isinstance(param, KrausSpec):
        rho, drho = kraus_apply(param, scheme.probe)
        return rho, [drho[a] for a in range(drho.shape[0])]
    raise ValidationError(
        f"unsupported parameterization of type {type(param).__name__}"
    )


class _Problem:
    def __init__(self, scheme, scenario, objective):
        self.scheme = scheme
        self.objective = objective
        if isinstance(scenario, ControlOpt):
            blocks = [_ControlBlock(scheme, scenario.ctrl0, scenario.ctrl_bound)]
        elif isinstance(scenario, StateOpt):
            blocks = [_StateBlock(scheme, scenario.psi0)]
        elif isinstance(scenario, MeasurementOpt):
            blocks = [_measurement_block(scheme, scenario.mtype, scenario.povm0)]
        elif isinstance(scenario, CompOpt):
            blocks = []
            if "S" in scenario.type:
                blocks.append(_StateBlock(scheme, scenario.psi0))
            if "C" in scenario.type:
                blocks.append(
                    _ControlBlock(scheme, scenario.ctrl0, scenario.ctrl_bound)
                )
            if "M" in scenario.type:
                blocks.append(
                    _measurement_block(scheme, scenario.mtype, scenario.povm0)
                )
        else:
            raise ValidationError(
                f"unknown scenario of type {type(scenario).__name__}"
            )
        self.blocks = blocks
        self.slices = []
        off = 0
        for b in blocks:
            self.slices.append(slice(off, off + b.size))
            off += b.size
        self.dim = off

        if any(b.name == "povm" for b in blocks) and objective.kind != "CFIM":
            raise ValidationError(
                "measurement optimization needs a CFIM objective (QFIM and "
                "HCRB do not depend on the measurement)"
            )

        n = scheme.n_params
        self.n_params = n
        if objective.weight is not None:
            w = np.asarray(objective.weight, dtype=float)
            if w.shape != (n, n):
                raise ValidationError(f"weight must be {n}x{n}, got {w.shape}")
            self.weight = w
        else:
            self.weight = np.eye(n)
        if objective.direction is not None:
            self.direction = objective.direction
        elif objective.kind == "HCRB" or n > 1:
            self.direction = "min"
        else:
            self.direction = "max"
        self.sld_config = SldConfig()

        self.x0 = self.clamp(np.concatenate([b.initial() for b in blocks]))
        self.v0 = self.value(self.x0)
        if not np.isfinite(self.v0):
            raise ValidationError("objective is not finite at the initial point")

    # -- variable handling

    def clamp(self, x):
        return np.concatenate(
            [b.clamp(np.asarray(x[s], dtype=float)) for b, s in zip(self.blocks, self.slices)]
        )

    def random(self, rng):
        return self.clamp(
            np.concatenate([b.random(rng) for b in self.blocks])
        )

    def build(self, x):
        scheme = self.scheme
        for b, s in zip(self.blocks, self.slices):
            scheme = b.apply(scheme, x[s])
        return scheme

    def variables(self, x):
        out = {}
        for b, s in zip(self.blocks, self.slices):
            out.update(b.describe(x[s]))
        return out

    # -- objective plumbing

    def value(self, x):
        return self.value_of_scheme(self.build(x))

    def value_of_scheme(self, scheme):
        rho, drho = _final_state(scheme)
        return self._value_from_state(scheme, rho, drho)

    def _value_from_state(self, scheme, rho, drho):
        kind = self.objective.kind
        n = self.n_params
        if kind == "HCRB":
            return float(hcrb(rho, drho, self.weight))
        if kind == "QFIM":
            lam, _, rotated = _eigen_frame(rho, drho)
            fisher = _fisher_sld(lam, rotated, self.sld_config.eps)
        else:
            fisher = _cfim_matrix(rho, drho, scheme.measurement.povm)
        if n == 1:
            return float(fisher[0, 0])
        try:
            return float(np.trace(np.linalg.solve(fisher, self.weight)))
        except np.linalg.LinAlgError:
            return float("inf")

    def score(self, value):
        if not np.isfinite(value):
            return -np.inf
        return value if self.direction == "max" else -value


# ---------------------------------------------------------------------------
# iteration bookkeeping


class _Tracker:
    def __init__(self, problem, savefile):
        self.problem = problem
        self.log = []
        self.best_score = -np.inf
        self.best_value = np.nan
        self.best_x = None
        self.history = [] if savefile else None
        self._streak = 0
        self.converged = False
        self.reason = "iteration cap reached"

    def offer(self, score, value, x):
        if score > self.best_score:
            self.best_score = score
            self.best_value = value
            self.best_x = np.array(x, dtype=float, copy=True)

    def log_iteration(self):
        """Append the best-so-far objective; True when converged."""
        if self.log:
            prev = self.log[-1]
            rel = abs(self.best_value - prev) / max(abs(self.best_value), 1e-300)
            self._streak = self._streak + 1 if rel < _REL_TOL else 0
        self.log.append(self.best_value)
        if self.history is not None:
            self.history.append(self.problem.variables(self.best_x))
        if self._streak >= _PATIENCE:
            self.converged = True
            self.reason = (
                f"objective change below {_REL_TOL:g} for {_PATIENCE} iterations"
            )
            return True
        return False


# ---------------------------------------------------------------------------
# GRAPE: exact forward sensitivities on the expm path


def _augmented_expm(spec, probe):
    """Evolve rho, parameter sensitivities, and control-amplitude
    sensitivities (plus their mixed second derivatives) in one pass.

    Returns (rho, [drho_a], sigma, tau) at the final time, where
    sigma[j, s] = d rho / d c_{j,s} and tau[j, s, a] = d drho_a / d c_{j,s}.
    """
    if not isinstance(probe, ProbeState):
        probe = ProbeState.from_array(probe)
    tspan = spec.tspan
    n_sub = len(tspan) - 1
    d = spec.dim
    m = d * d
    n = spec.n_params
    ham = spec.hamiltonian
    amp = spec.controls.amplitudes(tspan)
    kc = amp.shape[0]
    n_seg = amp.shape[1]
    hc = spec.controls.hc
    gc = [commutator_superop(h) for h in hc]
    decay_ops = [ch.operator for ch in spec.decays]

    group = 1 + n  # blocks per born sensitivity group: sigma + its tau's
    y = np.zeros((1 + n, m), dtype=complex)
    y[0] = vec(probe.density_matrix())
    born = np.zeros((n_seg, kc, group, m), dtype=complex)

    prev_key = None
    prop = None
    cur_seg = 0
    for k in range(n_sub):
        seg = _segment_of(k, n_sub, n_seg)
        if seg != cur_seg:
            cur_seg = seg
        t0 = float(tspan[k])
        dt = float(tspan[k + 1]) - t0
        idx = k if ham.variant == "time_series" else None
        h0, dh_list = ham.at(t0, index=idx)
        h_tot = h0 + sum(amp[j, seg] * hc[j] for j in range(kc))
        gammas = [ch.rate_at(k, len(tspan)) for ch in spec.decays]
        lmat, gphys = _build_generator(h_tot, dh_list, gammas, decay_ops)

        nb = 1 + n + kc + kc * n
        big = np.zeros((nb * m, nb * m), dtype=complex)
        for blk in range(nb):
            big[blk * m : (blk + 1) * m, blk * m : (blk + 1) * m] = lmat
        for a in range(n):
            big[(1 + a) * m : (2 + a) * m, :m] = gphys[a]
        for j in range(kc):
            row = (1 + n + j) * m
            big[row : row + m, :m] = gc[j]
        for j in range(kc):
            for a in range(n):
                row = (1 + n + kc + j * n + a) * m
                big[row : row + m, (1 + n + j) * m : (2 + n + j) * m] = gphys[a]
                big[row : row + m, (1 + a) * m : (2 + a) * m] = gc[j]

        if (
            prev_key is not None
            and abs(dt - prev_key[1]) <= 1e-14 * max(1.0, abs(dt))
            and np.array_equal(big, prev_key[0])
        ):
            pass
        else:
            prop = scipy.linalg.expm(big * dt)
            prev_key = (big, dt)

        gsz = (1 + n) * m
        p_phys = prop[:gsz, :gsz]
        # previously born groups evolve with the physical propagator
        for s in range(seg):
            flat = born[s].reshape(kc, group * m)
            born[s] = (flat @ p_phys.T).reshape(kc, group, m)
        # the active segment's group rides the full augmented propagator
        z = np.concatenate(
            [y.ravel(), born[seg, :, 0, :].ravel(), born[seg, :, 1:, :].ravel()]
        )
        z = prop @ z
        y = z[:gsz].reshape(1 + n, m)
        born[seg, :, 0, :] = z[gsz : gsz + kc * m].reshape(kc, m)
        born[seg, :, 1:, :] = z[gsz + kc * m :].reshape(kc, n, m)

    rho = unvec(y[0], d)
    drho = [unvec(y[1 + a], d) for a in range(n)]
    sigma = np.empty((kc, n_seg, d, d), dtype=complex)
    tau = np.empty((kc, n_seg, n, d, d), dtype=complex)
    for s in range(n_seg):
        for j in range(kc):
            sigma[j, s] = unvec(born[s, j, 0], d)
            for a in range(n):
                tau[j, s, a] = unvec(born[s, j, 1 + a], d)
    return rho, drho, sigma, tau


def _grape_value_and_grad(problem, x):
    """Objective value and its gradient w.r.t. the control amplitudes."""
    scheme = problem.build(x)
    param = scheme.param
    if param.dyn_method != "expm":
        # finite-difference fallback for the adaptive integration path
        h = 1e-6
        grad = np.empty(problem.dim)
        for i in range(problem.dim):
            xp = x.copy()
            xp[i] = x[i] + h
            xm = x.copy()
            xm[i] = x[i] - h
            grad[i] = (problem.value(xp) - problem.value(xm)) / (2 * h)
        return problem.value(x), grad

    rho, drho, sigma, tau = _augmented_expm(param, scheme.probe)
    n = problem.n_params
    kind = problem.objective.kind
    kc, n_seg = sigma.shape[0], sigma.shape[1]
    grad = np.zeros((kc, n_seg))

    if kind == "QFIM":
        lds = [sld(rho, drho[a], problem.sld_config) for a in range(n)]
        lam, _, rotated = _eigen_frame(rho, drho)
        fisher = _fisher_sld(lam, rotated, problem.sld_config.eps)
        if n == 1:
            value = float(fisher[0, 0])
            l2 = lds[0] @ lds[0]
            for j in range(kc):
                for s in range(n_seg):
                    grad[j, s] = 2.0 * float(
                        np.real(np.trace(tau[j, s, 0] @ lds[0]))
                    ) - float(np.real(np.trace(sigma[j, s] @ l2)))
        else:
            finv = np.linalg.solve(fisher, np.eye(n))
            value = float(np.trace(problem.weight @ finv))
            mmat = finv @ problem.weight @ finv
            acomm = [
                [lds[a] @ lds[b] + lds[b] @ lds[a] for b in range(n)]
                for a in range(n)
            ]
            for j in range(kc):
                for s in range(n_seg):
                    dfisher = np.empty((n, n))
                    for a in range(n):
                        for b in range(a, n):
                            term = (
                                float(np.real(np.trace(tau[j, s, a] @ lds[b])))
                                + float(np.real(np.trace(tau[j, s, b] @ lds[a])))
                                - 0.5
                                * float(np.real(np.trace(sigma[j, s] @ acomm[a][b])))
                            )
                            dfisher[a, b] = dfisher[b, a] = term
                    grad[j, s] = -float(np.sum(mmat * dfisher))
    else:  # CFIM
        povm = [as_matrix(p, "POVM element") for p in scheme.measurement.povm]
        probs = np.array([float(np.real(np.trace(rho @ p))) for p in povm])
        dprobs = np.array(
            [
                [float(np.real(np.trace(drho[a] @ p))) for p in povm]
                for a in range(n)
            ]
        )
        keep = probs >= _PROB_TOL
        if n == 1:
            value = float(np.sum(dprobs[0, keep] ** 2 / probs[keep]))
            for j in range(kc):
                for s in range(n_seg):
                    dp_c = np.array(
                        [float(np.real(np.trace(sigma[j, s] @ p))) for p in povm]
                    )
                    ddp_c = np.array(
                        [float(np.real(np.trace(tau[j, s, 0] @ p))) for p in povm]
                    )
                    grad[j, s] = float(
                        np.sum(
                            (
                                2.0 * dprobs[0, keep] * ddp_c[keep]
                                - dprobs[0, keep] ** 2 * dp_c[keep] / probs[keep]
                            )
                            / probs[keep]
                        )
                    )
        else:
            fisher = np.zeros((n, n))
            for a in range(n):
                for b in range(n):
                    fisher[a, b] = float(
                        np.sum(dprobs[a, keep] * dprobs[b, keep] / probs[keep])
                    )
            finv = np.linalg.solve(fisher, np.eye(n))
            value = float(np.trace(problem.weight @ finv))
            mmat = finv @ problem.weight @ finv
            for j in range(kc):
                for s in range(n_seg):
                    dp_c = np.array(
                        [float(np.real(np.trace(sigma[j, s] @ p))) for p in povm]
                    )
                    ddp_c = np.array(
                        [
                            [float(np.real(np.trace(tau[j, s, a] @ p))) for p in povm]
                            for a in range(n)
                        ]
                    )
                    dfisher = np.empty((n, n))
                    for a in range(n):
                        for b in range(a, n):
                            term = float(
                                np.sum(
                                    (
                                        ddp_c[a, keep] * dprobs[b, keep]
                                        + dprobs[a, keep] * ddp_c[b, keep]
                                        - dprobs[a, keep]
                                        * dprobs[b, keep]
                                        * dp_c[keep]
                                        / probs[keep]
                                    )
                                    / probs[keep]
                                )
                            )
                            dfisher[a, b] = dfisher[b, a] = term
                    grad[j, s] = -float(np.sum(mmat * dfisher))

    return value, grad.ravel()


def _run_grape(problem, cfg, tracker):
    if len(problem.blocks) != 1 or not isinstance(problem.blocks[0], _ControlBlock):
        raise ValidationError("GRAPE applies to ControlOpt scenarios only")
    if problem.objective.kind == "HCRB":
        raise ValidationError(
            "GRAPE needs a differentiable objective (QFIM or CFIM scalar)"
        )
    x = problem.x0
    value, grad = _grape_value_and_grad(problem, x)
    score = problem.score(value)
    sign = 1.0 if problem.direction == "max" else -1.0
    tracker.offer(score, value, x)
    tracker.log_iteration()
    for _ in range(cfg.max_episode):
        improved = False
        step = cfg.learning_rate
        for _ in range(40):
            xn = problem.clamp(x + step * sign * grad)
            vn = problem.value(xn)
            sn = problem.score(vn)
            if sn > score:
                improved = True
                break
            step *= 0.5
        if improved:
            x, score = xn, sn
            value, grad = _grape_value_and_grad(problem, x)
            score = problem.score(value)
        tracker.offer(score, value, x)
        if tracker.log_iteration():
            break


# ---------------------------------------------------------------------------
# population algorithms


def _run_pso(problem, cfg, tracker):
    rng = np.random.default_rng(cfg.seed)
    pop = cfg.population
    xs = np.stack([problem.x0] + [problem.random(rng) for _ in range(pop - 1)])
    vel = np.zeros_like(xs)
    scores = np.empty(pop)
    values = np.empty(pop)
    for i in range(pop):
        values[i] = problem.value(xs[i])
        scores[i] = problem.score(values[i])
        tracker.offer(scores[i], values[i], xs[i])
    pbest_x = xs.copy()
    pbest_s = scores.copy()
    if tracker.log_iteration():
        return
    for _ in range(cfg.max_episode):
        gbest = tracker.best_x
        for i in range(pop):
            r1 = rng.random(problem.dim)
            r2 = rng.random(problem.dim)
            vel[i] = (
                cfg.inertia * vel[i]
                + cfg.cognitive * r1 * (pbest_x[i] - xs[i])
                + cfg.social * r2 * (gbest - xs[i])
            )
            xs[i] = problem.clamp(xs[i] + vel[i])
            values[i] = problem.value(xs[i])
            scores[i] = problem.score(values[i])
            if scores[i] > pbest_s[i]:
                pbest_s[i] = scores[i]
                pbest_x[i] = xs[i].copy()
            tracker.offer(scores[i], values[i], xs[i])
        if tracker.log_iteration():
            break


def _run_de(problem, cfg, tracker):
    rng = np.random.default_rng(cfg.seed)
    pop = cfg.population
    xs = np.stack([problem.x0] + [problem.random(rng) for _ in range(pop - 1)])
    scores = np.empty(pop)
    values = np.empty(pop)
    for i in range(pop):
        values[i] = problem.value(xs[i])
        scores[i] = problem.score(values[i])
        tracker.offer(scores[i], values[i], xs[i])
    if tracker.log_iteration():
        return
    for _ in range(cfg.max_episode):
        for i in range(pop):
            choices = [j for j in range(pop) if j != i]
            r1, r2, r3 = rng.choice(choices, size=3, replace=False)
            mutant = xs[r1] + cfg.mutation * (xs[r2] - xs[r3])
            cross = rng.random(problem.dim) < cfg.crossover
            cross[rng.integers(problem.dim)] = True
            trial = problem.clamp(np.where(cross, mutant, xs[i]))
            v = problem.value(trial)
            s = problem.score(v)
            if s >= scores[i]:
                xs[i], scores[i], values[i] = trial, s, v
            tracker.offer(scores[i], values[i], xs[i])
        if tracker.log_iteration():
            break


# ---------------------------------------------------------------------------
# entry point


def _write_outputs(record, scenario_name, algo_name, out_dir, savefile):
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{scenario_name}_{algo_name}_{time.strftime('%Y%m%d-%H%M%S')}"
    write_csv(
        os.path.join(out_dir, stem + ".csv"),
        ("iteration", "objective"),
        list(enumerate(record.objectives)),
    )
    payload = {
        "scenario": scenario_name,
        "algorithm": algo_name,
        "direction": record.direction,
        "best_objective": record.best_objective,
        "converged": record.converged,
        "reason": record.reason,
        "wall_time": record.wall_time,
        "variables": to_jsonable(record.best_variables),
    }
    if savefile and record.history is not None:
        payload["history"] = [to_jsonable(h) for h in record.history]
    write_json(os.path.join(out_dir, stem + ".json"), payload)


def optimize(
    scheme,
    scenario,
    algorithm,
    objective: ObjectiveConfig | None = None,
    savefile: bool = False,
    out_dir: str | None = None,
):
    """Optimize the scenario's variables; returns (scheme, record).

    ``savefile`` keeps (and writes, when ``out_dir`` is given) the full
    per-iteration variable history instead of only the objective log and the
    final variables.
    """
    objective = objective if objective is not None else ObjectiveConfig()
    problem = _Problem(scheme, scenario, objective)
    tracker = _Tracker(problem, savefile)
    start = time.perf_counter()
    if isinstance(algorithm, GRAPE):
        _run_grape(problem, algorithm, tracker)
    elif isinstance(algorithm, PSO):
        _run_pso(problem, algorithm, tracker)
    elif isinstance(algorithm, DE):
        _run_de(problem, algorithm, tracker)
    else:
        raise ValidationError(
            f"unknown algorithm of type {type(algorithm).__name__}"
        )
    wall = time.perf_counter() - start

    record = OptimizationRecord(
        objectives=np.array(tracker.log),
        best_objective=float(tracker.best_value),
        best_variables=problem.variables(tracker.best_x),
        converged=tracker.converged,
        reason=tracker.reason,
        wall_time=wall,
        direction=problem.direction,
        history=tracker.history,
    )
    best_scheme = problem.build(tracker.best_x)
    if out_dir is not None:
        _write_outputs(
            record,
            type(scenario).__name__,
            type(algorithm).__name__,
            out_dir,
            savefile,
        )
    return best_scheme, record
