"""Scheme ingredients: probe states, Hamiltonians, controls, decay channels,
measurements, priors, and scheme assembly.

All types validate their invariants at construction and are immutable
afterwards (arrays are copied in and flagged read-only), so instances can be
shared freely across threads.
"""

from __future__ import annotations

import importlib.resources
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._linalg import (
    ValidationError,
    as_matrix,
    dag,
    hermitize,
    trapezoid_weights,
)

__all__ = [
    "ProbeState",
    "HamiltonianSpec",
    "ControlShape",
    "Zero",
    "Linear",
    "Sine",
    "Saw",
    "Triangle",
    "Gaussian",
    "GaussianEdge",
    "ControlSpec",
    "DecayChannel",
    "MeasurementSpec",
    "PriorSpec",
    "Scheme",
    "builtin_state",
    "control_shape_eval",
    "sic_povm",
    "make_general_scheme",
]

_UNIT_TOL = 1e-12
_PSD_TOL = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# probe states


@dataclass(frozen=True)
class ProbeState:
    """A probe state, either a pure state vector or a density matrix."""

    kind: str  # "pure" | "density"
    data: np.ndarray

    def __post_init__(self):
        if self.kind == "pure":
            v = np.asarray(self.data, dtype=complex).reshape(-1)
            norm = float(np.linalg.norm(v))
            if abs(norm - 1.0) > _UNIT_TOL:
                raise ValidationError(
                    f"pure probe vector must have unit norm (|norm-1| = {abs(norm-1):.3e})"
                )
            object.__setattr__(self, "data", _freeze(v))
        elif self.kind == "density":
            m = hermitize(self.data, name="probe density matrix")
            tr = float(np.real(np.trace(m)))
            if abs(tr - 1.0) > _UNIT_TOL:
                raise ValidationError(
                    f"probe density matrix must have unit trace (|tr-1| = {abs(tr-1):.3e})"
                )
            min_eig = float(np.linalg.eigvalsh(m)[0])
            if min_eig < -_PSD_TOL:
                raise ValidationError(
                    f"probe density matrix is not PSD (min eigenvalue {min_eig:.3e})"
                )
            object.__setattr__(self, "data", _freeze(m))
        else:
            raise ValidationError(f"unknown probe kind {self.kind!r}")

    @classmethod
    def from_array(cls, a) -> "ProbeState":
        arr = np.asarray(a, dtype=complex)
        return cls("pure", arr) if arr.ndim == 1 else cls("density", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def density_matrix(self) -> np.ndarray:
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)


def plus_state() -> ProbeState:
    return ProbeState("pure", np.array([1, 1]) / np.sqrt(2))


def minus_state() -> ProbeState:
    return ProbeState("pure", np.array([1, -1]) / np.sqrt(2))


def bell_state(index: int) -> ProbeState:
    s = 1 / np.sqrt(2)
    table = {
        1: [s, 0, 0, s],
        2: [s, 0, 0, -s],
        3: [0, s, s, 0],
        4: [0, s, -s, 0],
    }
    if index not in table:
        raise ValidationError(f"Bell index must be in 1..4, got {index}")
    return ProbeState("pure", np.array(table[index]))


def builtin_state(name: str, index: int | None = None) -> ProbeState:
    """Look up one of the integrated probe states by name."""
    if name == "Plus":
        return plus_state()
    if name == "Minus":
        return minus_state()
    if name == "Bell":
        if index is None:
            raise ValidationError("Bell state requires an index in 1..4")
        return bell_state(index)
    raise ValidationError(f"unknown builtin state {name!r}")


# ---------------------------------------------------------------------------
# control shapes


class ControlShape:
    """Base class for the named control-amplitude shapes."""

    def value(self, t: float, t_end: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ControlShape):
    def value(self, t, t_end):
        return 0.0


@dataclass(frozen=True)
class Linear(ControlShape):
    k: float
    c0: float

    def value(self, t, t_end):
        return self.k * t + self.c0


@dataclass(frozen=True)
class Sine(ControlShape):
    A: float
    omega: float
    phi: float

    def value(self, t, t_end):
        return self.A * math.sin(self.omega * t + self.phi)


@dataclass(frozen=True)
class Saw(ControlShape):
    k: float
    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise ValidationError("Saw requires a positive integer n")

    def value(self, t, t_end):
        u = self.n * t / t_end
        return 2 * self.k * (u - math.floor(0.5 + u))


@dataclass(frozen=True)
class Triangle(ControlShape):
    k: float
    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise ValidationError("Triangle requires a positive integer n")

    def value(self, t, t_end):
        u = self.n * t / t_end
        return 2 * abs(2 * self.k * (u - math.floor(0.5 + u))) - 1


@dataclass(frozen=True)
class Gaussian(ControlShape):
    A: float
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("Gaussian requires sigma > 0")

    def value(self, t, t_end):
        return self.A * math.exp(-((t - self.mu) ** 2) / (2 * self.sigma))


@dataclass(frozen=True)
class GaussianEdge(ControlShape):
    A: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("GaussianEdge requires sigma > 0")

    def value(self, t, t_end):
        a = self.A
        return (
            a
            - a * math.exp(-(t**2) / self.sigma)
            - a * math.exp(-((t - t_end) ** 2) / self.sigma)
        )


def control_shape_eval(shape: ControlShape, t: float, t_end: float) -> float:
    """Evaluate a named control shape at time t, with t_end the end of tspan."""
    if t_end <= 0:
        raise ValidationError("control shapes require a positive end time")
    if not (0 <= t <= t_end):
        raise ValidationError(f"control shape evaluated outside [0, T]: t={t}")
    return shape.value(t, t_end)


_SHAPE_KINDS = {
    "Zero": Zero,
    "Linear": Linear,
    "Sine": Sine,
    "Saw": Saw,
    "Triangle": Triangle,
    "Gaussian": Gaussian,
    "GaussianEdge": GaussianEdge,
}


def shape_from_name(kind: str, **params) -> ControlShape:
    try:
        cls = _SHAPE_KINDS[kind]
    except KeyError:
        raise ValidationError(f"unknown control shape {kind!r}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class HamiltonianSpec:
    """Free Hamiltonian and its derivatives w.r.t. the estimated parameters.

    Three variants:
      * static: one matrix ``h0`` plus constant derivative matrices ``dh``;
      * time-series: one matrix per tspan entry (held at the left endpoint of
        each sub-interval) plus constant ``dh``;
      * parametric: callables ``h0_fn(u)`` / ``h0_fn(u, t)`` and
        ``dh_fn(u)`` / ``dh_fn(u, t)`` with the parameter vector ``u``.
    """

    variant: str  # "static" | "time_series" | "parametric"
    h0: np.ndarray | None = None
    h0_series: tuple | None = None
    dh: tuple | None = None
    h0_fn: Callable | None = None
    dh_fn: Callable | None = None
    u: np.ndarray | None = None
    time_dependent: bool = False  # parametric callables take (u, t)

    @classmethod
    def static(cls, h0, dh) -> "HamiltonianSpec":
        h0 = _freeze(hermitize(h0, name="H0"))
        dh = tuple(_freeze(hermitize(m, name=f"dH[{i}]")) for i, m in enumerate(dh))
        for i, m in enumerate(dh):
            if m.shape != h0.shape:
                raise ValidationError(f"dH[{i}] shape {m.shape} != H0 shape {h0.shape}")
        return cls(variant="static", h0=h0, dh=dh)

    @classmethod
    def time_series(cls, h0_series, dh) -> "HamiltonianSpec":
        series = tuple(
            _freeze(hermitize(m, name=f"H0[{k}]")) for k, m in enumerate(h0_series)
        )
        if not series:
            raise ValidationError("time-series Hamiltonian must not be empty")
        dh = tuple(_freeze(hermitize(m, name=f"dH[{i}]")) for i, m in enumerate(dh))
        for i, m in enumerate(dh):
            if m.shape != series[0].shape:
                raise ValidationError(f"dH[{i}] dimension mismatch with H0 series")
        return cls(variant="time_series", h0_series=series, dh=dh)

    @classmethod
    def parametric(cls, h0_fn, dh_fn, u, time_dependent: bool | None = None) -> "HamiltonianSpec":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if time_dependent is None:
            # probe the call signature: try H0(u) first
            try:
                h0_fn(u if u.size > 1 else float(u[0]))
                time_dependent = False
            except TypeError:
                time_dependent = True
        return cls(
            variant="parametric",
            h0_fn=h0_fn,
            dh_fn=dh_fn,
            u=_freeze(u),
            time_dependent=time_dependent,
        )

    def _uval(self, u=None):
        uu = self.u if u is None else np.atleast_1d(np.asarray(u, dtype=float))
        return uu if uu.size > 1 else float(uu[0])

    @property
    def n_params(self) -> int:
        if self.variant == "parametric":
            return int(np.atleast_1d(self.u).size)
        return len(self.dh)

    @property
    def dim(self) -> int:
        if self.variant == "static":
            return self.h0.shape[0]
        if self.variant == "time_series":
            return self.h0_series[0].shape[0]
        return as_matrix(self._call_h0(0.0), "H0(u)").shape[0]

    def _call_h0(self, t: float, u=None):
        uv = self._uval(u)
        return self.h0_fn(uv, t) if self.time_dependent else self.h0_fn(uv)

    def _call_dh(self, t: float, u=None):
        uv = self._uval(u)
        return self.dh_fn(uv, t) if self.time_dependent else self.dh_fn(uv)

    def at(self, t: float, index: int | None = None, u=None):
        """(H0, [dH_a]) at time t; ``index`` selects the tspan entry for
        time-series data."""
        if self.variant == "static":
            return self.h0, list(self.dh)
        if self.variant == "time_series":
            if index is None:
                raise ValidationError("time-series Hamiltonian requires a tspan index")
            return self.h0_series[index], list(self.dh)
        h0 = hermitize(self._call_h0(t, u), name="H0(u)")
        dh = [hermitize(m, name="dH(u)") for m in self._call_dh(t, u)]
        if len(dh) != self.n_params:
            raise ValidationError(
                f"dH(u) returned {len(dh)} matrices for {self.n_params} parameters"
            )
        return h0, dh

    def with_u(self, u) -> "HamiltonianSpec":
        if self.variant != "parametric":
            raise ValidationError("with_u applies to parametric Hamiltonians only")
        return HamiltonianSpec.parametric(
            self.h0_fn, self.dh_fn, u, time_dependent=self.time_dependent
        )


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True)
class ControlSpec:
    """Control Hamiltonians with piecewise-constant amplitude sequences.

    ``ctrl`` is either a list of per-control amplitude sequences (all of one
    length that divides ``len(tspan) - 1``) or a ControlShape sampled at
    sub-interval midpoints.
    """

    hc: tuple = ()
    ctrl: object = None  # None | ControlShape | tuple of float sequences
    bounds: tuple = (-np.inf, np.inf)
    n_segments: int | None = None

    def __post_init__(self):
        hc = tuple(_freeze(hermitize(m, name=f"Hc[{i}]")) for i, m in enumerate(self.hc))
        object.__setattr__(self, "hc", hc)
        lo, hi = self.bounds
        if not lo <= hi:
            raise ValidationError(f"control bounds must satisfy lo <= hi, got {self.bounds}")
        ctrl = self.ctrl
        if ctrl is None:
            ctrl = Zero()
        if not isinstance(ctrl, ControlShape):
            seqs = tuple(_freeze(np.asarray(c, dtype=float).reshape(-1)) for c in ctrl)
            if len(seqs) != len(hc):
                raise ValidationError(
                    f"{len(seqs)} amplitude sequences for {len(hc)} control Hamiltonians"
                )
            if seqs and len({len(s) for s in seqs}) != 1:
                raise ValidationError("all control amplitude sequences must have equal length")
            ctrl = seqs
        object.__setattr__(self, "ctrl", ctrl)

    @property
    def n_controls(self) -> int:
        return len(self.hc)

    def amplitudes(self, tspan: np.ndarray) -> np.ndarray:
        """Per-segment amplitude array, shape (n_controls, n_segments)."""
        n_sub = len(tspan) - 1
        if self.n_controls == 0:
            return np.zeros((0, n_sub))
        if isinstance(self.ctrl, ControlShape):
            n_seg = self.n_segments or n_sub
            if n_sub % n_seg != 0:
                raise ValidationError(
                    f"segment count {n_seg} must divide len(tspan)-1 = {n_sub}"
                )
            t_end = float(tspan[-1])
            width = (tspan[-1] - tspan[0]) / n_seg
            mids = tspan[0] + (np.arange(n_seg) + 0.5) * width
            row = np.array([control_shape_eval(self.ctrl, t, t_end) for t in mids])
            amp = np.tile(row, (self.n_controls, 1))
        else:
            n_seg = len(self.ctrl[0]) if self.ctrl else 0
            if n_seg == 0 or n_sub % n_seg != 0:
                raise ValidationError(
                    f"amplitude sequence length {n_seg} must divide len(tspan)-1 = {n_sub}"
                )
            amp = np.stack(self.ctrl)
        lo, hi = self.bounds
        if np.any(amp < lo - 1e-12) or np.any(amp > hi + 1e-12):
            raise ValidationError("control amplitudes violate the declared bounds")
        return amp

    def with_amplitudes(self, amp: np.ndarray) -> "ControlSpec":
        return ControlSpec(
            hc=self.hc,
            ctrl=tuple(np.asarray(row, dtype=float) for row in amp),
            bounds=self.bounds,
        )


# ---------------------------------------------------------------------------
# decay channels


@dataclass(frozen=True)
class DecayChannel:
    """One Lindblad decay operator with a constant or time-dependent rate."""

    operator: np.ndarray
    rate: object  # float | array over tspan

    def __post_init__(self):
        object.__setattr__(self, "operator", _freeze(as_matrix(self.operator, "decay operator")))
        rate = self.rate
        if np.isscalar(rate):
            if rate < 0:
                raise ValidationError(f"decay rate must be nonnegative, got {rate}")
            object.__setattr__(self, "rate", float(rate))
        else:
            r = np.asarray(rate, dtype=float).reshape(-1)
            if np.any(r < 0):
                raise ValidationError("time-dependent decay rate must be nonnegative")
            object.__setattr__(self, "rate", _freeze(r))

    @property
    def dim(self) -> int:
        return self.operator.shape[0]

    def rate_at(self, index: int, tspan_len: int) -> float:
        if np.isscalar(self.rate):
            return float(self.rate)
        if len(self.rate) != tspan_len:
            raise ValidationError(
                f"time-dependent rate length {len(self.rate)} != tspan length {tspan_len}"
            )
        return float(self.rate[index])


# ---------------------------------------------------------------------------
# measurements


@dataclass(frozen=True)
class MeasurementSpec:
    """A POVM given as a tuple of PSD matrices summing to the identity."""

    povm: tuple

    def __post_init__(self):
        elems = tuple(
            _freeze(hermitize(m, tol=1e-10, name=f"POVM element {i}"))
            for i, m in enumerate(self.povm)
        )
        if not elems:
            raise ValidationError("POVM must contain at least one element")
        d = elems[0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for i, m in enumerate(elems):
            if m.shape != (d, d):
                raise ValidationError(f"POVM element {i} has mismatched dimension")
            if float(np.linalg.eigvalsh(m)[0]) < -_PSD_TOL:
                raise ValidationError(f"POVM element {i} is not PSD")
            total += m
        if float(np.max(np.abs(total - np.eye(d)))) > 1e-10:
            raise ValidationError("POVM elements do not sum to the identity")
        object.__setattr__(self, "povm", elems)

    @property
    def dim(self) -> int:
        return self.povm[0].shape[0]

    def __len__(self) -> int:
        return len(self.povm)


def _wh_orbit(fiducial: np.ndarray) -> list[np.ndarray]:
    """All d^2 Weyl-Heisenberg displacements X^p Z^q of a fiducial vector."""
    d = fiducial.size
    omega = np.exp(2j * np.pi / d)
    states = []
    for p in range(d):
        shifted = np.roll(fiducial, p)
        for q in range(d):
            phase = omega ** (q * np.arange(d))
            states.append(phase * shifted)
    return states


def _load_fiducials() -> dict:
    res = importlib.resources.files("qestim").joinpath("data/sic_fiducials.json")
    with res.open("r") as fh:
        raw = json.load(fh)
    return {
        int(d): np.array([complex(re, im) for re, im in vecs])
        for d, vecs in raw.items()
    }


_FIDUCIAL_CACHE: dict | None = None


def sic_povm(d: int) -> MeasurementSpec:
    """Rank-one symmetric informationally complete POVM with d^2 elements.

    Dimension 2 uses the exact Bloch tetrahedron; 3 <= d <= 16 use bundled
    fiducial vectors expanded through the Weyl-Heisenberg group.
    """
    if d == 2:
        vecs = np.array([1, 1, 1]) / np.sqrt(3)
        bloch = [vecs * s for s in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1])]
        s1, s2, s3 = (np.array(m) for m in (
            [[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]],
        ))
        elems = [
            0.25 * (np.eye(2) + r[0] * s1 + r[1] * s2 + r[2] * s3) for r in bloch
        ]
        return MeasurementSpec(tuple(elems))
    global _FIDUCIAL_CACHE
    if _FIDUCIAL_CACHE is None:
        _FIDUCIAL_CACHE = _load_fiducials()
    if d not in _FIDUCIAL_CACHE:
        lo, hi = min(_FIDUCIAL_CACHE), max(_FIDUCIAL_CACHE)
        raise ValidationError(
            f"no bundled SIC fiducial for dimension {d} (available: 2, {lo}..{hi})"
        )
    fid = _FIDUCIAL_CACHE[d]
    elems = tuple(np.outer(v, v.conj()) / d for v in _wh_orbit(fid))
    return MeasurementSpec(elems)


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class PriorSpec:
    """Prior distribution on a regular parameter grid.

    ``x`` holds one grid vector per estimated parameter; ``p`` the prior
    values on the (product) grid; ``dp`` one derivative array per parameter.
    ``p`` is renormalized by trapezoidal quadrature on load and ``dp`` is
    rescaled by the same factor.
    """

    x: tuple
    p: np.ndarray
    dp: tuple

    def __post_init__(self):
        grids = tuple(_freeze(np.asarray(g, dtype=float).reshape(-1)) for g in self.x)
        if not grids:
            raise ValidationError("prior requires at least one grid vector")
        shape = tuple(len(g) for g in grids)
        p = np.asarray(self.p, dtype=float)
        if p.shape != shape:
            if p.size == int(np.prod(shape)):
                p = p.reshape(shape)
            else:
                raise ValidationError(
                    f"prior p shape {p.shape} incompatible with grid shape {shape}"
                )
        if np.any(p < 0):
            raise ValidationError("prior p must be nonnegative everywhere")
        dp = [np.asarray(a, dtype=float).reshape(shape) for a in self.dp]
        if len(dp) != len(grids):
            raise ValidationError(
                f"prior needs one dp array per parameter ({len(grids)}), got {len(dp)}"
            )
        norm = _grid_quadrature(grids, p)
        if norm <= 0:
            raise ValidationError("prior p integrates to zero")
        if abs(norm - 1.0) > 1e-3:
            warnings.warn(
                f"prior renormalized by factor {1.0 / norm:.6g}", stacklevel=2
            )
        p = p / norm
        dp = [a / norm for a in dp]
        object.__setattr__(self, "x", grids)
        object.__setattr__(self, "p", _freeze(p))
        object.__setattr__(self, "dp", tuple(_freeze(a) for a in dp))

    @property
    def n_params(self) -> int:
        return len(self.x)


def _grid_quadrature(grids: Sequence[np.ndarray], values: np.ndarray) -> float:
    out = np.asarray(values, dtype=float)
    for g in reversed(grids):
        out = np.tensordot(out, trapezoid_weights(g), axes=([out.ndim - 1], [0]))
    return float(out)


def grid_quadrature(prior_grids, values) -> float:
    """Trapezoidal quadrature of ``values`` over the product grid."""
    grids = [np.asarray(g, dtype=float) for g in prior_grids]
    return _grid_quadrature(grids, values)


# ---------------------------------------------------------------------------
# scheme assembly


@dataclass(frozen=True)
class Scheme:
    """Probe state + parameterization + measurement (+ optional prior)."""

    probe: ProbeState
    param: object  # LindbladSpec | KrausSpec (anything with .dim / .n_params)
    measurement: MeasurementSpec
    prior: PriorSpec | None = None

    def __post_init__(self):
        d = self.probe.dim
        if self.param.dim != d:
            raise ValidationError(
                f"dimension mismatch: probe is {d}, parameterization is {self.param.dim}"
            )
        if self.measurement.dim != d:
            raise ValidationError(
                f"dimension mismatch: probe is {d}, measurement is {self.measurement.dim}"
            )
        if self.prior is not None and self.prior.n_params != self.param.n_params:
            raise ValidationError(
                f"prior covers {self.prior.n_params} parameters, "
                f"parameterization has {self.param.n_params}"
            )

    @property
    def dim(self) -> int:
        return self.probe.dim

    @property
    def n_params(self) -> int:
        return self.param.n_params

    def replace(self, **kw) -> "Scheme":
        fields = {
            "probe": self.probe,
            "param": self.param,
            "measurement": self.measurement,
            "prior": self.prior,
        }
        fields.update(kw)
        return Scheme(**fields)


def make_general_scheme(
    probe,
    param,
    measurement: MeasurementSpec | None = None,
    x=None,
    p=None,
    dp=None,
) -> Scheme:
    """Assemble and cross-validate a scheme.

    The measurement defaults to the SIC-POVM of the probe dimension; a prior
    is attached when the x/p/dp grids are all given.
    """
    if not isinstance(probe, ProbeState):
        probe = ProbeState.from_array(probe)
    if measurement is None:
        measurement = sic_povm(probe.dim)
    elif not isinstance(measurement, MeasurementSpec):
        measurement = MeasurementSpec(tuple(measurement))
    prior = None
    if x is not None or p is not None or dp is not None:
        if x is None or p is None or dp is None:
            raise ValidationError("a prior requires all of x, p, and dp")
        if isinstance(x, np.ndarray) and x.ndim == 1:
            x = (x,)
        if isinstance(dp, np.ndarray) and dp.ndim == len(x):
            dp = (dp,)
        prior = PriorSpec(tuple(np.asarray(g) for g in x), p, tuple(dp))
    return Scheme(probe=probe, param=param, measurement=measurement, prior=prior)
