"""Nitrogen-vacancy center magnetometer.

Electron spin-1 coupled to a nuclear spin-1/2; the three magnetic-field
components are the estimated parameters. All frequencies are angular MHz and
times are microseconds, which makes the default dephasing rate gamma = 2*pi
correspond to T2* = 1 us.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import ValidationError, pauli
from .dynamics import LindbladSpec
from .scheme import (
    ControlSpec,
    DecayChannel,
    HamiltonianSpec,
    ProbeState,
    Scheme,
    make_general_scheme,
)

__all__ = ["NVParams", "spin1_ops", "nv_hamiltonian", "nv_scheme"]

_PSI0 = (1 / np.sqrt(2), 0.0, 0.0, 0.0, 1 / np.sqrt(2), 0.0)


@dataclass(frozen=True)
class NVParams:
    """Physical constants of the NV magnetometer model.

    D: zero-field splitting; gS/gI: electron and nuclear gyromagnetic
    factors; A1/A2: transverse/axial hyperfine couplings; B: magnetic field
    (the estimated parameters); gamma: dephasing rate.
    """

    D: float = 18032.741831605414
    gS: float = 176.1176841602438
    gI: float = 0.027143360527015815
    A1: float = 22.933626371205488
    A2: float = 19.038051480754145
    B: tuple = (0.5, 0.5, 0.5)
    gamma: float = 6.283185307179586
    tspan: object = None
    psi0: tuple = _PSI0

    def __post_init__(self):
        b = np.asarray(self.B, dtype=float)
        if b.shape != (3,):
            raise ValidationError(f"B must be a real 3-vector, got shape {b.shape}")
        object.__setattr__(self, "B", tuple(float(x) for x in b))
        if not self.gamma >= 0:
            raise ValidationError(f"gamma must be nonnegative, got {self.gamma}")
        psi = np.asarray(self.psi0, dtype=complex).reshape(-1)
        if psi.shape != (6,):
            raise ValidationError("psi0 must be a 6-vector")
        if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
            raise ValidationError("psi0 must have unit norm")
        object.__setattr__(self, "psi0", tuple(psi))
        tspan = self.tspan if self.tspan is not None else np.linspace(0.0, 2.0, 201)
        tspan = np.asarray(tspan, dtype=float)
        if tspan.ndim != 1 or tspan.size < 2:
            raise ValidationError("tspan must contain at least two times")
        object.__setattr__(self, "tspan", tspan)


def spin1_ops():
    """The spin-1 operators (s1, s2, s3) with s3 = diag(1, 0, -1)."""
    s1 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2)
    s2 = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / np.sqrt(2)
    s3 = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return s1, s2, s3


def _big_ops():
    """Electron (S_i = s_i x I2) and nuclear (I_i = I3 x sigma_i) operators."""
    s_ops = spin1_ops()
    sigmas = pauli()
    eye2 = np.eye(2)
    eye3 = np.eye(3)
    s_big = tuple(np.kron(s, eye2) for s in s_ops)
    i_big = tuple(np.kron(eye3, sg) for sg in sigmas)
    return s_big, i_big


def nv_hamiltonian(params: NVParams):
    """(H0, [dH1, dH2, dH3]) at the parameter point params.B.

    H0 = D S3^2 + gS B.S + gI B.I + S^T A I with A = diag(A1, A1, A2);
    dH_i = gS S_i + gI I_i are the exact field derivatives.
    """
    s_big, i_big = _big_ops()
    b = np.asarray(params.B, dtype=float)
    h0 = params.D * (s_big[2] @ s_big[2])
    for i in range(3):
        h0 = h0 + params.gS * b[i] * s_big[i] + params.gI * b[i] * i_big[i]
    hyper = np.array([params.A1, params.A1, params.A2])
    for i in range(3):
        h0 = h0 + hyper[i] * (s_big[i] @ i_big[i])
    dh = [params.gS * s_big[i] + params.gI * i_big[i] for i in range(3)]
    return h0, dh


def nv_scheme(params: NVParams | None = None) -> Scheme:
    """Preconfigured magnetometer scheme.

    Probe (|1,up> + |-1,up>)/sqrt(2), dephasing channel (S3, gamma),
    controls {S1, S2, S3} with zero initial amplitudes, and a SIC POVM in
    dimension 6 as the default measurement.
    """
    params = params if params is not None else NVParams()
    s_big, _ = _big_ops()

    def h0_fn(b):
        return nv_hamiltonian(
            NVParams(
                D=params.D,
                gS=params.gS,
                gI=params.gI,
                A1=params.A1,
                A2=params.A2,
                B=tuple(np.asarray(b, dtype=float)),
                gamma=params.gamma,
                tspan=params.tspan,
                psi0=params.psi0,
            )
        )[0]

    def dh_fn(b):
        return nv_hamiltonian(params)[1]

    hamiltonian = HamiltonianSpec.parametric(
        h0_fn, dh_fn, np.asarray(params.B, dtype=float), time_dependent=False
    )
    controls = ControlSpec(hc=s_big)
    decays = (DecayChannel(s_big[2], params.gamma),)
    spec = LindbladSpec(
        hamiltonian, params.tspan, controls=controls, decays=decays
    )
    probe = ProbeState.from_array(np.asarray(params.psi0, dtype=complex))
    return make_general_scheme(probe, spec)
