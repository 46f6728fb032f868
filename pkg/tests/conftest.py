import numpy as np
import pytest

from qestim._linalg import pauli
from qestim.dynamics import LindbladSpec
from qestim.scheme import (
    ControlSpec,
    DecayChannel,
    HamiltonianSpec,
    MeasurementSpec,
    make_general_scheme,
    plus_state,
)

SX, SY, SZ = pauli()


def qubit_hamiltonian(omega=1.0):
    """H(w) = w*sz/2 as a parametric family (single estimated parameter)."""
    return HamiltonianSpec.parametric(
        lambda w: 0.5 * float(w) * SZ, lambda w: [0.5 * SZ], omega
    )


def dephasing_scheme(
    gamma=0.0,
    omega=1.0,
    tspan=None,
    dyn_method="expm",
    povm=None,
    controls=None,
    **extra,
):
    """The workhorse single-qubit model: H = w*sz/2, probe |+>, optional
    sz dephasing."""
    if tspan is None:
        tspan = np.linspace(0.0, 2.0, 9)
    decays = (DecayChannel(SZ, gamma),) if gamma > 0 else ()
    spec = LindbladSpec(
        qubit_hamiltonian(omega),
        tspan,
        controls=controls if controls is not None else ControlSpec(),
        decays=decays,
        dyn_method=dyn_method,
    )
    measurement = MeasurementSpec(povm) if povm is not None else None
    return make_general_scheme(plus_state(), spec, measurement=measurement, **extra)


def sigma_x_basis():
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    return (
        np.outer(plus, plus).astype(complex),
        np.outer(minus, minus).astype(complex),
    )


def random_state(rng, d, rank=None):
    """Random full-rank (or fixed-rank) density matrix."""
    rank = rank if rank is not None else d
    a = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, d, traceless=True):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (a + a.conj().T) / 2
    if traceless:
        h -= np.trace(h) / d * np.eye(d)
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(7)
