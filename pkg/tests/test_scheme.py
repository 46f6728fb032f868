import math

import numpy as np
import pytest

from qestim import ValidationError
from qestim.dynamics import LindbladSpec
from qestim.scheme import (
    ControlSpec,
    DecayChannel,
    Gaussian,
    GaussianEdge,
    HamiltonianSpec,
    Linear,
    MeasurementSpec,
    PriorSpec,
    ProbeState,
    Saw,
    Sine,
    Triangle,
    Zero,
    bell_state,
    builtin_state,
    control_shape_eval,
    make_general_scheme,
    minus_state,
    plus_state,
    shape_from_name,
    sic_povm,
)

S = 1 / np.sqrt(2)


# ---------------------------------------------------------------------------
# builtin probe states


def test_plus_minus_states_exact():
    assert np.array_equal(plus_state().data, np.array([S, S]))
    assert np.array_equal(minus_state().data, np.array([S, -S]))


@pytest.mark.parametrize(
    "index, expected",
    [
        (1, [S, 0, 0, S]),
        (2, [S, 0, 0, -S]),
        (3, [0, S, S, 0]),
        (4, [0, S, -S, 0]),
    ],
)
def test_bell_states_exact(index, expected):
    assert np.array_equal(bell_state(index).data, np.array(expected))


def test_builtin_state_lookup():
    assert np.array_equal(builtin_state("Plus").data, plus_state().data)
    assert np.array_equal(builtin_state("Bell", 3).data, bell_state(3).data)
    with pytest.raises(ValidationError):
        builtin_state("Bell")
    with pytest.raises(ValidationError):
        builtin_state("Bell", 5)
    with pytest.raises(ValidationError):
        builtin_state("GHZ")


def test_probe_state_requires_unit_norm():
    with pytest.raises(ValidationError):
        ProbeState("pure", np.array([1.0, 1.0]))


def test_probe_state_density_matrix():
    rho = plus_state().density_matrix()
    assert np.allclose(rho, 0.5 * np.ones((2, 2)))
    mixed = ProbeState.from_array(np.eye(2) / 2)
    assert mixed.kind == "density"
    assert np.array_equal(mixed.density_matrix(), np.eye(2) / 2)


# ---------------------------------------------------------------------------
# control shapes: closed-form values


def test_zero_shape():
    assert control_shape_eval(Zero(), 0.7, 2.0) == 0.0


def test_linear_shape():
    assert control_shape_eval(Linear(k=2.0, c0=-1.0), 0.3, 1.0) == 2.0 * 0.3 - 1.0


def test_sine_shape():
    got = control_shape_eval(Sine(A=2.0, omega=3.0, phi=0.5), 0.7, 1.0)
    assert got == 2.0 * math.sin(3.0 * 0.7 + 0.5)


@pytest.mark.parametrize(
    "t, expected",
    [
        (0.0, 0.0),
        (0.25, 0.5),
        (0.75, -0.5),
        (1.0, 0.0),
    ],
)
def test_saw_shape_reference_points(t, expected):
    assert abs(control_shape_eval(Saw(k=1.0, n=1), t, 1.0) - expected) <= 1e-15


def test_saw_shape_formula():
    k, n, t, t_end = 1.5, 3, 0.4, 2.0
    u = n * t / t_end
    expected = 2 * k * (u - math.floor(0.5 + u))
    assert control_shape_eval(Saw(k=k, n=n), t, t_end) == expected


def test_triangle_shape_formula():
    k, n, t, t_end = 0.8, 2, 0.7, 2.0
    u = n * t / t_end
    expected = 2 * abs(2 * k * (u - math.floor(0.5 + u))) - 1
    assert control_shape_eval(Triangle(k=k, n=n), t, t_end) == expected


def test_gaussian_shape_formula():
    # exponent uses 2*sigma, not 2*sigma^2
    got = control_shape_eval(Gaussian(A=1.5, mu=0.4, sigma=0.2), 1.0, 2.0)
    assert got == 1.5 * math.exp(-((1.0 - 0.4) ** 2) / (2 * 0.2))


def test_gaussian_edge_reference_point():
    got = control_shape_eval(GaussianEdge(A=1.0, sigma=1.0), 0.0, 10.0)
    assert abs(got - (-math.exp(-100.0))) <= 1e-15


def test_gaussian_edge_symmetry():
    shape = GaussianEdge(A=0.7, sigma=0.5)
    a = control_shape_eval(shape, 0.25, 2.0)
    b = control_shape_eval(shape, 1.75, 2.0)
    assert abs(a - b) <= 1e-15


def test_shape_domain_checks():
    with pytest.raises(ValidationError):
        control_shape_eval(Zero(), -0.1, 1.0)
    with pytest.raises(ValidationError):
        control_shape_eval(Zero(), 1.1, 1.0)
    with pytest.raises(ValidationError):
        control_shape_eval(Zero(), 0.0, 0.0)


def test_shape_parameter_validation():
    with pytest.raises(ValidationError):
        Saw(k=1.0, n=0)
    with pytest.raises(ValidationError):
        Triangle(k=1.0, n=-2)
    with pytest.raises(ValidationError):
        Gaussian(A=1.0, mu=0.0, sigma=0.0)
    with pytest.raises(ValidationError):
        GaussianEdge(A=1.0, sigma=-1.0)


def test_shape_from_name():
    s = shape_from_name("Sine", A=1.0, omega=2.0, phi=0.0)
    assert isinstance(s, Sine)
    with pytest.raises(ValidationError):
        shape_from_name("Sawtooth", k=1.0, n=1)


# ---------------------------------------------------------------------------
# SIC POVM


@pytest.mark.parametrize("d", [2, 3, 6])
def test_sic_povm_properties(d):
    meas = sic_povm(d)
    assert len(meas) == d * d
    total = sum(meas.povm)
    assert np.allclose(total, np.eye(d), atol=1e-10)
    for e in meas.povm:
        vals = np.linalg.eigvalsh(e)
        assert vals[0] >= -1e-12
        # rank one with weight 1/d
        assert abs(vals[-1] - 1.0 / d) < 1e-10
        assert np.all(np.abs(vals[:-1]) < 1e-10)
    # equiangular: Tr(E_i E_j) constant over distinct pairs
    cross = [
        np.trace(meas.povm[i] @ meas.povm[j]).real
        for i in range(d * d)
        for j in range(i + 1, d * d)
    ]
    expected = 1.0 / (d * d * (d + 1))
    assert np.allclose(cross, expected, atol=1e-10)


def test_sic_povm_unavailable_dimension():
    with pytest.raises(ValidationError):
        sic_povm(40)


def test_measurement_spec_validation():
    with pytest.raises(ValidationError):
        MeasurementSpec((np.eye(2) / 2,))  # does not sum to identity
    with pytest.raises(ValidationError):
        MeasurementSpec((np.diag([1.5, 1.0]), np.diag([-0.5, 0.0])))  # not PSD
    with pytest.raises(ValidationError):
        MeasurementSpec(())


# ---------------------------------------------------------------------------
# Hamiltonian / control / decay specs


def test_static_hamiltonian_at():
    sz = np.diag([1.0, -1.0])
    spec = HamiltonianSpec.static(0.5 * sz, [0.5 * sz])
    h0, dh = spec.at(0.0)
    assert np.array_equal(h0, 0.5 * sz)
    assert len(dh) == 1 and np.array_equal(dh[0], 0.5 * sz)
    assert spec.n_params == 1
    assert spec.dim == 2


def test_parametric_hamiltonian_with_u():
    sz = np.diag([1.0, -1.0])
    # single-parameter callables receive u as a plain float
    spec = HamiltonianSpec.parametric(
        lambda u: 0.5 * u * sz, lambda u: [0.5 * sz], u=1.0
    )
    h0, _ = spec.at(0.0)
    assert np.allclose(h0, 0.5 * sz)
    moved = spec.with_u(3.0)
    assert np.allclose(moved.at(0.0)[0], 1.5 * sz)
    # original untouched
    assert np.allclose(spec.at(0.0)[0], 0.5 * sz)


def test_hamiltonian_requires_hermitian():
    with pytest.raises(ValidationError):
        HamiltonianSpec.static(np.array([[0.0, 1.0], [0.0, 0.0]]), [np.eye(2)])


def test_control_amplitudes_from_shape_midpoints():
    spec = ControlSpec(hc=(np.diag([1.0, -1.0]),), ctrl=Linear(k=1.0, c0=0.0))
    tspan = np.linspace(0.0, 1.0, 5)
    amp = spec.amplitudes(tspan)
    assert amp.shape == (1, 4)
    assert np.allclose(amp[0], [0.125, 0.375, 0.625, 0.875])


def test_control_amplitudes_segment_count_must_divide():
    spec = ControlSpec(
        hc=(np.diag([1.0, -1.0]),), ctrl=Zero(), n_segments=3
    )
    with pytest.raises(ValidationError):
        spec.amplitudes(np.linspace(0.0, 1.0, 5))  # 4 subintervals, 3 segments


def test_control_amplitude_bounds_enforced():
    spec = ControlSpec(
        hc=(np.diag([1.0, -1.0]),), ctrl=((0.0, 2.0),), bounds=(-1.0, 1.0)
    )
    with pytest.raises(ValidationError):
        spec.amplitudes(np.linspace(0.0, 1.0, 3))


def test_control_sequence_length_mismatch():
    with pytest.raises(ValidationError):
        ControlSpec(hc=(np.eye(2), np.eye(2)), ctrl=((0.0, 1.0),))


def test_decay_channel_rejects_negative_rate():
    sz = np.diag([1.0, -1.0])
    with pytest.raises(ValidationError):
        DecayChannel(sz, -0.1)
    ch = DecayChannel(sz, (0.1, 0.2, 0.3))
    assert ch.rate_at(1, 3) == 0.2
    with pytest.raises(ValidationError):
        ch.rate_at(0, 5)


# ---------------------------------------------------------------------------
# priors and scheme assembly


def test_prior_normalizes_on_load():
    x = np.linspace(0.0, np.pi, 101)
    p = np.exp(-((x - 1.0) ** 2))
    with pytest.warns(UserWarning, match="renormalized"):
        prior = PriorSpec(x=(x,), p=3.0 * p, dp=(np.gradient(3.0 * p, x),))
    assert abs(np.trapezoid(prior.p, x) - 1.0) < 1e-12
    assert prior.n_params == 1
    # dp rescaled by the same factor, so dp/p ratios survive renormalization
    assert np.allclose(prior.dp[0] / prior.p, np.gradient(p, x) / p)


def test_make_general_scheme_roundtrip():
    sz = np.diag([1.0, -1.0])
    ham = HamiltonianSpec.static(0.5 * sz, [0.5 * sz])
    param = LindbladSpec(hamiltonian=ham, tspan=np.linspace(0.0, 1.0, 11))
    sch = make_general_scheme(plus_state(), param)
    assert sch.dim == 2
    assert sch.n_params == 1
    assert len(sch.measurement) == 4  # SIC default
    other = sch.replace(param=param.replace(tspan=np.linspace(0.0, 2.0, 21)))
    assert other.param.tspan[-1] == 2.0
    assert other.param.hamiltonian is ham


def test_scheme_dimension_cross_checks():
    sz = np.diag([1.0, -1.0])
    ham = HamiltonianSpec.static(0.5 * sz, [0.5 * sz])
    param = LindbladSpec(hamiltonian=ham, tspan=np.linspace(0.0, 1.0, 11))
    with pytest.raises(ValidationError):
        make_general_scheme(bell_state(1), param)  # 4-dim probe, 2-dim dynamics
    with pytest.raises(ValidationError):
        make_general_scheme(plus_state(), param, measurement=sic_povm(3))
