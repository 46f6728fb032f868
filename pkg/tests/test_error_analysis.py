import numpy as np
import pytest

from qestim import ValidationError
from qestim.dynamics import KrausSpec, evolve
from qestim.error_analysis import ErrorBudget, error_control, error_evaluation
from qestim.metrology import qfim
from qestim.scheme import (
    ControlSpec,
    DecayChannel,
    HamiltonianSpec,
    make_general_scheme,
    plus_state,
)

from conftest import SX, SZ, dephasing_scheme, qubit_hamiltonian, sigma_x_basis


def small_scheme(**kw):
    return dephasing_scheme(gamma=0.2, tspan=np.linspace(0.0, 1.0, 5), **kw)


# ---------------------------------------------------------------------------
# evaluation mode


def test_delta_f_scales_linearly_with_input_precision():
    # both steps are below the FD floor, so the gradients are identical and
    # the propagated error is exactly homogeneous of degree one
    b1 = error_evaluation(small_scheme(), input_error_scaling=1e-8)
    b2 = error_evaluation(small_scheme(), input_error_scaling=2e-8)
    assert b2.result == pytest.approx(2.0 * b1.result, rel=1e-10)


def test_result_is_gradient_norm_times_delta():
    delta = 1e-8
    budget = error_evaluation(small_scheme(), input_error_scaling=delta)
    assert budget.mode == "evaluation"
    assert budget.result == pytest.approx(budget.gradient_norm() * delta, rel=1e-12)


def test_gradient_entries_match_manual_finite_differences():
    sch = small_scheme()
    budget = error_evaluation(sch, input_error_scaling=1e-8)
    h = 1e-7  # the clamped step used internally

    def trace_qfi(h0_shift):
        ham = HamiltonianSpec.static(0.5 * SZ + h0_shift, [0.5 * SZ])
        spec = sch.param.replace(hamiltonian=ham)
        traj = evolve(spec, sch.probe)
        rho, drho = traj.at(-1)
        return qfim(rho, drho).values

    # H0 group, first dof is the (0, 0) diagonal entry
    e00 = np.zeros((2, 2))
    e00[0, 0] = 1.0
    manual = (trace_qfi(h * e00) - trace_qfi(-h * e00)) / (2 * h)
    assert budget.gradient_terms["H0"][0] == pytest.approx(manual, abs=1e-8)

    # third H0 dof is the imaginary off-diagonal direction
    e01 = np.zeros((2, 2), dtype=complex)
    e01[0, 1] = 1j
    e01[1, 0] = -1j
    manual = (trace_qfi(h * e01) - trace_qfi(-h * e01)) / (2 * h)
    assert budget.gradient_terms["H0"][2] == pytest.approx(manual, abs=1e-8)


def test_input_groups_cover_all_model_data():
    ctrl = ControlSpec(hc=(SX,), ctrl=((0.3, -0.1),), bounds=(-1, 1))
    budget = error_evaluation(
        small_scheme(controls=ctrl), input_error_scaling=1e-8
    )
    keys = set(budget.gradient_terms)
    assert keys == {"H0", "dH[0]", "controls", "decay_op[0]", "decay_rate[0]", "probe"}
    assert len(budget.gradient_terms["H0"]) == 4  # hermitian qubit dofs
    assert len(budget.gradient_terms["controls"]) == 2
    assert len(budget.gradient_terms["decay_op[0]"]) == 8  # dense re/im
    assert len(budget.gradient_terms["probe"]) == 4


def test_truncation_delta_zero_for_full_rank_state():
    budget = error_evaluation(small_scheme(), input_error_scaling=1e-8)
    assert budget.truncation_delta == 0.0


def test_cfim_objective_mode():
    budget = error_evaluation(
        small_scheme(povm=sigma_x_basis()),
        input_error_scaling=1e-8,
        objective="CFIM",
    )
    assert budget.objective == "CFIM"
    assert budget.result > 0


def test_zero_rate_channel_uses_one_sided_step():
    sch = dephasing_scheme(tspan=np.linspace(0.0, 1.0, 5))
    zero_rate = sch.replace(
        param=sch.param.replace(decays=(DecayChannel(SZ, 0.0),))
    )
    budget = error_evaluation(zero_rate, input_error_scaling=1e-8)
    assert np.isfinite(budget.gradient_terms["decay_rate[0]"]).all()


# ---------------------------------------------------------------------------
# control mode


def test_control_mode_inverts_evaluation():
    target = 1e-6
    budget = error_control(small_scheme(), output_error_scaling=target)
    assert budget.mode == "control"
    # suggested precision, evaluated forward, meets the target
    roundtrip = error_evaluation(small_scheme(), input_error_scaling=budget.result)
    assert roundtrip.result <= target * (1.0 + 1e-6)
    assert budget.result == pytest.approx(target / budget.gradient_norm(), rel=1e-12)


def test_control_mode_rejects_flat_objective():
    # dynamics that ignore every input produce zero gradients: impossible ask
    ham = HamiltonianSpec.parametric(
        lambda w: 0.5 * SZ, lambda w: [np.zeros((2, 2))], 1.0
    )
    from qestim.dynamics import LindbladSpec

    spec = LindbladSpec(ham, np.linspace(0.0, 1.0, 3))
    sch = make_general_scheme(plus_state(), spec)
    with pytest.raises(ValidationError):
        error_control(sch, output_error_scaling=1e-6)


# ---------------------------------------------------------------------------
# adaptive-integrator path


def test_ode_path_uses_state_gradients():
    sch = small_scheme(dyn_method="ode")
    budget = error_evaluation(sch, input_error_scaling=1e-8)
    assert set(budget.gradient_terms) == {"rho(T)", "drho[0](T)"}
    # delta_rho = delta_x + h_max^4
    traj = evolve(sch.param, sch.probe)
    expected = budget.gradient_norm() * (1e-8 + traj.h_max**4)
    assert budget.result == pytest.approx(expected, rel=1e-9)


def test_ode_control_floors_at_zero_with_warning():
    sch = small_scheme(dyn_method="ode")
    with pytest.warns(UserWarning, match="integration error"):
        budget = error_control(sch, output_error_scaling=1e-30)
    assert budget.result == 0.0


def test_ode_control_subtracts_integration_share():
    sch = small_scheme(dyn_method="ode")
    target = 1e-3
    budget = error_control(sch, output_error_scaling=target)
    traj = evolve(sch.param, sch.probe)
    expected = target / budget.gradient_norm() - traj.h_max**4
    assert budget.result == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------------------
# validation and reporting


def test_unsupported_schemes_rejected():
    k0 = np.diag([1.0, np.sqrt(0.7)]).astype(complex)
    k1 = np.diag([0.0, np.sqrt(0.3)]).astype(complex)
    kraus = make_general_scheme(
        plus_state(),
        KrausSpec([k0, k1], [[np.zeros((2, 2)), np.zeros((2, 2))]]),
    )
    with pytest.raises(ValidationError):
        error_evaluation(kraus, input_error_scaling=1e-8)

    from qestim.dynamics import LindbladSpec

    td = HamiltonianSpec.parametric(
        lambda w, t: 0.5 * w * SZ + t * SX,
        lambda w, t: [0.5 * SZ],
        1.0,
        time_dependent=True,
    )
    sch = make_general_scheme(plus_state(), LindbladSpec(td, np.linspace(0, 1, 3)))
    with pytest.raises(ValidationError):
        error_evaluation(sch, input_error_scaling=1e-8)

    varying = dephasing_scheme(tspan=np.linspace(0.0, 1.0, 3))
    varying = varying.replace(
        param=varying.param.replace(
            decays=(DecayChannel(SZ, np.array([0.1, 0.2, 0.3])),)
        )
    )
    with pytest.raises(ValidationError):
        error_evaluation(varying, input_error_scaling=1e-8)


def test_scaling_arguments_validated():
    with pytest.raises(ValidationError):
        error_evaluation(small_scheme(), input_error_scaling=0.0)
    with pytest.raises(ValidationError):
        error_control(small_scheme(), output_error_scaling=-1e-6)
    with pytest.raises(ValidationError):
        error_evaluation(small_scheme(), input_error_scaling=1e-8, objective="HCRB")


def test_budget_reporting():
    budget = error_evaluation(small_scheme(), input_error_scaling=1e-8)
    text = budget.table()
    assert "delta_f" in text and "evaluation" in text
    payload = budget.to_json()
    assert payload["mode"] == "evaluation"
    assert payload["input_error_scaling"] == 1e-8
    assert set(payload["gradient_terms"]) == set(budget.gradient_terms)
    with pytest.raises(ValidationError):
        ErrorBudget(
            mode="evaluation", objective="QFIM", sld_eps=1e-8,
            result=-1.0, truncation_delta=0.0, gradient_terms={},
        )
