"""Release gate: one end-to-end check per guaranteed behavior.

Each test pins a single documented guarantee at its stated tolerance and
runtime budget, so `pytest -v tests/test_acceptance.py` reads as a pass/fail
line per guarantee. Oracles are computed independently inside each test
(closed forms, quadrature, finite differences) rather than recycled from
package internals.
"""

import math
import time

import numpy as np

from conftest import (
    SX,
    SY,
    SZ,
    dephasing_scheme,
    qubit_hamiltonian,
    random_hermitian,
    sigma_x_basis,
)
from qestim.adaptive import SimulatedOutcomes, adapt
from qestim.dynamics import DecayChannel, LindbladSpec, evolve
from qestim.error_analysis import error_control, error_evaluation
from qestim.metrology import cfim, hcrb, nhb, qfim, qvtb, vtb
from qestim.nv import NVParams, nv_scheme, spin1_ops
from qestim.optimize import (
    DE,
    PSO,
    ControlOpt,
    ObjectiveConfig,
    StateOpt,
    optimize,
)
from qestim.optimize import _grape_value_and_grad, _Problem
from qestim.scheme import (
    ControlSpec,
    Gaussian,
    GaussianEdge,
    HamiltonianSpec,
    Linear,
    ProbeState,
    Saw,
    Sine,
    Triangle,
    Zero,
    bell_state,
    control_shape_eval,
    make_general_scheme,
    minus_state,
    plus_state,
    sic_povm,
)


def test_free_qubit_qfi_grows_quadratically():
    start = time.perf_counter()
    res = qfim(dephasing_scheme())
    elapsed = time.perf_counter() - start
    times = np.asarray(res.times)
    values = np.asarray(res.values)
    for t_ref in (0.5, 1.0, 2.0):
        k = int(np.argmin(np.abs(times - t_ref)))
        assert abs(times[k] - t_ref) < 1e-12
        assert abs(values[k] - t_ref**2) < 1e-6
    assert elapsed < 1.0


def test_dephasing_qfi_decays_exponentially_on_both_integrators():
    start = time.perf_counter()
    for gamma in (0.1, 0.5):
        for method, tol in (("expm", 1e-6), ("ode", 1e-4)):
            res = qfim(dephasing_scheme(gamma=gamma, dyn_method=method))
            t = np.asarray(res.times)
            expected = t**2 * np.exp(-4.0 * gamma * t)
            assert np.max(np.abs(np.asarray(res.values) - expected)) < tol
    assert time.perf_counter() - start < 5.0


def test_sigma_x_measurement_saturates_the_quantum_bound():
    scheme = dephasing_scheme(povm=sigma_x_basis())
    classical = np.asarray(cfim(scheme).values)
    quantum = np.asarray(qfim(scheme).values)
    assert np.max(np.abs(classical - quantum)) < 1e-6


def test_nv_trajectories_agree_between_integrators():
    start = time.perf_counter()
    expm_scheme = nv_scheme(NVParams())
    traj_expm = evolve(expm_scheme.param, expm_scheme.probe)
    ode_scheme = nv_scheme(NVParams())
    ode_scheme = ode_scheme.replace(
        param=ode_scheme.param.replace(dyn_method="ode")
    )
    traj_ode = evolve(ode_scheme.param, ode_scheme.probe)
    elapsed = time.perf_counter() - start

    worst_rho = max(
        float(np.max(np.abs(a - b)))
        for a, b in zip(traj_expm.rho, traj_ode.rho)
    )
    worst_drho = max(
        float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        for a, b in zip(traj_expm.drho, traj_ode.drho)
    )
    assert worst_rho <= 1e-6
    assert worst_drho <= 1e-6
    assert elapsed < 30.0


def test_copropagated_derivatives_match_finite_differences():
    # every model family of dimension <= 3: free qubit, dephasing qubit,
    # driven qubit, and a two-parameter qutrit with amplitude damping
    g1 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=complex)
    g2 = np.array([[0, 0, 0], [0, 0, -1j], [0, 1j, 0]], dtype=complex)
    lower = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
    qutrit_probe = ProbeState("pure", np.ones(3) / np.sqrt(3.0))
    base3 = np.diag([1.0, 0.2, -1.2]).astype(complex)

    def qutrit(theta):
        ham = HamiltonianSpec.static(
            base3 + theta[0] * g1 + theta[1] * g2, [g1, g2]
        )
        spec = LindbladSpec(
            ham,
            np.linspace(0.0, 1.5, 7),
            decays=(DecayChannel(lower, 0.2),),
        )
        return make_general_scheme(qutrit_probe, spec)

    drive = ControlSpec(hc=(SX, SY), ctrl=np.full((2, 8), 0.3), bounds=(-2, 2))
    cases = [
        (lambda th: dephasing_scheme(omega=th[0]), np.array([1.0])),
        (lambda th: dephasing_scheme(gamma=0.3, omega=th[0]), np.array([1.0])),
        (
            lambda th: dephasing_scheme(gamma=0.1, omega=th[0], controls=drive),
            np.array([1.0]),
        ),
        (qutrit, np.array([0.4, 0.9])),
    ]
    eps = 1e-5
    for build, theta in cases:
        traj = evolve(build(theta).param, build(theta).probe)
        for a in range(len(theta)):
            shift = np.zeros_like(theta)
            shift[a] = eps
            up = evolve(build(theta + shift).param, build(theta + shift).probe)
            dn = evolve(build(theta - shift).param, build(theta - shift).probe)
            for k in range(len(traj.rho)):
                fd = (up.rho[k] - dn.rho[k]) / (2 * eps)
                assert np.max(np.abs(traj.drho[k][a] - fd)) < 1e-5


def test_bound_orderings_hold_on_random_qubit_battery():
    rng = np.random.default_rng(2024)
    eye2 = np.eye(2, dtype=complex)
    povm = sic_povm(2).povm
    for _ in range(20):
        direction = rng.normal(size=3)
        direction *= rng.uniform(0.2, 0.8) / np.linalg.norm(direction)
        rho = 0.5 * (
            eye2 + direction[0] * SX + direction[1] * SY + direction[2] * SZ
        )
        drho = [random_hermitian(rng, 2), random_hermitian(rng, 2)]
        a = rng.normal(size=(2, 2))
        weight = a @ a.T + 0.25 * np.eye(2)

        fisher = np.asarray(qfim(rho, drho).values)
        lower = float(np.trace(weight @ np.linalg.inv(fisher)))
        holevo = hcrb(rho, drho, weight)
        nagaoka = nhb(rho, drho, weight)
        assert lower - 1e-6 <= holevo <= 2.0 * lower + 1e-6
        assert nagaoka >= holevo - 1e-6

        classical = np.asarray(cfim(rho, drho, povm=povm))
        gap_eigs = np.linalg.eigvalsh(fisher - classical)
        assert gap_eigs[0] >= -1e-6

        single = float(np.asarray(qfim(rho, drho[:1]).values))
        assert abs(hcrb(rho, drho[:1], np.eye(1)) - 1.0 / single) < 1e-4


def test_van_trees_bounds_match_quadrature_oracle():
    x = np.linspace(0.0, np.pi, 200)
    mu = np.pi / 2
    p = np.exp(-((x - mu) ** 2) / 2)
    dp = -(x - mu) * p
    norm = np.trapezoid(p, x)
    p, dp = p / norm, dp / norm

    gamma, t_end = 0.1, 2.0
    scheme = dephasing_scheme(
        gamma=gamma, povm=sigma_x_basis(), x=[x], p=p, dp=[dp]
    )
    v = float(vtb(scheme))
    q = float(qvtb(scheme))

    # closed-form Fisher information of the dephasing qubit at t_end
    damp = np.exp(-4.0 * gamma * t_end)
    f_quantum = t_end**2 * damp * np.ones_like(x)
    sin2 = np.sin(x * t_end) ** 2
    cos2 = np.cos(x * t_end) ** 2
    f_classical = t_end**2 * damp * sin2 / (1.0 - damp * cos2)

    prior_info = np.trapezoid(dp**2 / p, x)
    v_oracle = 1.0 / (prior_info + np.trapezoid(p * f_classical, x))
    q_oracle = 1.0 / (prior_info + np.trapezoid(p * f_quantum, x))

    assert q <= v + 1e-12
    assert abs(v - v_oracle) < 1e-6
    assert abs(q - q_oracle) < 1e-6


def test_optimizers_improve_and_gradients_check_out():
    # population searches on the NV control problem: monotone best-so-far
    nv = nv_scheme(NVParams(tspan=np.linspace(0.0, 2.0, 21)))
    objective = ObjectiveConfig(kind="QFIM")
    for algo in (
        DE(population=8, max_episode=5, seed=11),
        PSO(population=8, max_episode=5, seed=11),
    ):
        _, rec = optimize(nv, ControlOpt(ctrl_bound=(-0.2, 0.2)), algo, objective)
        assert rec.direction == "min"
        log = rec.objectives
        assert all(b <= a for a, b in zip(log, log[1:]))

    # exact control gradient against central differences
    rng = np.random.default_rng(42)
    drive = ControlSpec(
        hc=(SX, SY), ctrl=rng.uniform(-0.5, 0.5, (2, 4)), bounds=(-2, 2)
    )
    driven = dephasing_scheme(gamma=0.1, controls=drive)
    problem = _Problem(driven, ControlOpt(), ObjectiveConfig(kind="QFIM"))
    x = problem.x0.copy()
    _, grad = _grape_value_and_grad(problem, x)
    fd = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += 1e-6
        xm[i] -= 1e-6
        fd[i] = (problem.value(xp) - problem.value(xm)) / 2e-6
    rel = np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-12)
    assert rel < 1e-4

    # probe optimization reaches the equatorial optimum of the dephasing model
    gamma, t_end = 0.1, 2.0
    optimum = t_end**2 * math.exp(-4.0 * gamma * t_end)
    _, rec = optimize(
        dephasing_scheme(gamma=gamma),
        StateOpt(),
        DE(population=10, max_episode=150, seed=3),
        ObjectiveConfig(kind="QFIM"),
    )
    assert rec.best_objective >= 0.99 * optimum
    assert rec.best_objective <= optimum * (1.0 + 1e-6)


def test_error_budgets_scale_and_invert_consistently():
    scheme = dephasing_scheme(gamma=0.2, tspan=np.linspace(0.0, 1.0, 5))

    # homogeneity: doubling the input precision doubles the output error
    single = error_evaluation(scheme, 1e-8).result
    double = error_evaluation(scheme, 2e-8).result
    assert abs(double - 2.0 * single) <= 1e-10 * double

    # control -> evaluation round trip stays within the requested target
    target = 1e-6
    suggested = error_control(scheme, target).result
    achieved = error_evaluation(scheme, suggested).result
    assert achieved <= target * (1.0 + 1e-6)

    # full-rank final state reports no spectrum truncation
    assert error_evaluation(scheme, 1e-8).truncation_delta == 0.0


def test_nv_spin_algebra_and_default_constants():
    s1, s2, s3 = spin1_ops()
    for a, b, c in ((s1, s2, s3), (s2, s3, s1), (s3, s1, s2)):
        assert np.max(np.abs(a @ b - b @ a - 1j * c)) <= 1e-14
    casimir = s1 @ s1 + s2 @ s2 + s3 @ s3
    assert np.max(np.abs(casimir - 2.0 * np.eye(3))) <= 1e-14

    params = NVParams()
    assert params.D == 18032.741831605414
    assert params.gS == 176.1176841602438
    assert params.gI == 0.027143360527015815
    assert params.A1 == 22.933626371205488
    assert params.A2 == 19.038051480754145
    assert params.B == (0.5, 0.5, 0.5)
    assert params.gamma == 6.283185307179586
    assert np.array_equal(params.tspan, np.linspace(0.0, 2.0, 201))
    root_half = 1.0 / np.sqrt(2.0)
    assert params.psi0 == (root_half, 0.0, 0.0, 0.0, root_half, 0.0)


def test_builtin_tables_are_exact():
    s = 1.0 / np.sqrt(2.0)
    states = [
        (plus_state(), np.array([s, s])),
        (minus_state(), np.array([s, -s])),
        (bell_state(1), np.array([s, 0, 0, s])),
        (bell_state(2), np.array([s, 0, 0, -s])),
        (bell_state(3), np.array([0, s, s, 0])),
        (bell_state(4), np.array([0, s, -s, 0])),
    ]
    for probe, expected in states:
        assert np.max(np.abs(probe.data - expected)) <= 1e-15

    t_end = 2.0
    samples = (0.0, 0.13, 0.4, 0.77, 1.31, t_end)

    def saw_core(k, n, t):
        u = n * t / t_end
        return 2 * k * (u - math.floor(0.5 + u))

    shapes = [
        (Zero(), lambda t: 0.0),
        (Linear(k=0.7, c0=-0.2), lambda t: 0.7 * t - 0.2),
        (Sine(A=1.3, omega=2.0, phi=0.4), lambda t: 1.3 * math.sin(2.0 * t + 0.4)),
        (Saw(k=1.1, n=3), lambda t: saw_core(1.1, 3, t)),
        (Triangle(k=0.8, n=2), lambda t: 2 * abs(saw_core(0.8, 2, t)) - 1),
        (
            Gaussian(A=1.5, mu=0.4, sigma=0.2),
            lambda t: 1.5 * math.exp(-((t - 0.4) ** 2) / (2 * 0.2)),
        ),
        (
            GaussianEdge(A=0.7, sigma=0.5),
            lambda t: 0.7
            - 0.7 * math.exp(-(t**2) / 0.5)
            - 0.7 * math.exp(-((t - t_end) ** 2) / 0.5),
        ),
    ]
    for shape, formula in shapes:
        for t in samples:
            assert abs(control_shape_eval(shape, t, t_end) - formula(t)) <= 1e-15


def test_fixed_seeds_reproduce_logs():
    drive = ControlSpec(hc=(SX, SY), ctrl=np.zeros((2, 4)), bounds=(-2, 2))
    scheme = dephasing_scheme(
        gamma=0.1, tspan=np.linspace(0.0, 1.0, 5), controls=drive
    )
    objective = ObjectiveConfig(kind="QFIM")
    for make_algo in (
        lambda: DE(population=6, max_episode=10, seed=7),
        lambda: PSO(population=6, max_episode=10, seed=7),
    ):
        _, first = optimize(scheme, ControlOpt(), make_algo(), objective)
        _, second = optimize(scheme, ControlOpt(), make_algo(), objective)
        assert np.array_equal(first.objectives, second.objectives)
        assert np.array_equal(
            np.asarray(first.best_variables["controls"]),
            np.asarray(second.best_variables["controls"]),
        )

    x = np.linspace(0.2, 2.2, 33)
    bayes = dephasing_scheme(
        tspan=np.linspace(0.0, 1.0, 3),
        x=[x],
        p=np.full(33, 0.5),
        dp=[np.zeros(33)],
    )
    logs = [
        adapt(
            bayes,
            method="FOP",
            max_episode=15,
            result_source=SimulatedOutcomes(1.1, seed=5),
        )
        for _ in range(2)
    ]
    for field in ("outcome", "offset", "mean", "sd"):
        first = [getattr(e, field) for e in logs[0].episodes]
        second = [getattr(e, field) for e in logs[1].episodes]
        assert first == second
