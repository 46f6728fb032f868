"""Forward error evaluation and inverse precision budgeting.

error_evaluation propagates a uniform input precision through the pipeline,
delta_f = sqrt(sum_i (df/dx_i)^2 dx^2), where the inputs are every
independent real degree of freedom of the model data (Hamiltonian, parameter
derivatives, control amplitudes, decay operators and rates, probe state).
error_control inverts the relation to suggest the input precision needed for
a target output precision.

On the adaptive-integration path the state error is modeled as
delta_rho = delta_x + h_max^4 (largest accepted step, unit constant) and the
gradients are taken through the bound computation from the final state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import ValidationError, hermitize
from .dynamics import LindbladSpec, evolve
from .io import to_jsonable
from .metrology import _cfim_matrix, _eigen_frame, _fisher_sld, _qfim_matrix
from .scheme import ControlSpec, DecayChannel, HamiltonianSpec, ProbeState

__all__ = ["ErrorBudget", "error_evaluation", "error_control"]

_MIN_STEP = 1e-7


@dataclass(frozen=True)
class ErrorBudget:
    """Outcome of an error propagation run.

    ``result`` is delta_f in evaluation mode and the suggested delta_x in
    control mode; ``gradient_terms`` maps each input group to its df/dx_i
    vector.
    """

    mode: str
    objective: str
    sld_eps: float
    result: float
    truncation_delta: float
    gradient_terms: dict
    input_error_scaling: float | None = None
    output_error_scaling: float | None = None

    def __post_init__(self):
        for label, value in (
            ("result", self.result),
            ("truncation_delta", self.truncation_delta),
            ("input_error_scaling", self.input_error_scaling),
            ("output_error_scaling", self.output_error_scaling),
        ):
            if value is not None and not value >= 0:
                raise ValidationError(f"{label} must be nonnegative, got {value}")

    def gradient_norm(self) -> float:
        return float(
            np.sqrt(
                sum(float(np.sum(g**2)) for g in self.gradient_terms.values())
            )
        )

    def table(self) -> str:
        lines = [
            f"{'mode':<24}{self.mode}",
            f"{'objective':<24}{self.objective}",
            f"{'sld_eps':<24}{self.sld_eps:.3g}",
        ]
        if self.input_error_scaling is not None:
            lines.append(f"{'input error scaling':<24}{self.input_error_scaling:.6e}")
        if self.output_error_scaling is not None:
            lines.append(
                f"{'output error target':<24}{self.output_error_scaling:.6e}"
            )
        for label, g in self.gradient_terms.items():
            lines.append(
                f"{'|grad| ' + label:<24}{float(np.linalg.norm(g)):.6e}"
            )
        lines.append(f"{'|grad| total':<24}{self.gradient_norm():.6e}")
        name = "delta_f" if self.mode == "evaluation" else "suggested delta_x"
        lines.append(f"{name:<24}{self.result:.6e}")
        lines.append(f"{'truncation delta_F':<24}{self.truncation_delta:.6e}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return to_jsonable(
            {
                "mode": self.mode,
                "objective": self.objective,
                "sld_eps": self.sld_eps,
                "input_error_scaling": self.input_error_scaling,
                "output_error_scaling": self.output_error_scaling,
                "result": self.result,
                "truncation_delta": self.truncation_delta,
                "gradient_terms": dict(self.gradient_terms),
            }
        )


# ---------------------------------------------------------------------------
# model inputs as independent real degrees of freedom


def _hermitian_dofs(d):
    """(i, j, part) triples spanning a d x d Hermitian matrix: diagonal and
    upper-triangle real parts, upper-triangle imaginary parts."""
    dofs = []
    for i in range(d):
        for j in range(i, d):
            dofs.append((i, j, "re"))
            if j > i:
                dofs.append((i, j, "im"))
    return dofs


def _perturb_hermitian(m, dof, h):
    i, j, part = dof
    out = np.array(m, dtype=complex)
    if i == j:
        out[i, i] += h
    elif part == "re":
        out[i, j] += h
        out[j, i] += h
    else:
        out[i, j] += 1j * h
        out[j, i] -= 1j * h
    return out


def _dense_dofs(shape):
    return [
        (i, j, part)
        for i in range(shape[0])
        for j in range(shape[1])
        for part in ("re", "im")
    ]


def _perturb_dense(m, dof, h):
    i, j, part = dof
    out = np.array(m, dtype=complex)
    out[i, j] += h if part == "re" else 1j * h
    return out


class _ModelInputs:
    """Materialized model data with one perturbation knob per input group."""

    def __init__(self, scheme):
        param = scheme.param
        if not isinstance(param, LindbladSpec):
            raise ValidationError(
                "error analysis applies to Lindblad-dynamics schemes"
            )
        ham = param.hamiltonian
        if ham.variant == "static":
            h0, dh = ham.h0, list(ham.dh)
        elif ham.variant == "parametric" and not ham.time_dependent:
            h0, dh = ham.at(float(param.tspan[0]))
        else:
            raise ValidationError(
                "error analysis needs a time-independent Hamiltonian"
            )
        self.h0 = np.asarray(h0, dtype=complex)
        self.dh = [np.asarray(m, dtype=complex) for m in dh]
        self.probe = scheme.probe
        self.decay_ops = [np.asarray(c.operator, dtype=complex) for c in param.decays]
        self.rates = [c.rate for c in param.decays]
        for k, r in enumerate(self.rates):
            if not np.isscalar(r):
                raise ValidationError(
                    f"error analysis needs constant decay rates (channel {k})"
                )
        self.hc = param.controls.hc
        self.amp = (
            param.controls.amplitudes(param.tspan) if self.hc else None
        )
        self.tspan = param.tspan
        self.dyn_method = param.dyn_method
        self.rtol, self.atol = param.rtol, param.atol
        self.d = self.h0.shape[0]

        self.groups = [("H0", _hermitian_dofs(self.d))]
        for a in range(len(self.dh)):
            self.groups.append((f"dH[{a}]", _hermitian_dofs(self.d)))
        if self.amp is not None:
            self.groups.append(
                ("controls", [(j, s) for j in range(self.amp.shape[0])
                              for s in range(self.amp.shape[1])])
            )
        for k, op in enumerate(self.decay_ops):
            self.groups.append((f"decay_op[{k}]", _dense_dofs(op.shape)))
        for k in range(len(self.rates)):
            self.groups.append((f"decay_rate[{k}]", [0]))
        if self.probe.kind == "pure":
            self.groups.append(
                ("probe", [(i, part) for i in range(self.d) for part in ("re", "im")])
            )
        else:
            self.groups.append(("probe", _hermitian_dofs(self.d)))

    def final_state(self, group=None, dof=None, h=0.0):
        """Evolve with one input degree of freedom shifted by h."""
        h0, dh = self.h0, self.dh
        probe = self.probe
        decay_ops, rates = self.decay_ops, list(self.rates)
        amp = self.amp

        if group is not None and h != 0.0:
            if group == "H0":
                h0 = _perturb_hermitian(h0, dof, h)
            elif group.startswith("dH["):
                a = int(group[3:-1])
                dh = list(dh)
                dh[a] = _perturb_hermitian(dh[a], dof, h)
            elif group == "controls":
                amp = np.array(amp)
                amp[dof] += h
            elif group.startswith("decay_op["):
                k = int(group[9:-1])
                decay_ops = list(decay_ops)
                decay_ops[k] = _perturb_dense(decay_ops[k], dof, h)
            elif group.startswith("decay_rate["):
                k = int(group[11:-1])
                rates[k] = rates[k] + h
            elif group == "probe":
                if probe.kind == "pure":
                    v = np.array(probe.data, dtype=complex)
                    i, part = dof
                    v[i] += h if part == "re" else 1j * h
                    probe = ProbeState.from_array(v / np.linalg.norm(v))
                else:
                    m = _perturb_hermitian(probe.data, dof, h)
                    lam, vec = np.linalg.eigh(m)
                    lam = np.clip(lam, 0.0, None)
                    m = (vec * lam) @ vec.conj().T
                    probe = ProbeState.from_array(m / np.real(np.trace(m)))
            else:
                raise ValidationError(f"unknown input group {group!r}")

        ham = HamiltonianSpec.static(h0, dh)
        controls = (
            ControlSpec(hc=self.hc, ctrl=amp, bounds=(-np.inf, np.inf))
            if self.hc
            else ControlSpec()
        )
        decays = tuple(
            DecayChannel(op, r) for op, r in zip(decay_ops, rates)
        )
        spec = LindbladSpec(
            ham,
            self.tspan,
            controls=controls,
            decays=decays,
            dyn_method=self.dyn_method,
            rtol=self.rtol,
            atol=self.atol,
        )
        traj = evolve(spec, probe)
        rho, drho = traj.at(-1)
        return rho, drho, traj.h_max

    def rate_step(self, k, h):
        """One-sided step keeps a near-zero rate nonnegative."""
        return (0.0, h) if self.rates[k] - h < 0 else (-h, h)


# ---------------------------------------------------------------------------
# objective scalar at the final time


def _objective_scalar(rho, drho, objective, povm, sld_eps):
    if objective == "QFIM":
        lam, _, rotated = _eigen_frame(rho, drho)
        fisher = _fisher_sld(lam, rotated, sld_eps)
    elif objective == "CFIM":
        fisher = _cfim_matrix(rho, drho, povm)
    else:
        raise ValidationError(
            f"objective must be QFIM or CFIM, got {objective!r}"
        )
    n = fisher.shape[0]
    return float(fisher[0, 0]) if n == 1 else float(np.trace(fisher))


def _truncation_delta(rho, drho, sld_eps):
    lam, _, rotated = _eigen_frame(rho, drho)
    _, delta = _qfim_matrix(lam, rotated, "SLD", sld_eps)
    return float(delta)


def _propagate(gradients, delta_x):
    """delta_f = sqrt(sum_i g_i^2 dx^2) for uniform input precision."""
    total = sum(float(np.sum(np.asarray(g) ** 2)) for g in gradients.values())
    return float(np.sqrt(total)) * float(delta_x)


# ---------------------------------------------------------------------------
# gradient assembly


def _input_gradients(inputs, scheme, objective, sld_eps, step):
    povm = scheme.measurement.povm if scheme.measurement is not None else None
    grads = {}
    for group, dofs in inputs.groups:
        g = np.empty(len(dofs))
        for idx, dof in enumerate(dofs):
            if group.startswith("decay_rate["):
                lo, hi = inputs.rate_step(int(group[11:-1]), step)
            else:
                lo, hi = -step, step
            rp, dp, _ = inputs.final_state(group, dof, hi)
            fp = _objective_scalar(rp, dp, objective, povm, sld_eps)
            rm, dm, _ = inputs.final_state(group, dof, lo)
            fm = _objective_scalar(rm, dm, objective, povm, sld_eps)
            g[idx] = (fp - fm) / (hi - lo)
            if not np.isfinite(g[idx]):
                raise ValidationError(
                    f"non-finite gradient for input {group} dof {dof}"
                )
        grads[group] = g
    return grads


def _state_gradients(rho, drho, scheme, objective, sld_eps, step):
    """Gradients of the bound w.r.t. the final-state degrees of freedom."""
    povm = scheme.measurement.povm if scheme.measurement is not None else None
    d = rho.shape[0]
    dofs = _hermitian_dofs(d)
    mats = [("rho(T)", rho)] + [
        (f"drho[{a}](T)", drho[a]) for a in range(len(drho))
    ]
    grads = {}
    for pos, (label, base) in enumerate(mats):
        g = np.empty(len(dofs))
        for idx, dof in enumerate(dofs):
            def bound_at(h):
                mat = _perturb_hermitian(base, dof, h)
                if pos == 0:
                    return _objective_scalar(mat, drho, objective, povm, sld_eps)
                der = list(drho)
                der[pos - 1] = mat
                return _objective_scalar(rho, der, objective, povm, sld_eps)

            g[idx] = (bound_at(step) - bound_at(-step)) / (2 * step)
            if not np.isfinite(g[idx]):
                raise ValidationError(
                    f"non-finite gradient for input {label} dof {dof}"
                )
        grads[label] = g
    return grads


# ---------------------------------------------------------------------------
# public operations


def error_evaluation(
    scheme,
    input_error_scaling: float,
    objective: str = "QFIM",
    sld_eps: float = 1e-8,
) -> ErrorBudget:
    """Propagate a uniform input precision to the objective at final time."""
    if not input_error_scaling > 0:
        raise ValidationError("input_error_scaling must be positive")
    inputs = _ModelInputs(scheme)
    step = max(_MIN_STEP, float(input_error_scaling))
    rho, drho, h_max = inputs.final_state()
    base = _objective_scalar(
        rho, drho, objective,
        scheme.measurement.povm if scheme.measurement is not None else None,
        sld_eps,
    )
    if not np.isfinite(base):
        raise ValidationError("objective is not finite for the input scheme")
    trunc = _truncation_delta(rho, drho, sld_eps)

    if inputs.dyn_method == "expm":
        grads = _input_gradients(inputs, scheme, objective, sld_eps, step)
        result = _propagate(grads, input_error_scaling)
    else:
        grads = _state_gradients(rho, drho, scheme, objective, sld_eps, step)
        delta_rho = float(input_error_scaling) + float(h_max) ** 4
        result = _propagate(grads, delta_rho)

    return ErrorBudget(
        mode="evaluation",
        objective=objective,
        sld_eps=float(sld_eps),
        result=result,
        truncation_delta=trunc,
        gradient_terms=grads,
        input_error_scaling=float(input_error_scaling),
    )


def error_control(
    scheme,
    output_error_scaling: float,
    objective: str = "QFIM",
    sld_eps: float = 1e-8,
) -> ErrorBudget:
    """Suggest the uniform input precision meeting an output error target."""
    if not output_error_scaling > 0:
        raise ValidationError("output_error_scaling must be positive")
    inputs = _ModelInputs(scheme)
    rho, drho, h_max = inputs.final_state()
    base = _objective_scalar(
        rho, drho, objective,
        scheme.measurement.povm if scheme.measurement is not None else None,
        sld_eps,
    )
    if not np.isfinite(base):
        raise ValidationError("objective is not finite for the input scheme")
    trunc = _truncation_delta(rho, drho, sld_eps)

    if inputs.dyn_method == "expm":
        grads = _input_gradients(inputs, scheme, objective, sld_eps, _MIN_STEP)
        norm = _propagate(grads, 1.0)
        if norm <= 0:
            raise ValidationError(
                "all objective gradients vanish; no input precision can be "
                "suggested"
            )
        result = float(output_error_scaling) / norm
    else:
        grads = _state_gradients(rho, drho, scheme, objective, sld_eps, _MIN_STEP)
        norm = _propagate(grads, 1.0)
        if norm <= 0:
            raise ValidationError(
                "all objective gradients vanish; no input precision can be "
                "suggested"
            )
        allowance = float(output_error_scaling) / norm
        h4 = float(h_max) ** 4
        if h4 > allowance:
            warnings.warn(
                f"integration error h_max^4 = {h4:.3e} exceeds the state "
                f"error allowance {allowance:.3e}; suggesting 0"
            )
            result = 0.0
        else:
            result = allowance - h4

    return ErrorBudget(
        mode="control",
        objective=objective,
        sld_eps=float(sld_eps),
        result=result,
        truncation_delta=trunc,
        gradient_terms=grads,
        output_error_scaling=float(output_error_scaling),
    )
