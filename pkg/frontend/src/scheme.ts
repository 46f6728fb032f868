import { execTask, translateFailure, type TaskName } from "./run";
import { BindingError } from "./errors";
import { copyIn, deepFreeze, type ComplexMatrix, type ComplexVector } from "./values";

/**
 * Scheme handles.
 *
 * A handle is an immutable snapshot of a fully validated configuration: the
 * constructor deep-copies every array it receives, renders the evaluator's
 * config format, and runs the config through the core validator before the
 * handle is returned.  All later operations (`bound`, `optimizeBinding`,
 * `errorEvaluation`, ...) derive per-call configs from the snapshot, so a
 * handle can be reused freely and never changes behind the caller's back.
 */

/** A probe state: builtin name ("Plus", "Zero", "Bell:2", ...) or array. */
export type ProbeInput = string | ComplexVector | ComplexMatrix;

export interface HamiltonianInput {
  /** Hamiltonian at the operating point (or linear-family constant term). */
  h0: ComplexMatrix;
  /** Parameter derivatives (or linear-family generators), one per parameter. */
  dh: ComplexMatrix[];
}

export interface ControlsInput {
  /** Control Hamiltonians. */
  hc: ComplexMatrix[];
  /** Per-control amplitude sequences; defaults to zeros when omitted. */
  amplitudes?: number[][];
  /** Amplitude bounds [lo, hi]; unbounded when omitted. */
  bounds?: [number, number];
}

export interface DecayChannelInput {
  operator: ComplexMatrix;
  /** Constant rate or one rate per time step. */
  rate: number | number[];
}

export interface PriorInput {
  /** Parameter grid, or one grid per parameter. */
  x: number[] | number[][];
  /** Prior density sampled on the grid. */
  p: number[];
  /** Density gradients; computed from `p` for one parameter when omitted. */
  dp?: number[] | number[][];
}

export interface SchemeSpec {
  probe: ProbeInput;
  hamiltonian: HamiltonianInput;
  /** Time grid as [start, step, stop]. */
  tspan: [number, number, number];
  controls?: ControlsInput;
  decays?: DecayChannelInput[];
  dynMethod?: "expm" | "ode";
  measurement?: "sic" | ComplexMatrix[];
  prior?: PriorInput;
}

export interface NvParamsInput {
  D?: number;
  gS?: number;
  gI?: number;
  A1?: number;
  A2?: number;
  B?: [number, number, number];
  gamma?: number;
  /** Time grid as [start, step, stop]. */
  tspan?: [number, number, number];
  psi0?: ComplexVector;
}

export interface ValidationReport {
  ok: true;
  /** Human-readable note recording how the config was validated. */
  detail: string;
}

export interface SchemeHandle {
  /** Task used to evaluate bounds for this handle. */
  readonly task: Extract<TaskName, "evaluate" | "nv">;
  /** Frozen evaluator config holding the validated scheme. */
  readonly config: Record<string, any>;
  readonly report: ValidationReport;
}

/**
 * The validator runs before any quantity is computed, so requesting an
 * unknown quantity exercises the full scheme validation and nothing else.
 * A rejected scheme surfaces its own diagnostic; a valid scheme surfaces the
 * unknown-quantity diagnostic, which we treat as acceptance.
 */
const PROBE_QUANTITY = "__validate__";
const PROBE_ACCEPTED = `error: evaluate.quantity: unknown quantity '${PROBE_QUANTITY}'`;

function validateConfig(task: SchemeHandle["task"], config: Record<string, any>): ValidationReport {
  const section = task === "nv" ? "nv" : "evaluate";
  const outcome = execTask(task, config, {
    sets: [`${section}.quantity=${PROBE_QUANTITY}`],
  });
  if (outcome.status === 1 && outcome.stderr.trim().startsWith(PROBE_ACCEPTED)) {
    return { ok: true, detail: "accepted by core validation" };
  }
  if (outcome.status === 0) {
    throw new BindingError("validation probe unexpectedly succeeded");
  }
  throw translateFailure(task, outcome);
}

/** Validate a config and freeze it into a handle. */
export function sealHandle(task: SchemeHandle["task"], config: Record<string, any>): SchemeHandle {
  const report = validateConfig(task, config);
  return Object.freeze({ task, config: deepFreeze(config), report: Object.freeze(report) });
}

/**
 * Build a handle for a general scheme.
 *
 * Validation is the core's: dimension mismatches, non-physical states,
 * malformed grids and the rest are rejected with the core's message,
 * raised as a {@link ValidationError}.
 */
export function wrapScheme(spec: SchemeSpec): SchemeHandle {
  const scheme: Record<string, any> = {
    probe: copyIn(spec.probe, "scheme.probe"),
    hamiltonian: copyIn(spec.hamiltonian, "scheme.hamiltonian"),
    tspan: copyIn(spec.tspan, "scheme.tspan"),
  };
  if (spec.controls !== undefined) scheme.controls = copyIn(spec.controls, "scheme.controls");
  if (spec.decays !== undefined) scheme.decays = copyIn(spec.decays, "scheme.decays");
  if (spec.dynMethod !== undefined) scheme.dyn_method = spec.dynMethod;
  if (spec.measurement !== undefined) scheme.measurement = copyIn(spec.measurement, "scheme.measurement");
  if (spec.prior !== undefined) scheme.prior = copyIn(spec.prior, "scheme.prior");
  return sealHandle("evaluate", { scheme });
}

/**
 * Build a handle for the nitrogen-vacancy magnetometry preset.  Omitted
 * fields take the core's published defaults.
 */
export function nvScheme(params: NvParamsInput = {}): SchemeHandle {
  const nv: Record<string, any> = {};
  for (const key of ["D", "gS", "gI", "A1", "A2", "gamma"] as const) {
    const value = params[key];
    if (value !== undefined) nv[key] = copyIn(value, `nv.${key}`);
  }
  if (params.B !== undefined) nv.B = copyIn(params.B, "nv.B");
  if (params.tspan !== undefined) nv.tspan = copyIn(params.tspan, "nv.tspan");
  if (params.psi0 !== undefined) nv.psi0 = copyIn(params.psi0, "nv.psi0");
  return sealHandle("nv", { nv });
}
