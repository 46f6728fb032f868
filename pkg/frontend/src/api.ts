import { runTask } from "./run";
import { sealHandle, type SchemeHandle } from "./scheme";
import { copyIn, type ComplexMatrix, type ComplexVector } from "./values";

/**
 * Operations on scheme handles.
 *
 * Each function builds a per-call config from the handle's frozen snapshot,
 * runs the evaluator, and returns the `results` node of results.json as
 * plain arrays and numbers.  The values are exactly what the core computed —
 * the bindings never post-process them.
 */

export type BoundQuantity = "qfim" | "cfim" | "hcrb" | "nhb" | "vtb" | "qvtb";

export interface BoundOptions {
  /** Logarithmic-derivative flavor for qfim: "SLD" (default), "RLD", "LLD". */
  ldType?: "SLD" | "RLD" | "LLD";
  /** Real weight matrix for hcrb/nhb. */
  weight?: number[][];
}

/** Time-resolved Fisher information (qfim/cfim). */
export interface FisherResult {
  quantity: "qfim" | "cfim";
  /** Time grid. */
  times: number[];
  /** Per-time scalar (one parameter) or matrix (several parameters). */
  values: number[] | number[][][];
  ld_type?: string;
  truncation_delta?: number[];
}

/** Scalar bound at the final time (hcrb/nhb/vtb/qvtb). */
export interface ScalarBoundResult {
  quantity: "hcrb" | "nhb" | "vtb" | "qvtb";
  value: number;
}

function taskSection(handle: SchemeHandle, config: Record<string, any>): Record<string, any> {
  if (handle.task === "nv") {
    return config.nv;
  }
  config.evaluate = {};
  return config.evaluate;
}

/** Evaluate an estimation bound for the scheme behind `handle`. */
export function bound(handle: SchemeHandle, quantity: "qfim" | "cfim", options?: BoundOptions): FisherResult;
export function bound(
  handle: SchemeHandle,
  quantity: "hcrb" | "nhb" | "vtb" | "qvtb",
  options?: BoundOptions
): ScalarBoundResult;
export function bound(
  handle: SchemeHandle,
  quantity: BoundQuantity,
  options: BoundOptions = {}
): FisherResult | ScalarBoundResult {
  const config = structuredClone(handle.config);
  const section = taskSection(handle, config);
  section.quantity = quantity;
  if (options.ldType !== undefined) section.ld_type = options.ldType;
  if (options.weight !== undefined) section.weight = copyIn(options.weight, "options.weight");
  const { payload } = runTask(handle.task, config);
  return payload.results;
}

export interface ScenarioInput {
  type: "control" | "state" | "measurement" | "SM" | "SC" | "CM" | "SCM";
  /** Control-amplitude bounds [lo, hi] for scenarios that move controls. */
  ctrlBound?: [number, number];
  /** Measurement parameterization for scenarios that move the POVM. */
  mtype?: "Projection" | "Rotation" | "LC";
}

export interface AlgorithmInput {
  name: "DE" | "PSO" | "GRAPE";
  maxEpisode?: number;
  population?: number;
  seed?: number;
  /** DE */
  mutation?: number;
  crossover?: number;
  /** PSO */
  inertia?: number;
  cognitive?: number;
  social?: number;
  /** GRAPE */
  learningRate?: number;
}

export interface ObjectiveInput {
  kind?: "QFIM" | "CFIM" | "HCRB";
  weight?: number[][];
  direction?: "min" | "max";
}

/** Wire-format optimization record (the `results` node of the run). */
export interface OptimizeRecord {
  scenario: string;
  algorithm: string;
  direction: "min" | "max";
  best_objective: number;
  converged: boolean;
  reason: string;
  iterations: number;
  /** Best objective after the initial evaluation and after each episode. */
  objectives: number[];
  /** Optimized variables: controls, state, povm and/or rotation. */
  variables: {
    controls?: number[][];
    state?: ComplexVector;
    povm?: ComplexMatrix[];
    rotation?: number[];
  };
}

export interface OptimizeOutcome {
  /** New handle with the optimized variables folded into the scheme. */
  handle: SchemeHandle;
  results: OptimizeRecord;
}

function foldVariables(base: Record<string, any>, variables: OptimizeRecord["variables"]): Record<string, any> {
  const config = structuredClone(base);
  if (variables.controls !== undefined) {
    config.scheme.controls = { ...config.scheme.controls, amplitudes: variables.controls };
  }
  if (variables.state !== undefined) {
    config.scheme.probe = variables.state;
  }
  if (variables.povm !== undefined) {
    config.scheme.measurement = variables.povm;
  }
  return config;
}

/**
 * Optimize the scheme behind `handle` and return the history plus a new
 * handle whose scheme carries the optimized controls/state/measurement
 * (a rotation parameterization folds in through its `povm`).
 */
export function optimizeBinding(
  handle: SchemeHandle,
  scenario: ScenarioInput,
  algorithm: AlgorithmInput,
  objective: ObjectiveInput = {}
): OptimizeOutcome {
  const config = structuredClone(handle.config);
  const scenarioNode: Record<string, any> = { type: scenario.type };
  if (scenario.ctrlBound !== undefined) scenarioNode.ctrl_bound = copyIn(scenario.ctrlBound, "scenario.ctrlBound");
  if (scenario.mtype !== undefined) scenarioNode.mtype = scenario.mtype;

  const algorithmNode: Record<string, any> = { name: algorithm.name };
  if (algorithm.maxEpisode !== undefined) algorithmNode.max_episode = algorithm.maxEpisode;
  if (algorithm.population !== undefined) algorithmNode.population = algorithm.population;
  if (algorithm.seed !== undefined) algorithmNode.seed = algorithm.seed;
  if (algorithm.mutation !== undefined) algorithmNode.mutation = algorithm.mutation;
  if (algorithm.crossover !== undefined) algorithmNode.crossover = algorithm.crossover;
  if (algorithm.inertia !== undefined) algorithmNode.inertia = algorithm.inertia;
  if (algorithm.cognitive !== undefined) algorithmNode.cognitive = algorithm.cognitive;
  if (algorithm.social !== undefined) algorithmNode.social = algorithm.social;
  if (algorithm.learningRate !== undefined) algorithmNode.learning_rate = algorithm.learningRate;

  const objectiveNode: Record<string, any> = {};
  if (objective.kind !== undefined) objectiveNode.kind = objective.kind;
  if (objective.weight !== undefined) objectiveNode.weight = copyIn(objective.weight, "objective.weight");
  if (objective.direction !== undefined) objectiveNode.direction = objective.direction;

  config.optimize = {
    scenario: scenarioNode,
    algorithm: algorithmNode,
    objective: objectiveNode,
  };
  const { payload } = runTask("optimize", config);
  const results: OptimizeRecord = payload.results;
  const next = sealHandle(handle.task, foldVariables(handle.config, results.variables));
  return { handle: next, results };
}

export interface ErrorBudgetOptions {
  /** Objective the budget is taken on: "QFIM" (default) or "CFIM". */
  objective?: "QFIM" | "CFIM";
  /** Finite-difference step for the sensitivity sweep. */
  sldEps?: number;
}

/** Wire-format error budget (the `results` node of the run). */
export interface ErrorBudget {
  mode: "evaluation" | "control";
  objective: string;
  sld_eps: number;
  /** Input scaling: given in evaluation mode, null in control mode. */
  input_error_scaling: number | null;
  /** Output target: given in control mode, null in evaluation mode. */
  output_error_scaling: number | null;
  /** Propagated output error (evaluation) or suggested input scaling (control). */
  result: number;
  truncation_delta: number;
  /** Objective gradient with respect to each group of model inputs. */
  gradient_terms: Record<string, number[]>;
}

function runErrorTask(
  handle: SchemeHandle,
  section: Record<string, any>,
  options: ErrorBudgetOptions
): ErrorBudget {
  if (options.objective !== undefined) section.objective = options.objective;
  if (options.sldEps !== undefined) section.sld_eps = options.sldEps;
  const config = structuredClone(handle.config);
  config.error = section;
  const { payload } = runTask("error", config);
  return payload.results;
}

/** Propagate an input error scaling through the scheme's objective. */
export function errorEvaluation(
  handle: SchemeHandle,
  inputErrorScaling: number,
  options: ErrorBudgetOptions = {}
): ErrorBudget {
  return runErrorTask(handle, { mode: "evaluation", input_error_scaling: inputErrorScaling }, options);
}

/** Find the input error scaling that meets an output error target. */
export function errorControl(
  handle: SchemeHandle,
  outputErrorScaling: number,
  options: ErrorBudgetOptions = {}
): ErrorBudget {
  return runErrorTask(handle, { mode: "control", output_error_scaling: outputErrorScaling }, options);
}
