export { BindingError, NumericalError, ValidationError } from "./errors";
export {
  parseArtifactJson,
  type ComplexEntry,
  type ComplexMatrix,
  type ComplexVector,
} from "./values";
export {
  evaluatorBinary,
  runTask,
  type ExecOptions,
  type RunResult,
  type TaskName,
} from "./run";
export {
  nvScheme,
  wrapScheme,
  type ControlsInput,
  type DecayChannelInput,
  type HamiltonianInput,
  type NvParamsInput,
  type PriorInput,
  type ProbeInput,
  type SchemeHandle,
  type SchemeSpec,
  type ValidationReport,
} from "./scheme";
export {
  bound,
  errorControl,
  errorEvaluation,
  optimizeBinding,
  type AlgorithmInput,
  type BoundOptions,
  type BoundQuantity,
  type ErrorBudget,
  type ErrorBudgetOptions,
  type FisherResult,
  type ObjectiveInput,
  type OptimizeOutcome,
  type OptimizeRecord,
  type ScalarBoundResult,
  type ScenarioInput,
} from "./api";
