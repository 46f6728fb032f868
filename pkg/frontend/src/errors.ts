/**
 * Error taxonomy translated from the evaluator's exit conventions.
 *
 * The `qestim` binary signals configuration problems with exit code 1 and a
 * single `error: <keypath>: <message>` line on stderr, and numerical
 * breakdowns (singular matrices, solver failures, overflow) with exit code 2
 * and a `numerical failure in <module>: <message>` line.  The bindings map
 * those onto distinct exception classes so callers can branch on the failure
 * kind while still seeing the core's message verbatim.
 */

/** A scheme or task configuration was rejected by the core validator. */
export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

/** The core accepted the configuration but a computation broke down. */
export class NumericalError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "NumericalError";
  }
}

/**
 * The bindings themselves were misused or the evaluator behaved unexpectedly
 * (missing binary, unparseable artifact, non-finite number in a spec, ...).
 */
export class BindingError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "BindingError";
  }
}
