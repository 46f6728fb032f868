import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { BindingError, NumericalError, ValidationError } from "./errors";
import { parseArtifactJson, serializeConfig } from "./values";

/**
 * Process-boundary runner.
 *
 * Every operation is one invocation of the `qestim` binary with a private
 * temporary directory: the config is written there as JSON, the binary runs
 * with `--out` pointing at the same directory, `results.json` is read back,
 * and the directory is removed.  Because no state survives between calls,
 * concurrent calls on distinct handles (e.g. from worker threads) cannot
 * interfere; a single handle must not be shared across threads.
 */

/** Name or path of the evaluator binary; override with QESTIM_BIN. */
export function evaluatorBinary(): string {
  return process.env.QESTIM_BIN ?? "qestim";
}

export type TaskName = "evaluate" | "optimize" | "error" | "adapt" | "nv";

export interface ExecOptions {
  /** `--set KEY=VALUE` overrides applied after the config file. */
  sets?: string[];
  /** Run seed forwarded as `--seed`. */
  seed?: number;
}

export interface ExecOutcome {
  status: number;
  stdout: string;
  stderr: string;
  /** Parsed results.json payload; present only on success. */
  payload?: any;
  /** Raw results.json text; present only on success. */
  raw?: string;
}

/** Run the binary and report the outcome without interpreting failures. */
export function execTask(task: TaskName, config: unknown | null, options: ExecOptions = {}): ExecOutcome {
  const dir = mkdtempSync(join(tmpdir(), "qestim-run-"));
  try {
    const argv: string[] = [task, "--out", dir, "--quiet"];
    if (config !== null) {
      const cfgPath = join(dir, "config.json");
      writeFileSync(cfgPath, serializeConfig(config));
      argv.push("--config", cfgPath);
    }
    if (options.seed !== undefined) {
      argv.push("--seed", String(options.seed));
    }
    for (const override of options.sets ?? []) {
      argv.push("--set", override);
    }
    const proc = spawnSync(evaluatorBinary(), argv, { encoding: "utf8" });
    if (proc.error) {
      throw new BindingError(`failed to launch ${evaluatorBinary()}: ${proc.error.message}`);
    }
    const outcome: ExecOutcome = {
      status: proc.status ?? -1,
      stdout: proc.stdout ?? "",
      stderr: proc.stderr ?? "",
    };
    if (outcome.status === 0) {
      outcome.raw = readFileSync(join(dir, "results.json"), "utf8");
      outcome.payload = parseArtifactJson(outcome.raw);
    }
    return outcome;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Last non-empty stderr line, where the binary puts its diagnostic. */
export function diagnosticLine(stderr: string): string {
  const lines = stderr
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
  return lines.length > 0 ? lines[lines.length - 1] : "";
}

/** Map a failed invocation onto the host exception taxonomy. */
export function translateFailure(task: TaskName, outcome: ExecOutcome): Error {
  const line = diagnosticLine(outcome.stderr);
  if (outcome.status === 1 && line.startsWith("error: ")) {
    return new ValidationError(line.slice("error: ".length));
  }
  if (outcome.status === 2) {
    return new NumericalError(line);
  }
  return new BindingError(
    `${task} exited with status ${outcome.status}: ${line || "no diagnostic"}`
  );
}

export interface RunResult {
  payload: any;
  /** Raw results.json text, for callers that need byte-level access. */
  raw: string;
  stdout: string;
}

/**
 * Run a task to completion, throwing the translated error on failure.
 *
 * This is the low-level escape hatch: it accepts an arbitrary config object
 * and returns the full results.json payload untouched.
 */
export function runTask(task: TaskName, config: unknown | null, options: ExecOptions = {}): RunResult {
  const outcome = execTask(task, config, options);
  if (outcome.status !== 0) {
    throw translateFailure(task, outcome);
  }
  return { payload: outcome.payload, raw: outcome.raw as string, stdout: outcome.stdout };
}
