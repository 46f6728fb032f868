import { BindingError } from "./errors";

/**
 * Helpers for moving values across the process boundary.
 *
 * Configs travel to the evaluator as JSON text (its config reader accepts
 * JSON because JSON is a YAML subset) and results come back as JSON with two
 * quirks: floats are printed with 17 significant digits, and non-finite
 * values appear as the bare tokens `NaN`, `Infinity` and `-Infinity`, which
 * `JSON.parse` rejects.  Everything here is plumbing; no numerical logic.
 */

/** A complex entry in the wire format: a plain real or a `[re, im]` pair. */
export type ComplexEntry = number | [number, number];
export type ComplexVector = ComplexEntry[];
export type ComplexMatrix = ComplexEntry[][];

/** Bare non-finite tokens in value position, e.g. `": NaN,"` or `"[Infinity]"`. */
const NON_FINITE_TOKEN = /(?<=[:,[]\s*)(-?Infinity|NaN)(?=\s*[,\]}])/g;
const MARKER = "__qestim_nonfinite__";

/** Parse evaluator JSON output, accepting bare NaN/Infinity tokens. */
export function parseArtifactJson(text: string): any {
  const marked = text.replace(NON_FINITE_TOKEN, (tok) => `{"${MARKER}":"${tok}"}`);
  try {
    return JSON.parse(marked, (_key, value) =>
      value !== null && typeof value === "object" && MARKER in value
        ? Number(value[MARKER])
        : value
    );
  } catch (exc) {
    throw new BindingError(`unparseable evaluator artifact: ${(exc as Error).message}`);
  }
}

/**
 * Deep-copy a value received at the boundary so later caller-side mutation
 * cannot leak into a handle, and reject anything JSON cannot round-trip
 * (undefined, functions, non-finite numbers JSON.stringify would silently
 * turn into null).
 */
export function copyIn<T>(value: T, path: string): T {
  assertJsonSafe(value, path);
  return structuredClone(value);
}

export function assertJsonSafe(value: unknown, path: string): void {
  if (value === null) return;
  switch (typeof value) {
    case "number":
      if (!Number.isFinite(value)) {
        throw new BindingError(`${path}: non-finite number cannot be serialized`);
      }
      return;
    case "string":
    case "boolean":
      return;
    case "object":
      if (Array.isArray(value)) {
        value.forEach((entry, i) => assertJsonSafe(entry, `${path}[${i}]`));
        return;
      }
      if (Object.getPrototypeOf(value) === Object.prototype || Object.getPrototypeOf(value) === null) {
        for (const [key, entry] of Object.entries(value)) {
          assertJsonSafe(entry, `${path}.${key}`);
        }
        return;
      }
      throw new BindingError(`${path}: expected plain data, got ${value.constructor?.name ?? "object"}`);
    default:
      throw new BindingError(`${path}: expected plain data, got ${typeof value}`);
  }
}

/** Serialize a config object to text the evaluator's reader accepts. */
export function serializeConfig(config: unknown): string {
  assertJsonSafe(config, "config");
  return JSON.stringify(config, null, 1) + "\n";
}

/** Recursively freeze a plain-data tree (handles are immutable snapshots). */
export function deepFreeze<T>(value: T): T {
  if (value !== null && typeof value === "object") {
    for (const entry of Object.values(value)) {
      deepFreeze(entry);
    }
    Object.freeze(value);
  }
  return value;
}
