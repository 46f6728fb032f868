import { defineConfig } from "vitest/config";

// Every assertion shells out to the evaluator binary (a Python process with a
// cold numpy/scipy import), so individual tests need generous timeouts.
export default defineConfig({
  test: {
    testTimeout: 240_000,
    hookTimeout: 240_000,
  },
});
