import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // The console-flow test boots the real Python service once per run.
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
