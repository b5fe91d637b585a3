import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globalSetup: ["./tests/setup-service.ts"],
    testTimeout: 120_000,
    hookTimeout: 200_000,
    pool: "forks",
    fileParallelism: false,
  },
});
