import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["test/**/*.test.ts"],
    // the integration suite spawns a real model server and runs a fit
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
