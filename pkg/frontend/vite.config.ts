import { defineConfig } from "vite";

export default defineConfig({
  server: {
    proxy: {
      // dev server forwards API calls to the fusion service
      "/v1": "http://127.0.0.1:8008",
    },
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
