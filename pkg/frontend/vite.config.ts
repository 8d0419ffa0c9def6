import { defineConfig } from "vite";

const service = "http://127.0.0.1:8000";

export default defineConfig({
  server: {
    proxy: {
      "/infer": service,
      "/classes": service,
      "/health": service,
    },
  },
  test: {
    environment: "node",
  },
});
