import "./style.css";
import { createApp } from "./app";
import { ServiceClient } from "./client";
import { ThreeMeshViewer } from "./viewer";

const root = document.querySelector<HTMLDivElement>("#app");
if (!root) throw new Error("missing #app mount point");

// same-origin by default; vite dev proxies /infer,/classes,/health to :8000
const baseUrl = new URLSearchParams(location.search).get("service") ?? "";
const client = new ServiceClient(baseUrl);

async function boot(): Promise<void> {
  let classes: string[] = [];
  let bootError: string | null = null;
  try {
    classes = await client.classes();
  } catch {
    bootError = "could not reach the inference service — start it with `sketchmesh serve`";
  }
  const app = createApp(root!, {
    client,
    classes,
    viewer: (mount) => new ThreeMeshViewer(mount),
  });
  if (bootError !== null) {
    app.elements.errorBanner.hidden = false;
    app.elements.errorBanner.textContent = bootError;
  }
}

void boot();
