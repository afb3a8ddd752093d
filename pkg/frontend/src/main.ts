import { App, loadConfig } from "./app.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const app = new App(root, await loadConfig());
  await app.start();
}

void boot();
