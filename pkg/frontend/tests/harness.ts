// Spawns a real idapipe service over a freshly built desk-scale fixture.
// The studio only ever talks to the documented HTTP endpoints, so the tests
// exercise exactly what a browser session would.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

const REPO_ROOT = dirname(dirname(dirname(fileURLToPath(import.meta.url))));
const PYTHON = process.env.IDAPIPE_PYTHON ?? "python3";

export interface Fixture {
  baseUrl: string;
  workdir: string;
  stop: () => void;
}

function py(args: string[], cwd: string): void {
  execFileSync(PYTHON, args, { cwd, stdio: "pipe" });
}

export async function startFixtureService(port: number): Promise<Fixture> {
  const tmp = mkdtempSync(join(tmpdir(), "idapipe-studio-"));
  const dataRoot = join(tmp, "data");
  const workdir = join(tmp, "work");
  const configPath = join(tmp, "config.json");
  writeFileSync(configPath, JSON.stringify({
    dataset: { name: "desk", root: dataRoot },
    workdir,
    train: { epochs: 2, batch_size: 8 },
  }));

  py(["-c", [
    "from idapipe import synthetic",
    `synthetic.build_sdg_dataset(r'${dataRoot}', domains=('cartoon', 'neon', 'photo', 'sketch'),`
    + " n_per_class_per_domain=2, seed=23)",
  ].join("\n")], REPO_ROOT);
  const cli = (args: string[]) =>
    py(["-m", "idapipe.cli", "--config", configPath, ...args], REPO_ROOT);
  cli(["ingest"]);
  cli(["pregenerate", "--source", "photo", "--k", "1", "--strategy", "M"]);
  cli(["filter", "--fraction", "0.25"]);
  cli(["sdg", "--k", "1"]); // persists a metrics run for the compare view

  const server: ChildProcess = spawn(
    PYTHON,
    ["-m", "idapipe.cli", "--config", configPath, "serve", "--port", String(port)],
    { cwd: REPO_ROOT, stdio: "pipe" },
  );
  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const response = await fetch(`${baseUrl}/api/datasets`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      server.kill();
      throw new Error("service did not come up within 30 s");
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  return {
    baseUrl,
    workdir,
    stop: () => {
      server.kill();
      rmSync(tmp, { recursive: true, force: true });
    },
  };
}
