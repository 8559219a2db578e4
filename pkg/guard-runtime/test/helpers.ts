// Test scaffolding: builds projects on disk, outlines them through the
// capbom CLI (the primary's external interface), and runs guarded clones.
import { spawnSync, SpawnSyncReturns } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

const REPO_ROOT = path.resolve(__dirname, "..", "..", "..");
export const PYTHON_SRC = path.join(REPO_ROOT, "src");
export const FIXTURES = path.join(REPO_ROOT, "tests", "fixtures");

export interface ProjectSpec {
  name: string;
  version: string;
  files: Record<string, string>; // project-relative path -> content
  dependencies?: Record<string, ProjectSpec>;
  type?: "module" | "commonjs";
  main?: string;
}

export function makeTempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

function writePackage(root: string, spec: ProjectSpec): void {
  fs.mkdirSync(root, { recursive: true });
  const manifest: Record<string, unknown> = {
    name: spec.name,
    version: spec.version,
    main: spec.main ?? "index.js",
  };
  if (spec.type) manifest.type = spec.type;
  if (spec.dependencies) {
    manifest.dependencies = Object.fromEntries(
      Object.entries(spec.dependencies).map(([name, dep]) => [name, `^${dep.version}`]),
    );
  }
  fs.writeFileSync(path.join(root, "package.json"), JSON.stringify(manifest, null, 2) + "\n");
  for (const [rel, content] of Object.entries(spec.files)) {
    const target = path.join(root, rel);
    fs.mkdirSync(path.dirname(target), { recursive: true });
    fs.writeFileSync(target, content);
  }
  for (const dep of Object.values(spec.dependencies ?? {})) {
    writePackage(path.join(root, "node_modules", dep.name), dep);
  }
}

function collectPackages(spec: ProjectSpec, into: ProjectSpec[]): void {
  into.push(spec);
  for (const dep of Object.values(spec.dependencies ?? {})) {
    collectPackages(dep, into);
  }
}

export function writeProject(dir: string, spec: ProjectSpec): { root: string; sbom: string } {
  const root = path.join(dir, "project");
  writePackage(root, spec);

  const all: ProjectSpec[] = [];
  collectPackages(spec, all);
  const byId = new Map(all.map((p) => [`${p.name}@${p.version}`, p]));
  const components = [...byId.keys()]
    .filter((id) => id !== `${spec.name}@${spec.version}`)
    .map((id) => ({
      "bom-ref": id,
      name: id.slice(0, id.lastIndexOf("@")),
      version: id.slice(id.lastIndexOf("@") + 1),
    }));
  const dependencies = [...byId.entries()].map(([id, pkg]) => ({
    ref: id,
    dependsOn: Object.values(pkg.dependencies ?? {}).map((d) => `${d.name}@${d.version}`),
  }));
  const sbomDoc = {
    bomFormat: "CycloneDX",
    specVersion: "1.5",
    metadata: {
      component: {
        "bom-ref": `${spec.name}@${spec.version}`,
        name: spec.name,
        version: spec.version,
      },
    },
    components,
    dependencies,
  };
  const sbomPath = path.join(dir, "sbom.json");
  fs.writeFileSync(sbomPath, JSON.stringify(sbomDoc, null, 2) + "\n");
  return { root, sbom: sbomPath };
}

export interface OutlineOptions {
  mode?: "log" | "throw" | "exit";
  cbom?: string;
  entry?: string;
}

export function outline(
  dir: string,
  root: string,
  sbom: string,
  options: OutlineOptions = {},
): string {
  const out = path.join(dir, "clone");
  const args = [
    "-m", "capbom", "outline",
    "--sbom", sbom,
    "--root", root,
    "--out", out,
    "--mode", options.mode ?? "exit",
  ];
  if (options.cbom) args.push("--cbom", options.cbom);
  if (options.entry) args.push("--entry", options.entry);
  const result = spawnSync("python3", args, {
    env: { ...process.env, PYTHONPATH: PYTHON_SRC },
    encoding: "utf8",
  });
  if (result.status !== 0) {
    throw new Error(`outline failed: ${result.stderr}\n${result.stdout}`);
  }
  return out;
}

export interface CloneRun {
  status: number | null;
  stdout: string;
  stderr: string;
  violations: Array<Record<string, unknown>>;
}

export function runClone(clone: string, args: string[] = [], env: Record<string, string> = {}): CloneRun {
  const logFile = path.join(clone, "..", `violations-${Date.now()}-${Math.random()}.ndjson`);
  const result: SpawnSyncReturns<string> = spawnSync(
    process.execPath,
    [path.join(clone, "_guard", "launch.cjs"), `--guard-log=${logFile}`, ...args],
    { encoding: "utf8", env: { ...process.env, ...env } },
  );
  const violations: Array<Record<string, unknown>> = [];
  if (fs.existsSync(logFile)) {
    for (const line of fs.readFileSync(logFile, "utf8").split("\n")) {
      if (line.trim() === "") continue;
      violations.push(JSON.parse(line) as Record<string, unknown>);
    }
  }
  return { status: result.status, stdout: result.stdout, stderr: result.stderr, violations };
}

// Runs a script in a fresh node process with the clone's guard preloaded.
export function runWithGuard(clone: string, script: string): SpawnSyncReturns<string> {
  const wrapped = `
    const guard = require(${JSON.stringify(path.join(clone, "_guard", "guard.cjs"))});
    ${script}
  `;
  return spawnSync(process.execPath, ["--experimental-vm-modules", "-e", wrapped], {
    encoding: "utf8",
    env: { ...process.env },
  });
}

export function simpleApp(indexSource: string, extra: Partial<ProjectSpec> = {}): ProjectSpec {
  return {
    name: "probe-app",
    version: "1.0.0",
    main: "index.js",
    files: { "index.js": indexSource },
    ...extra,
  };
}
