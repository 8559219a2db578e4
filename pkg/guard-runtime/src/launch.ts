// Launcher entry of a guarded clone: node <clone>/_guard/launch.cjs [args...]
//
// Re-executes itself with the vm-modules flag when the clone contains ES
// module units, points the process at the original working directory, then
// initializes the guard (which prunes sensitive globals) and loads the
// outlined entry file. A `--guard-log=<path>` argument redirects the
// violation NDJSON stream from stderr to a file.

import * as fs from "fs";
import * as path from "path";
import * as vm from "vm";
import { spawnSync } from "child_process";
import { pathToFileURL } from "url";

interface CloneManifest {
  entry: string;
  mode: string;
  root_package: string;
  requires_vm_modules: boolean;
  working_directory: string;
}

// Captured before the guard prunes sensitive globals; nothing in this file
// may read `process` off globalThis after the guard loads.
const realProcess = process;
const dynamicImport = new Function("specifier", "return import(specifier);") as (
  specifier: string,
) => Promise<unknown>;

function main(): void {
  const guardDir = __dirname;
  const cloneRoot = path.resolve(guardDir, "..");
  const manifest = JSON.parse(
    fs.readFileSync(path.join(guardDir, "manifest.json"), "utf8"),
  ) as CloneManifest;

  const args: string[] = [];
  for (const arg of realProcess.argv.slice(2)) {
    if (arg.startsWith("--guard-log=")) {
      realProcess.env.CAPBOM_GUARD_LOG = arg.slice("--guard-log=".length);
    } else {
      args.push(arg);
    }
  }

  // The vm-modules flag is required for ES module units and for intercepting
  // the import() function inside CommonJS units, so it is always ensured.
  const vmModulesAvailable =
    typeof (vm as unknown as { SourceTextModule?: unknown }).SourceTextModule === "function";
  if (!vmModulesAvailable) {
    const result = spawnSync(
      realProcess.execPath,
      ["--experimental-vm-modules", __filename, ...realProcess.argv.slice(2)],
      { stdio: "inherit", env: realProcess.env },
    );
    realProcess.exit(result.status === null ? 1 : result.status);
  }

  const entryClone = path.join(cloneRoot, manifest.entry);
  const entryOriginal = path.join(manifest.working_directory, manifest.entry);
  realProcess.argv = [realProcess.argv[0], entryOriginal, ...args];
  realProcess.chdir(manifest.working_directory);

  // Loading the guard prunes sensitive globals; nothing below may rely on
  // them resolving through globalThis.
  require("./guard.cjs");

  if (isEsmEntry(cloneRoot, entryClone)) {
    dynamicImport(pathToFileURL(entryClone).href).catch((err: unknown) => {
      reportFatal(err);
    });
  } else {
    try {
      require(entryClone);
    } catch (err) {
      reportFatal(err);
    }
  }
}

function isEsmEntry(cloneRoot: string, entryPath: string): boolean {
  if (entryPath.endsWith(".mjs")) return true;
  if (entryPath.endsWith(".cjs")) return false;
  let dir = path.dirname(entryPath);
  while (true) {
    const manifestPath = path.join(dir, "package.json");
    if (fs.existsSync(manifestPath)) {
      try {
        const doc = JSON.parse(fs.readFileSync(manifestPath, "utf8")) as { type?: string };
        return doc.type === "module";
      } catch {
        return false;
      }
    }
    if (dir === cloneRoot || dir === path.dirname(dir)) return false;
    dir = path.dirname(dir);
  }
}

function reportFatal(err: unknown): void {
  const message = err instanceof Error ? err.stack ?? err.message : String(err);
  fs.writeSync(2, message + "\n");
  realProcess.exitCode = 1;
}

main();
