// End-to-end behavior of guarded clones built through the capbom CLI.
import { test } from "node:test";
import * as assert from "node:assert/strict";
import * as path from "path";

import {
  FIXTURES,
  makeTempDir,
  outline,
  runClone,
  simpleApp,
  writeProject,
} from "./helpers";

test("benign rate-map clone computes the mapped value", () => {
  const dir = makeTempDir("guard-benign-");
  const clone = outline(
    dir,
    path.join(FIXTURES, "rate-map-benign", "project"),
    path.join(FIXTURES, "rate-map-benign", "sbom.json"),
  );
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  assert.equal(run.stdout.trim(), "5");
  assert.deepEqual(run.violations, []);
});

test("malicious rate-map clone terminates on the covert access", () => {
  const dir = makeTempDir("guard-malicious-");
  const clone = outline(
    dir,
    path.join(FIXTURES, "rate-map-malicious", "project"),
    path.join(FIXTURES, "rate-map-malicious", "sbom.json"),
    { cbom: path.join(FIXTURES, "rate-map-malicious", "cbom-enforced.json"), mode: "exit" },
  );
  const run = runClone(clone);
  assert.equal(run.status, 13);
  assert.equal(run.stdout.trim(), "");
  assert.equal(run.violations.length, 1);
  const record = run.violations[0];
  assert.equal(record.package, "rate-map@1.0.3");
  assert.equal(record.kind, "import");
  assert.equal(record.subject, "dl-tar");
  assert.equal(record.mode, "exit");
  assert.equal(record.file, "node_modules/rate-map/index.js");
});

test("log mode records violations and continues until the stub bites", () => {
  const dir = makeTempDir("guard-log-");
  const clone = outline(
    dir,
    path.join(FIXTURES, "rate-map-malicious", "project"),
    path.join(FIXTURES, "rate-map-malicious", "sbom.json"),
    { cbom: path.join(FIXTURES, "rate-map-malicious", "cbom-enforced.json"), mode: "log" },
  );
  const run = runClone(clone);
  assert.notEqual(run.status, 13); // never the immediate-exit path
  const subjects = run.violations.map((v) => v.subject);
  assert.deepEqual(subjects, ["dl-tar", "fs"]);
  assert.ok(run.violations.every((v) => v.mode === "log"));
});

test("throw mode surfaces a catchable error naming kind and subject only", () => {
  const dir = makeTempDir("guard-throw-");
  const app = simpleApp(`
    try {
      require("fs");
      console.log("NOT-DENIED");
    } catch (err) {
      console.log("CAUGHT " + err.message);
    }
  `);
  const { root, sbom } = writeProject(dir, app);
  const fsMod = require("fs") as typeof import("fs");
  const cbom = path.join(dir, "cbom.json");
  fsMod.writeFileSync(cbom, "{}\n");
  const clone = outline(dir, root, sbom, { mode: "throw", cbom });
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  assert.equal(run.stdout.trim(), "CAUGHT import 'fs' denied");
  assert.equal(run.violations.length, 1);
  assert.equal(run.violations[0].kind, "import");
  assert.equal(run.violations[0].subject, "fs");
});

test("undeclared dependency is denied even when installed", () => {
  const dir = makeTempDir("guard-undeclared-");
  const hidden: Parameters<typeof writeProject>[1] = {
    name: "app",
    version: "1.0.0",
    main: "index.js",
    files: { "index.js": 'try { require("deep"); console.log("GOT-DEEP"); } catch (e) { console.log("DENIED"); }' },
    dependencies: {
      direct: {
        name: "direct",
        version: "1.0.0",
        files: { "index.js": 'module.exports = require("deep");' },
        dependencies: {
          deep: {
            name: "deep",
            version: "1.0.0",
            files: { "index.js": "module.exports = 7;" },
          },
        },
      },
    },
  };
  const { root, sbom } = writeProject(dir, hidden);
  const clone = outline(dir, root, sbom, { mode: "throw" });
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  // The app itself may not reach transitive packages, but `direct` may.
  assert.equal(run.stdout.trim(), "DENIED");
  assert.equal(run.violations[0].package, "app@1.0.0");
  assert.equal(run.violations[0].subject, "deep");
});

test("declared dependency chain resolves through nested node_modules", () => {
  const dir = makeTempDir("guard-chain-");
  const { root, sbom } = writeProject(dir, {
    name: "app",
    version: "1.0.0",
    main: "index.js",
    files: { "index.js": 'console.log(require("direct"));' },
    dependencies: {
      direct: {
        name: "direct",
        version: "1.0.0",
        files: { "index.js": 'module.exports = require("deep") * 3;' },
        dependencies: {
          deep: { name: "deep", version: "1.0.0", files: { "index.js": "module.exports = 7;" } },
        },
      },
    },
  });
  const clone = outline(dir, root, sbom);
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  assert.equal(run.stdout.trim(), "21");
  assert.deepEqual(run.violations, []);
});

test("esm application with mixed module kinds runs guarded", () => {
  const dir = makeTempDir("guard-esm-");
  const { root, sbom } = writeProject(dir, {
    name: "esm-app",
    version: "1.0.0",
    type: "module",
    main: "main.js",
    files: {
      "main.js": `
        import { greet } from "esm-dep";
        import squared from "cjs-dep";
        import * as util from "./util.js";
        console.log(greet("clone"), squared(7), util.twice(21));
      `,
      "util.js": "export function twice(n) { return n * 2; }\n",
    },
    dependencies: {
      "esm-dep": {
        name: "esm-dep",
        version: "1.0.0",
        type: "module",
        files: {
          "index.js": `
            export function greet(name) {
              const host = process.platform ? "known" : "unknown";
              return "hi " + name + " (" + host + ")";
            }
          `,
        },
      },
      "cjs-dep": {
        name: "cjs-dep",
        version: "1.0.0",
        main: "index.cjs",
        files: { "index.cjs": "module.exports = function squared(n) { return n * n; };\n" },
      },
    },
  });
  const clone = outline(dir, root, sbom, { entry: "main.js" });
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  assert.equal(run.stdout.trim(), "hi clone (known) 49 42");
});

test("esm import of a privileged builtin is denied without the grant", () => {
  const dir = makeTempDir("guard-esm-deny-");
  const { root, sbom } = writeProject(dir, {
    name: "esm-deny",
    version: "1.0.0",
    type: "module",
    main: "main.js",
    files: {
      // The specifier lives in a constant to stay invisible to inference.
      "main.js": `
        const target = ["node", "child_process"].join(":");
        try {
          await import(target);
          console.log("NOT-DENIED");
        } catch (err) {
          console.log("DENIED " + err.message);
        }
      `,
    },
  });
  const clone = outline(dir, root, sbom, { mode: "throw", entry: "main.js" });
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  assert.equal(run.stdout.trim(), "DENIED import 'node:child_process' denied");
  assert.equal(run.violations[0].kind, "import");
});

test("violation stream defaults to stderr when no log flag is given", () => {
  const dir = makeTempDir("guard-stderr-");
  const app = simpleApp('try { require("fs"); } catch (e) {}\nconsole.log("done");');
  const { root, sbom } = writeProject(dir, app);
  const fsMod = require("fs") as typeof import("fs");
  const cbom = path.join(dir, "cbom.json");
  fsMod.writeFileSync(cbom, "{}\n");
  const clone = outline(dir, root, sbom, { mode: "throw", cbom });
  const { spawnSync } = require("child_process") as typeof import("child_process");
  const result = spawnSync(
    process.execPath,
    [path.join(clone, "_guard", "launch.cjs")],
    { encoding: "utf8" },
  );
  assert.equal(result.status, 0);
  const jsonLines = result.stderr
    .split("\n")
    .filter((line: string) => line.startsWith("{"));
  assert.equal(jsonLines.length, 1);
  const record = JSON.parse(jsonLines[0]);
  assert.equal(record.subject, "fs");
});

test("working directory and cjs path variables reflect the original tree", () => {
  const dir = makeTempDir("guard-cwd-");
  // process usage grants system via inference; cwd must be the original root,
  // and the synthesized __dirname/__filename name the original files.
  const app = simpleApp("console.log(process.cwd());\nconsole.log(__dirname);\nconsole.log(__filename);\n");
  const { root, sbom } = writeProject(dir, app);
  const clone = outline(dir, root, sbom);
  const run = runClone(clone);
  assert.equal(run.status, 0, run.stderr);
  const fsReal = require("fs") as typeof import("fs");
  const pathReal = require("path") as typeof import("path");
  const realRoot = fsReal.realpathSync(root);
  assert.deepEqual(run.stdout.trim().split("\n"), [
    realRoot,
    realRoot,
    pathReal.join(realRoot, "index.js"),
  ]);
});
