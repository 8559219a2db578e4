// Runtime library shipped into every guarded clone as _guard/guard.cjs.
//
// Responsibilities: capture primordials and sensitive globals before any
// guest code runs, load per-package policies, build per-file evaluation
// contexts exposing exactly the allowed globals, intercept all three import
// avenues plus process.binding, and apply the configured enforcement mode.
//
// Hardening rules: every collection lookup the verdict depends on goes
// through function references captured at load time, so guest mutation of
// shared prototypes cannot flip a decision; guard-owned tables use null
// prototypes and are frozen.

import * as fs from "fs";
import * as path from "path";
import * as vm from "vm";
import { createRequire } from "module";
import { pathToFileURL, fileURLToPath } from "url";

type Mode = "log" | "throw" | "exit";
type UnitKind = "cjs" | "esm";

interface PolicyDoc {
  package: string;
  grants: string[];
  mode: Mode;
  codegen: boolean;
  imports: {
    files: string[];
    packages: string[];
    builtins: string[];
    granted_builtins: string[];
  };
  bindings: { granted: string[] };
  globals: { granted: string[] };
  package_roots: string[];
}

interface CloneManifest {
  entry: string;
  mode: Mode;
  root_package: string;
  requires_vm_modules: boolean;
  working_directory: string;
  packages: Record<string, { roots: string[]; policy: string }>;
}

interface ContextOptions {
  kind: UnitKind;
  file: string; // project-relative original path
  packageFile: string; // package-relative original path
  aliases: Record<string, string>;
  host?: {
    require: NodeRequire;
    module: NodeModule;
    filename: string;
    dirname: string;
  };
  url?: string; // outlined file URL (esm units)
}

interface GuardedContext {
  policy: PolicyDoc;
  opts: ContextOptions;
  sandbox: Record<string | symbol, unknown>;
  context: vm.Context;
  guestModule?: { exports: unknown };
  outlinedDir: string;
}

// ---------------------------------------------------------------------------
// Primordials: captured before any guest code can run.
// ---------------------------------------------------------------------------

// uncurry(fn)(self, ...args) invokes fn with `self` as receiver through
// references captured now, immune to later prototype tampering.
const uncurry = Function.prototype.bind.bind(Function.prototype.call) as <
  T, A extends unknown[], R
>(fn: (this: T, ...args: A) => R) => (self: T, ...args: A) => R;

const P = Object.freeze({
  arrayIncludes: uncurry(Array.prototype.includes),
  arrayPush: uncurry(Array.prototype.push),
  arrayJoin: uncurry(Array.prototype.join),
  stringStartsWith: uncurry(String.prototype.startsWith),
  stringEndsWith: uncurry(String.prototype.endsWith),
  stringSlice: uncurry(String.prototype.slice),
  stringSplit: uncurry(String.prototype.split) as unknown as (
    self: string, separator: string,
  ) => string[],
  stringIndexOf: uncurry(String.prototype.indexOf),
  stringReplace: uncurry(String.prototype.replace),
  dateToISOString: uncurry(Date.prototype.toISOString),
  mapGet: uncurry(Map.prototype.get),
  mapSet: uncurry(Map.prototype.set),
  mapHas: uncurry(Map.prototype.has),
  setHas: uncurry(Set.prototype.has),
  setAdd: uncurry(Set.prototype.add),
  jsonParse: JSON.parse,
  jsonStringify: JSON.stringify,
  objectFreeze: Object.freeze,
  objectCreate: Object.create,
  objectDefineProperty: Object.defineProperty,
  objectKeys: Object.keys,
  objectGetOwnPropertyNames: Object.getOwnPropertyNames,
  objectGetOwnPropertyDescriptor: Object.getOwnPropertyDescriptor,
  dateNow: Date.now,
  DateCtor: Date,
  ErrorCtor: Error,
  PromiseResolve: Promise.resolve.bind(Promise),
  reflectApply: Reflect.apply,
});

// The capability mapping tables: the enforcement contract for name lookups.
const SENSITIVE_GLOBALS: Record<string, string> = P.objectFreeze(
  Object.assign(P.objectCreate(null), {
    eval: "code",
    Function: "code",
    Crypto: "crypto",
    crypto: "crypto",
    CryptoKey: "crypto",
    SubtleCrypto: "crypto",
    fetch: "network",
    process: "system",
  }),
);

const PRIVILEGED_MODULES: Record<string, string> = P.objectFreeze(
  Object.assign(P.objectCreate(null), {
    vm: "code",
    child_process: "command",
    worker_threads: "command",
    crypto: "crypto",
    fs: "file-system",
    "fs/promises": "file-system",
    net: "network",
    http: "network",
    http2: "network",
    https: "network",
    dns: "network",
    "dns/promises": "network",
    tls: "network",
    dgram: "network",
    os: "system",
    process: "system",
  }),
);

const PRIVILEGED_BINDINGS: Record<string, string> = P.objectFreeze(
  Object.assign(P.objectCreate(null), {
    spawn: "command",
    spawn_sync: "command",
    crypto: "crypto",
  }),
);

const CJS_SYNTHETICS = P.objectFreeze(["require", "module", "exports", "__dirname", "__filename"]);
const POLICY_EXTENSIONS = P.objectFreeze([".js", ".cjs", ".mjs", ".json", ".node"]);

// Real dynamic import, created at load time in the (unrestricted) host
// context. The CommonJS transpilation target would otherwise rewrite
// import() into require(), which cannot load ES modules.
const dynamicImport = new Function("specifier", "return import(specifier);") as (
  specifier: string,
) => Promise<Record<string, unknown>>;

// ---------------------------------------------------------------------------
// One-time host initialization.
// ---------------------------------------------------------------------------

interface HostState {
  captured: Record<string, unknown>;
  copyableGlobals: Array<[string, unknown]>;
  guardDir: string;
  cloneRoot: string;
  manifest: CloneManifest;
  logFd: number;
  realProcess: NodeJS.Process;
  policyCache: Map<string, PolicyDoc>;
  namespaces: Map<string, unknown>;
}

let state: HostState | null = null;

function initHost(): HostState {
  if (state !== null) return state;

  const realProcess = process;
  const captured: Record<string, unknown> = P.objectCreate(null);
  for (const name of P.objectKeys(SENSITIVE_GLOBALS)) {
    const descriptor = P.objectGetOwnPropertyDescriptor(globalThis, name);
    if (descriptor !== undefined) {
      captured[name] = (globalThis as Record<string, unknown>)[name];
      delete (globalThis as Record<string, unknown>)[name];
    }
  }

  // Globals a guest context receives by reference: every host global that is
  // neither sensitive nor a realm intrinsic the fresh context already owns.
  const probe = vm.createContext(P.objectCreate(null));
  const realmOwned = new Set<string>(
    vm.runInContext("Object.getOwnPropertyNames(globalThis)", probe) as string[],
  );
  P.setAdd(realmOwned, "global");
  P.setAdd(realmOwned, "globalThis");
  // V8 installs a per-context console wired to the inspector, not stdio;
  // guests must see the host's console regardless.
  realmOwned.delete("console");
  const copyableGlobals: Array<[string, unknown]> = [];
  for (const name of P.objectGetOwnPropertyNames(globalThis)) {
    if (SENSITIVE_GLOBALS[name] !== undefined) continue;
    if (P.setHas(realmOwned, name)) continue;
    P.arrayPush(copyableGlobals, [name, (globalThis as Record<string, unknown>)[name]]);
  }

  const guardDir = __dirname;
  const cloneRoot = path.resolve(guardDir, "..");
  const manifest = P.jsonParse(
    fs.readFileSync(path.join(guardDir, "manifest.json"), "utf8"),
  ) as CloneManifest;

  let logFd = 2;
  const logPath = realProcess.env.CAPBOM_GUARD_LOG;
  if (typeof logPath === "string" && logPath.length > 0) {
    logFd = fs.openSync(logPath, "a");
  }

  state = {
    captured,
    copyableGlobals,
    guardDir,
    cloneRoot,
    manifest,
    logFd,
    realProcess,
    policyCache: new Map(),
    namespaces: new Map(),
  };
  return state;
}

// Matches the policy-file name encoding used when the clone was written:
// percent-encode every byte outside [A-Za-z0-9@.\-_~].
const isSafeFilenameChar = RegExp.prototype.test.bind(/^[A-Za-z0-9@.\-_~]$/);
const fromCharCode = String.fromCharCode;

function policyFileName(spec: string): string {
  let out = "";
  for (const byte of Buffer.from(spec, "utf8")) {
    const c = fromCharCode(byte);
    if (isSafeFilenameChar(c)) out += c;
    else out += "%" + (byte < 16 ? "0" : "") + byte.toString(16).toUpperCase();
  }
  return out + ".json";
}

export function policyFor(spec: string): PolicyDoc {
  const host = initHost();
  const cached = P.mapGet(host.policyCache, spec) as PolicyDoc | undefined;
  if (cached !== undefined) return cached;
  const file = path.join(host.guardDir, "policies", policyFileName(spec));
  const doc = P.jsonParse(fs.readFileSync(file, "utf8")) as PolicyDoc;
  const frozen = deepFreeze(doc) as PolicyDoc;
  P.mapSet(host.policyCache, spec, frozen);
  return frozen;
}

function deepFreeze(value: unknown): unknown {
  if (value !== null && (typeof value === "object" || typeof value === "function")) {
    for (const key of P.objectGetOwnPropertyNames(value)) {
      deepFreeze((value as Record<string, unknown>)[key]);
    }
    P.objectFreeze(value);
  }
  return value;
}

// ---------------------------------------------------------------------------
// Violations and enforcement modes.
// ---------------------------------------------------------------------------

interface Denial {
  kind: "import" | "global" | "binding" | "codegen";
  subject: string;
  capability?: string;
}

function emitRecord(ctx: GuardedContext, denial: Denial): void {
  const host = initHost();
  const record: Record<string, unknown> = {
    timestamp: P.dateToISOString(new P.DateCtor(P.dateNow())),
    package: ctx.policy.package,
    file: ctx.opts.file,
    kind: denial.kind,
    subject: denial.subject,
    mode: ctx.policy.mode,
  };
  if (denial.capability !== undefined) record.capability = denial.capability;
  fs.writeSync(host.logFd, P.jsonStringify(record) + "\n");
}

function denialError(denial: Denial): Error {
  // Guest-visible message carries kind and subject only.
  return new P.ErrorCtor(`${denial.kind} '${denial.subject}' denied`);
}

function enforce(ctx: GuardedContext, denial: Denial): void {
  const host = initHost();
  emitRecord(ctx, denial);
  if (ctx.policy.mode === "exit") {
    host.realProcess.exit(13);
  }
  if (ctx.policy.mode === "throw") {
    throw denialError(denial);
  }
  // log mode: fall through; the caller withholds the denied value.
}

function deniedStub(denial: Denial): unknown {
  const thrower = () => {
    throw denialError(denial);
  };
  return new Proxy(function stub() {}, {
    get: thrower,
    set: thrower,
    apply: thrower,
    construct: thrower,
    has: thrower,
  });
}

// ---------------------------------------------------------------------------
// Import verdicts (mirrors the compiled policy semantics).
// ---------------------------------------------------------------------------

interface ImportVerdict {
  allow: boolean;
  reason: string;
  matched?: string;
}

function capabilityOfImport(specifier: string): string | undefined {
  if (specifier === "") return undefined;
  if (P.stringEndsWith(specifier, ".node")) return "addon";
  const bare = P.stringStartsWith(specifier, "node:") ? P.stringSlice(specifier, 5) : specifier;
  if (PRIVILEGED_MODULES[bare] !== undefined) return PRIVILEGED_MODULES[bare];
  const slash = P.stringIndexOf(bare, "/");
  if (slash > 0) {
    const head = P.stringSlice(bare, 0, slash);
    if (PRIVILEGED_MODULES[head] !== undefined) return PRIVILEGED_MODULES[head];
  }
  return undefined;
}

function resolveRelative(specifier: string, importerPackageFile: string): string | null {
  const baseParts = P.stringSplit(path.posix.dirname(importerPackageFile), "/");
  const parts: string[] = [];
  for (const part of baseParts) {
    if (part !== "." && part !== "") P.arrayPush(parts, part);
  }
  for (const part of P.stringSplit(specifier, "/")) {
    if (part === "." || part === "") continue;
    if (part === "..") {
      if (parts.length === 0) return null;
      parts.length -= 1;
    } else {
      P.arrayPush(parts, part);
    }
  }
  return P.arrayJoin(parts, "/");
}

function localCandidates(resolved: string): string[] {
  const candidates: string[] = [resolved];
  let hasExt = false;
  for (const ext of POLICY_EXTENSIONS) {
    if (P.stringEndsWith(resolved, ext)) hasExt = true;
  }
  if (!hasExt) {
    for (const ext of [".js", ".cjs", ".mjs", ".json", ".node"]) {
      P.arrayPush(candidates, resolved + ext);
    }
  }
  const prefix = resolved === "" || resolved === "." ? "" : resolved + "/";
  for (const ext of [".js", ".cjs", ".mjs", ".json", ".node"]) {
    P.arrayPush(candidates, prefix + "index" + ext);
  }
  return candidates;
}

function dependencyName(specifier: string): string {
  if (P.stringStartsWith(specifier, "@")) {
    const segments = P.stringSplit(specifier, "/");
    return segments.length >= 2 ? segments[0] + "/" + segments[1] : specifier;
  }
  return P.stringSplit(specifier, "/")[0];
}

function denyReason(policy: PolicyDoc, specifier: string): ImportVerdict {
  const cap = capabilityOfImport(specifier);
  if (cap !== undefined && !P.arrayIncludes(policy.grants, cap)) {
    return { allow: false, reason: "capability-missing" };
  }
  return { allow: false, reason: "not-in-allowlist" };
}

export function checkImport(
  policy: PolicyDoc,
  specifier: string,
  importerPackageFile: string,
): ImportVerdict {
  if (typeof specifier !== "string" || specifier === "") {
    return { allow: false, reason: "not-in-allowlist" };
  }
  const rel =
    P.stringStartsWith(specifier, "./") ||
    P.stringStartsWith(specifier, "../") ||
    specifier === "." ||
    specifier === "..";
  if (rel) {
    const resolved = resolveRelative(specifier, importerPackageFile);
    if (resolved === null) return denyReason(policy, specifier);
    for (const candidate of localCandidates(resolved)) {
      if (P.arrayIncludes(policy.imports.files, candidate)) {
        return { allow: true, reason: "local-file", matched: candidate };
      }
    }
    return denyReason(policy, resolved === "" ? specifier : resolved);
  }
  if (P.stringStartsWith(specifier, "node:")) {
    const bare = P.stringSlice(specifier, 5);
    if (P.arrayIncludes(policy.imports.granted_builtins, bare)) {
      return { allow: true, reason: "granted-builtin", matched: bare };
    }
    if (P.arrayIncludes(policy.imports.builtins, bare)) {
      return { allow: true, reason: "default-builtin", matched: bare };
    }
    return denyReason(policy, specifier);
  }
  if (P.arrayIncludes(policy.imports.granted_builtins, specifier)) {
    return { allow: true, reason: "granted-builtin", matched: specifier };
  }
  if (P.arrayIncludes(policy.imports.builtins, specifier)) {
    return { allow: true, reason: "default-builtin", matched: specifier };
  }
  const depName = dependencyName(specifier);
  if (P.arrayIncludes(policy.imports.packages, depName)) {
    return { allow: true, reason: "sbom-dependency", matched: depName };
  }
  return denyReason(policy, specifier);
}

// ---------------------------------------------------------------------------
// Binding checks and the per-context process facade.
// ---------------------------------------------------------------------------

function checkedBinding(ctx: GuardedContext, name: string): unknown {
  const host = initHost();
  const cap = PRIVILEGED_BINDINGS[name];
  if (cap !== undefined && !P.arrayIncludes(ctx.policy.bindings.granted, name)) {
    enforce(ctx, { kind: "binding", subject: name, capability: cap });
    return deniedStub({ kind: "binding", subject: name, capability: cap });
  }
  const realBinding = (host.realProcess as unknown as { binding?: (n: string) => unknown }).binding;
  if (typeof realBinding !== "function") {
    throw new P.ErrorCtor(`binding '${name}' is unavailable`);
  }
  return P.reflectApply(realBinding, host.realProcess, [name]);
}

function makeProcessFacade(ctx: GuardedContext): NodeJS.Process {
  const host = initHost();
  const facade = P.objectCreate(host.realProcess) as NodeJS.Process;
  P.objectDefineProperty(facade, "binding", {
    value: (name: string) => checkedBinding(ctx, String(name)),
    writable: false,
    configurable: false,
    enumerable: false,
  });
  P.objectDefineProperty(facade, "_linkedBinding", {
    value: (name: string) => checkedBinding(ctx, String(name)),
    writable: false,
    configurable: false,
    enumerable: false,
  });
  P.objectDefineProperty(facade, "dlopen", {
    value: (...args: unknown[]) => {
      if (!P.arrayIncludes(ctx.policy.grants, "addon")) {
        enforce(ctx, { kind: "binding", subject: "dlopen", capability: "addon" });
        return undefined;
      }
      const real = (host.realProcess as unknown as { dlopen: (...a: unknown[]) => unknown }).dlopen;
      return P.reflectApply(real, host.realProcess, args);
    },
    writable: false,
    configurable: false,
    enumerable: false,
  });
  // The launcher's module graph must stay out of guest reach.
  P.objectDefineProperty(facade, "mainModule", {
    value: undefined,
    writable: false,
    configurable: false,
    enumerable: false,
  });
  return facade;
}

// ---------------------------------------------------------------------------
// Module loading on behalf of guests.
// ---------------------------------------------------------------------------

function outlinedPathFor(ctx: GuardedContext, specifier: string): string {
  // Resolution happens against the clone tree, so an allowed import lands on
  // the guarded version of the target file.
  const resolver = createRequire(path.join(ctx.outlinedDir, "__resolve__.cjs"));
  return resolver.resolve(specifier);
}

function moduleKindOf(host: HostState, absolutePath: string): UnitKind | "json" | "addon" {
  if (P.stringEndsWith(absolutePath, ".mjs")) return "esm";
  if (P.stringEndsWith(absolutePath, ".cjs")) return "cjs";
  if (P.stringEndsWith(absolutePath, ".json")) return "json";
  if (P.stringEndsWith(absolutePath, ".node")) return "addon";
  let dir = path.dirname(absolutePath);
  while (true) {
    const manifestPath = path.join(dir, "package.json");
    if (fs.existsSync(manifestPath)) {
      try {
        const doc = P.jsonParse(fs.readFileSync(manifestPath, "utf8")) as { type?: string };
        return doc.type === "module" ? "esm" : "cjs";
      } catch {
        return "cjs";
      }
    }
    if (dir === host.cloneRoot || dir === path.dirname(dir)) return "cjs";
    dir = path.dirname(dir);
  }
}

function patchedModuleBuiltin(ctx: GuardedContext): Record<string, unknown> {
  const host = initHost();
  const real = require("module") as Record<string, unknown>;
  const patched = P.objectCreate(null) as Record<string, unknown>;
  for (const key of P.objectGetOwnPropertyNames(real)) {
    patched[key] = real[key];
  }
  patched.createRequire = (from: string | URL) => {
    let anchor = typeof from === "string" ? from : fileURLToPath(from as URL);
    // Guests know original paths; map them back into the clone tree.
    if (P.stringStartsWith(anchor, host.manifest.working_directory)) {
      anchor = path.join(
        host.cloneRoot,
        P.stringSlice(anchor, host.manifest.working_directory.length),
      );
    }
    const packageFile = path.posix.join(
      path.posix.dirname(ctx.opts.packageFile),
      "__createRequire__.js",
    );
    return makeGuardedRequire(ctx, path.dirname(anchor), packageFile);
  };
  patched.Module = undefined;
  patched._load = undefined;
  patched._cache = P.objectCreate(null);
  return P.objectFreeze(patched) as Record<string, unknown>;
}

function loadBuiltin(ctx: GuardedContext, bare: string): unknown {
  if (bare === "module") return patchedModuleBuiltin(ctx);
  if (bare === "process") return makeProcessFacade(ctx);
  return require("node:" + bare);
}

function noteResolutionMismatch(ctx: GuardedContext, verdict: ImportVerdict, target: string): void {
  // Allowed dependency imports should land inside a recorded root of the
  // declared package; anything else is surfaced as a diagnostic, not guessed.
  if (verdict.reason !== "sbom-dependency") return;
  const host = initHost();
  const relative = path.relative(host.cloneRoot, target).split(path.sep).join("/");
  const name = verdict.matched as string;
  for (const [spec, entry] of Object.entries(host.manifest.packages)) {
    if (P.stringSlice(spec, 0, spec.lastIndexOf("@")) !== name) continue;
    for (const root of entry.roots) {
      if (relative === root || P.stringStartsWith(relative, root + "/")) return;
    }
  }
  fs.writeSync(
    2,
    `guard: diagnostic: import of '${name}' from ${ctx.policy.package} resolved ` +
      `outside its recorded roots (${relative})\n`,
  );
}

function loadAllowed(ctx: GuardedContext, specifier: string, verdict: ImportVerdict): unknown {
  if (verdict.reason === "granted-builtin" || verdict.reason === "default-builtin") {
    return loadBuiltin(ctx, verdict.matched as string);
  }
  const host = initHost();
  const target = outlinedPathFor(ctx, specifier);
  noteResolutionMismatch(ctx, verdict, target);
  const kind = moduleKindOf(host, target);
  if (kind === "esm") {
    const err = new P.ErrorCtor(
      `require() of ES Module ${target} is not supported; use import instead`,
    ) as Error & { code: string };
    err.code = "ERR_REQUIRE_ESM";
    throw err;
  }
  const loader = createRequire(path.join(ctx.outlinedDir, "__load__.cjs"));
  return loader(target);
}

function makeGuardedRequire(
  ctx: GuardedContext,
  anchorDir: string,
  packageFile: string,
): NodeRequire {
  const guarded = ((specifier: string) => {
    const spec = String(specifier);
    const verdict = checkImport(ctx.policy, spec, packageFile);
    if (!verdict.allow) {
      const denial: Denial = {
        kind: "import",
        subject: spec,
        capability: verdict.reason === "capability-missing" ? capabilityOfImport(spec) : undefined,
      };
      enforce(ctx, denial);
      return deniedStub(denial);
    }
    const anchored: GuardedContext = { ...ctx, outlinedDir: anchorDir };
    return loadAllowed(anchored, spec, verdict);
  }) as NodeRequire;

  (guarded as unknown as Record<string, unknown>).resolve = (specifier: string) => {
    const spec = String(specifier);
    const verdict = checkImport(ctx.policy, spec, packageFile);
    if (!verdict.allow) {
      const denial: Denial = {
        kind: "import",
        subject: spec,
        capability: verdict.reason === "capability-missing" ? capabilityOfImport(spec) : undefined,
      };
      enforce(ctx, denial);
      // log mode continues; hand back the specifier, never a real path.
      return spec;
    }
    if (verdict.reason === "granted-builtin" || verdict.reason === "default-builtin") {
      return spec;
    }
    const resolver = createRequire(path.join(anchorDir, "__resolve__.cjs"));
    return resolver.resolve(spec);
  };
  // The visible module cache is always empty.
  P.objectDefineProperty(guarded, "cache", {
    get: () => P.objectCreate(null),
    configurable: false,
    enumerable: true,
  });
  (guarded as unknown as Record<string, unknown>).main = undefined;
  (guarded as unknown as Record<string, unknown>).extensions = undefined;
  return guarded;
}

// ---------------------------------------------------------------------------
// Context construction.
// ---------------------------------------------------------------------------

function installOneTime(
  sandbox: Record<string, unknown>,
  alias: string,
  valueFor: () => unknown,
): void {
  P.objectDefineProperty(sandbox, alias, {
    configurable: true,
    enumerable: false,
    get() {
      delete sandbox[alias];
      return valueFor();
    },
  });
}

function installTrap(ctx: GuardedContext, name: string, denial: Denial): void {
  P.objectDefineProperty(ctx.sandbox, name, {
    configurable: true,
    enumerable: false,
    get() {
      enforce(ctx, denial);
      return undefined;
    },
    set(value: unknown) {
      // Benign polyfill pattern: a guest may install its own value.
      P.objectDefineProperty(ctx.sandbox, name, {
        value,
        writable: true,
        configurable: true,
        enumerable: true,
      });
    },
  });
}

export function createContext(policy: PolicyDoc, opts: ContextOptions): GuardedContext {
  const host = initHost();
  if (!policy || typeof policy.package !== "string") {
    throw new P.ErrorCtor("refusing to evaluate without a policy");
  }

  const sandbox = P.objectCreate(null) as Record<string, unknown>;
  for (const [name, value] of host.copyableGlobals) {
    sandbox[name] = value;
  }

  const outlinedDir =
    opts.kind === "cjs" && opts.host
      ? opts.host.dirname
      : path.dirname(fileURLToPath(opts.url as string));

  const ctx: GuardedContext = {
    policy,
    opts,
    sandbox,
    context: sandbox as unknown as vm.Context,
    outlinedDir,
  };

  const originalAbs = path.join(host.manifest.working_directory, opts.file);
  const aliases = opts.aliases ?? {};

  if (opts.kind === "cjs") {
    if (!opts.host) throw new P.ErrorCtor("cjs unit without host bindings");
    const guestModule = {
      exports: opts.host.module.exports as unknown,
      id: originalAbs,
      filename: originalAbs,
      path: path.dirname(originalAbs),
      loaded: false,
      children: [],
      paths: [],
    };
    ctx.guestModule = guestModule as unknown as { exports: unknown };
    const guardedRequire = makeGuardedRequire(ctx, opts.host.dirname, opts.packageFile);
    (guestModule as unknown as Record<string, unknown>).require = guardedRequire;
    const synthetic: Record<string, () => unknown> = {
      require: () => guardedRequire,
      module: () => guestModule,
      exports: () => guestModule.exports,
      __dirname: () => path.dirname(originalAbs),
      __filename: () => originalAbs,
    };
    for (const name of CJS_SYNTHETICS) {
      const alias = aliases[name];
      if (alias !== undefined) installOneTime(sandbox, alias, synthetic[name]);
    }
  }

  // Granted sensitive globals travel through self-deleting one-time names;
  // ungranted ones become recording traps that withhold the value.
  for (const name of P.objectKeys(SENSITIVE_GLOBALS)) {
    const capability = SENSITIVE_GLOBALS[name];
    const granted = P.arrayIncludes(policy.globals.granted, name);
    const alias = aliases[name];
    if (granted && alias !== undefined) {
      if (name === "process") {
        installOneTime(sandbox, alias, () => makeProcessFacade(ctx));
      } else {
        installOneTime(sandbox, alias, () => host.captured[name]);
      }
      continue;
    }
    if (granted) continue; // realm-provided (eval/Function) or no delivery needed
    if (name === "eval" || name === "Function") {
      // codeGeneration already blocks use; shadow with a recorder so throw and
      // exit modes surface the denial. Log mode stays silent by design: the
      // immediate engine error cannot be continued past, so the capability is
      // not inferable from logs.
      if (policy.mode !== "log" && !policy.codegen) {
        installTrap(ctx, name, { kind: "codegen", subject: name, capability });
      }
      continue;
    }
    installTrap(ctx, name, { kind: "global", subject: name, capability });
  }

  vm.createContext(sandbox, {
    codeGeneration: { strings: policy.codegen, wasm: policy.codegen },
  });
  vm.runInContext("globalThis.global = globalThis;", sandbox as unknown as vm.Context);
  ctx.context = sandbox as unknown as vm.Context;
  return ctx;
}

// ---------------------------------------------------------------------------
// Guest evaluation.
// ---------------------------------------------------------------------------

const USE_STRICT_RE = /^[ \t\r\n]*(["'])use strict\1[ \t]*;?/;

function composeGuestText(kind: UnitKind, open: string, source: string, close: string): string {
  let body = source;
  if (P.stringStartsWith(body, "#!")) {
    // Neutralize in place: same character count keeps line numbers stable.
    body = "//" + P.stringSlice(body, 2);
  }
  let prefix = "";
  if (kind === "cjs" && USE_STRICT_RE.test(body)) {
    prefix = '"use strict";';
  }
  return prefix + open + body + close;
}

async function moduleLinker(
  ctx: GuardedContext,
  specifier: string,
): Promise<vm.Module> {
  const host = initHost();
  const spec = String(specifier);
  const verdict = checkImport(ctx.policy, spec, ctx.opts.packageFile);
  if (!verdict.allow) {
    const denial: Denial = {
      kind: "import",
      subject: spec,
      capability: verdict.reason === "capability-missing" ? capabilityOfImport(spec) : undefined,
    };
    enforce(ctx, denial);
    return syntheticFacade(ctx, spec, { default: deniedStub(denial) });
  }

  if (verdict.reason === "granted-builtin" || verdict.reason === "default-builtin") {
    const bare = verdict.matched as string;
    if (bare === "module" || bare === "process") {
      const patched = loadBuiltin(ctx, bare) as Record<string, unknown>;
      return syntheticFacade(ctx, spec, { default: patched, ...namedExportsOf(patched) });
    }
    const ns = await dynamicImport("node:" + bare);
    return syntheticFacade(ctx, spec, ns);
  }

  const target = outlinedPathFor(ctx, spec);
  noteResolutionMismatch(ctx, verdict, target);
  const kind = moduleKindOf(host, target);
  if (kind === "json") {
    const parsed = P.jsonParse(fs.readFileSync(target, "utf8"));
    return syntheticFacade(ctx, spec, { default: parsed });
  }
  if (kind === "esm") {
    const url = pathToFileURL(target).href;
    await dynamicImport(url); // executes the outlined unit, which registers itself
    const ns = P.mapGet(host.namespaces, url) as Record<string, unknown> | undefined;
    if (ns === undefined) {
      throw new P.ErrorCtor(`module ${spec} did not register a guarded namespace`);
    }
    return syntheticFacade(ctx, spec, ns);
  }
  const loader = createRequire(path.join(ctx.outlinedDir, "__load__.cjs"));
  const exportsValue = loader(target) as Record<string, unknown>;
  return syntheticFacade(ctx, spec, { default: exportsValue, ...namedExportsOf(exportsValue) });
}

function namedExportsOf(exportsValue: unknown): Record<string, unknown> {
  const named: Record<string, unknown> = {};
  if (exportsValue !== null && (typeof exportsValue === "object" || typeof exportsValue === "function")) {
    for (const key of P.objectKeys(exportsValue as object)) {
      if (key !== "default") named[key] = (exportsValue as Record<string, unknown>)[key];
    }
  }
  return named;
}

function syntheticFacade(
  ctx: GuardedContext,
  identifier: string,
  entries: Record<string, unknown>,
): vm.Module {
  const keys = P.objectKeys(entries);
  const facade = new vm.SyntheticModule(
    keys,
    function (this: vm.SyntheticModule) {
      for (const key of keys) {
        this.setExport(key, entries[key]);
      }
    },
    { context: ctx.context, identifier: `guarded:${identifier}` },
  );
  return facade;
}

export function evaluate(
  ctx: GuardedContext,
  open: string,
  source: string,
  close: string,
): unknown {
  if (ctx.opts.kind === "cjs") {
    return evaluateCjs(ctx, open, source, close);
  }
  return evaluateEsm(ctx, open, source, close);
}

function evaluateCjs(ctx: GuardedContext, open: string, source: string, close: string): unknown {
  const host = initHost();
  const text = composeGuestText("cjs", open, source, close);
  const script = new vm.Script(text, {
    filename: path.join(host.manifest.working_directory, ctx.opts.file),
    importModuleDynamically: (async (specifier: string) => {
      const facade = await moduleLinker(ctx, specifier);
      await facade.link(async () => {
        throw new P.ErrorCtor("unexpected nested link");
      });
      await facade.evaluate();
      return facade;
    }) as never,
  });
  script.runInContext(ctx.context, { displayErrors: true });
  if (ctx.guestModule && ctx.opts.host) {
    ctx.opts.host.module.exports = ctx.guestModule.exports;
  }
  return ctx.guestModule ? ctx.guestModule.exports : undefined;
}

async function evaluateEsm(
  ctx: GuardedContext,
  open: string,
  source: string,
  close: string,
): Promise<unknown> {
  const host = initHost();
  const SourceTextModule = (vm as unknown as { SourceTextModule?: new (...args: unknown[]) => vm.Module })
    .SourceTextModule;
  if (SourceTextModule === undefined) {
    throw new P.ErrorCtor(
      "ES module units need the vm-modules flag; run the clone through its launcher",
    );
  }
  const text = composeGuestText("esm", open, source, close);
  const originalAbs = path.join(host.manifest.working_directory, ctx.opts.file);
  const module = new SourceTextModule(text, {
    context: ctx.context,
    identifier: originalAbs,
    initializeImportMeta: (meta: { url: string }) => {
      meta.url = pathToFileURL(originalAbs).href;
    },
    importModuleDynamically: (async (specifier: string) => {
      const facade = await moduleLinker(ctx, specifier);
      await facade.link(async () => {
        throw new P.ErrorCtor("unexpected nested link");
      });
      await facade.evaluate();
      return facade;
    }) as never,
  }) as vm.Module & { namespace: unknown };
  await module.link((specifier: string) => moduleLinker(ctx, specifier));
  await module.evaluate();
  if (typeof ctx.opts.url === "string") {
    P.mapSet(host.namespaces, ctx.opts.url, module.namespace);
  }
  return module.namespace;
}

// Exposed for the launcher and for tests.
export function hostState(): {
  cloneRoot: string;
  manifest: CloneManifest;
  captured: Record<string, unknown>;
} {
  const host = initHost();
  return { cloneRoot: host.cloneRoot, manifest: host.manifest, captured: host.captured };
}

initHost();
P.objectFreeze(module.exports);
