"""Rewrite a project into its guarded clone.

Every JavaScript source file is replaced by an outlined unit: a generated
module that loads the emitted guard runtime, references its package's policy,
installs the one-time preamble bindings, builds the evaluation context, and
evaluates the byte-identical original source from an escaped string literal.
JSON files and native addons are copied verbatim; everything else stays in
the original tree and is reached through the launcher's working directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from urllib.parse import quote

from .capabilities import CapabilityMap, bundled_map
from .cbom import CbomDocument
from .inference import SourceUnit, read_unit
from .js_lexer import Token, tokenize
from .policy import ModulePolicy, compile_policy, globals_for
from .resolve import PackageLayout, resolve_layout
from .sbom import DependencyGraph, PackageId

GUARD_DIRNAME = "_guard"
SKIP_REASON_NON_CODE = "non-code, resolved via working directory"

_RUNTIME_ASSETS = ("guard.cjs", "guard.mjs", "launch.cjs")


class OutlineError(ValueError):
    """Raised when a project cannot be outlined."""


# ---------------------------------------------------------------------------
# Top-level name scanning (ESM preamble omission)
# ---------------------------------------------------------------------------

_OPERAND_KEYWORDS = frozenset({
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void",
    "throw", "case", "yield", "await", "extends",
})
_STATEMENT_KEYWORDS = frozenset({
    "var", "let", "const", "function", "class", "import", "export", "if",
    "for", "while", "do", "switch", "try", "return", "throw",
})
_OPENERS = {"{", "(", "[", "${"}
_CLOSERS = {"}": ("{", "${"), ")": ("(",), "]": ("[",)}


def _statement_position(prev: Token | None) -> bool:
    if prev is None:
        return True
    if prev.kind == "punct":
        return prev.value in (";", "}")
    if prev.kind == "ident":
        return prev.value not in _OPERAND_KEYWORDS
    if prev.kind in ("string", "num", "template", "regex"):
        return True
    return False


class _TopLevelScan:
    """Token walker collecting module-scope declared names."""

    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.names: set[str] = set()

    def token(self, index: int) -> Token | None:
        return self.tokens[index] if 0 <= index < len(self.tokens) else None

    def run(self) -> frozenset[str]:
        depth: list[str] = []
        i = 0
        while i < len(self.tokens):
            tok = self.tokens[i]
            if tok.kind == "punct":
                if tok.value in _OPENERS:
                    depth.append(tok.value)
                elif tok.value in _CLOSERS:
                    if depth and depth[-1] in _CLOSERS[tok.value]:
                        depth.pop()
                i += 1
                continue
            if depth or tok.kind != "ident":
                i += 1
                continue
            prev = self.token(i - 1)
            if tok.value in ("var", "let", "const") and _statement_position(prev):
                i = self._declarations(i + 1)
            elif tok.value == "function" and self._function_statement(i):
                i = self._function_name(i + 1)
            elif tok.value == "class" and _statement_position(prev):
                i = self._class_name(i + 1)
            elif tok.value == "import" and _statement_position(prev):
                i = self._import_clause(i + 1)
            else:
                i += 1
        return frozenset(self.names)

    def _function_statement(self, index: int) -> bool:
        prev = self.token(index - 1)
        if prev is not None and prev.kind == "ident" and prev.value == "async":
            prev = self.token(index - 2)
        return _statement_position(prev)

    def _function_name(self, index: int) -> int:
        tok = self.token(index)
        if tok is not None and tok.kind == "punct" and tok.value == "*":
            index += 1
            tok = self.token(index)
        if tok is not None and tok.kind == "ident":
            self.names.add(tok.value)
            return index + 1
        return index

    def _class_name(self, index: int) -> int:
        tok = self.token(index)
        if tok is not None and tok.kind == "ident" and tok.value != "extends":
            self.names.add(tok.value)
            return index + 1
        return index

    # -- variable declarator lists ------------------------------------------

    def _declarations(self, index: int) -> int:
        while True:
            index = self._binding(index)
            tok = self.token(index)
            if tok is not None and tok.kind == "punct" and tok.value == "=":
                index = self._skip_expression(index + 1, stop=(",", ";"))
                tok = self.token(index)
            if tok is None:
                return index
            if tok.kind == "punct" and tok.value == ",":
                index += 1
                continue
            if tok.kind == "punct" and tok.value == ";":
                return index + 1
            return index  # ASI boundary; caller re-dispatches this token

    def _binding(self, index: int) -> int:
        tok = self.token(index)
        if tok is None:
            return index
        if tok.kind == "ident":
            self.names.add(tok.value)
            return index + 1
        if tok.kind == "punct" and tok.value == "{":
            return self._object_pattern(index + 1)
        if tok.kind == "punct" and tok.value == "[":
            return self._array_pattern(index + 1)
        return index + 1

    def _object_pattern(self, index: int) -> int:
        while True:
            tok = self.token(index)
            if tok is None:
                return index
            if tok.kind == "punct" and tok.value == "}":
                return index + 1
            if tok.kind == "punct" and tok.value == ",":
                index += 1
                continue
            if tok.kind == "punct" and tok.value == "...":
                index = self._binding(index + 1)
                continue
            if tok.kind == "punct" and tok.value == "[":
                index = self._skip_balanced(index)
                index = self._expect_colon_target(index)
                continue
            if tok.kind in ("ident", "string", "num"):
                after = self.token(index + 1)
                if after is not None and after.kind == "punct" and after.value == ":":
                    index = self._binding(index + 2)
                else:
                    if tok.kind == "ident":
                        self.names.add(tok.value)
                    index += 1
                nxt = self.token(index)
                if nxt is not None and nxt.kind == "punct" and nxt.value == "=":
                    index = self._skip_expression(index + 1, stop=(",", "}"))
                continue
            index += 1

    def _expect_colon_target(self, index: int) -> int:
        tok = self.token(index)
        if tok is not None and tok.kind == "punct" and tok.value == ":":
            index = self._binding(index + 1)
            nxt = self.token(index)
            if nxt is not None and nxt.kind == "punct" and nxt.value == "=":
                index = self._skip_expression(index + 1, stop=(",", "}"))
        return index

    def _array_pattern(self, index: int) -> int:
        while True:
            tok = self.token(index)
            if tok is None:
                return index
            if tok.kind == "punct" and tok.value == "]":
                return index + 1
            if tok.kind == "punct" and tok.value == ",":
                index += 1
                continue
            if tok.kind == "punct" and tok.value == "...":
                index = self._binding(index + 1)
                continue
            index = self._binding(index)
            nxt = self.token(index)
            if nxt is not None and nxt.kind == "punct" and nxt.value == "=":
                index = self._skip_expression(index + 1, stop=(",", "]"))

    def _skip_balanced(self, index: int) -> int:
        """Skip a bracketed region starting at tokens[index] (an opener)."""
        stack = [self.tokens[index].value]
        index += 1
        while index < len(self.tokens) and stack:
            tok = self.tokens[index]
            if tok.kind == "punct":
                if tok.value in _OPENERS:
                    stack.append(tok.value)
                elif tok.value in _CLOSERS and stack and stack[-1] in _CLOSERS[tok.value]:
                    stack.pop()
            index += 1
        return index

    def _skip_expression(self, index: int, stop: tuple[str, ...]) -> int:
        """Consume an expression until a stop punct or an ASI boundary at depth 0."""
        depth: list[str] = []
        while index < len(self.tokens):
            tok = self.tokens[index]
            if tok.kind == "punct":
                if tok.value in _OPENERS:
                    depth.append(tok.value)
                elif tok.value in _CLOSERS:
                    if depth and depth[-1] in _CLOSERS[tok.value]:
                        depth.pop()
                    elif not depth:
                        return index  # closes an enclosing pattern
                elif not depth and tok.value in stop:
                    return index
                elif not depth and tok.value == ";":
                    return index
                index += 1
                continue
            if (
                not depth
                and tok.kind == "ident"
                and tok.value in _STATEMENT_KEYWORDS
                and _statement_position(self.token(index - 1))
                and index > 0
            ):
                return index  # ASI: a new statement begins here
            index += 1
        return index

    # -- import clauses ------------------------------------------------------

    def _import_clause(self, index: int) -> int:
        tok = self.token(index)
        if tok is None:
            return index
        if tok.kind == "punct" and tok.value in ("(", "."):
            return index  # dynamic import() or import.meta: an expression
        if tok.kind == "string":
            return index + 1  # side-effect import
        while True:
            tok = self.token(index)
            if tok is None:
                return index
            if tok.kind == "ident" and tok.value == "from":
                return index + 2  # from "specifier"
            if tok.kind == "ident" and tok.value != "as":
                nxt = self.token(index + 1)
                if nxt is not None and nxt.kind == "ident" and nxt.value == "as":
                    index += 1
                    continue
                self.names.add(tok.value)
                index += 1
                continue
            if tok.kind == "ident" and tok.value == "as":
                target = self.token(index + 1)
                if target is not None and target.kind == "ident":
                    self.names.add(target.value)
                index += 2
                continue
            if tok.kind == "punct" and tok.value == "*":
                index += 1
                continue
            if tok.kind == "punct" and tok.value in ("{", "}", ","):
                index += 1
                continue
            if tok.kind == "string":
                index += 1
                continue
            index += 1


def scan_top_level_names(esm_source: str) -> frozenset[str]:
    """Names introduced at module top level by declarations and import bindings.

    Nested scopes are excluded. Raises js_lexer.LexError (with line/column)
    when the source cannot be tokenized.
    """
    return _TopLevelScan(tokenize(esm_source)).run()


# ---------------------------------------------------------------------------
# Preamble generation
# ---------------------------------------------------------------------------


class PreambleError(ValueError):
    """Raised when no collision-free one-time suffix can be derived."""


_MAX_SUFFIX_ATTEMPTS = 16


def derive_suffix(unit_digest: str, unit_text: str) -> str:
    """A deterministic 6-hex suffix for one-time aliases, collision-checked.

    Any occurrence of "$<suffix>" in the unit text forces re-derivation, so
    no alias can collide with an identifier already present.
    """
    for attempt in range(_MAX_SUFFIX_ATTEMPTS):
        seed = unit_digest if attempt == 0 else f"{unit_digest}:{attempt}"
        suffix = hashlib.sha256(seed.encode("utf-8")).hexdigest()[:6]
        if f"${suffix}" not in unit_text:
            return suffix
    raise PreambleError(
        f"could not derive a collision-free suffix after {_MAX_SUFFIX_ATTEMPTS} attempts"
    )


def generate_preamble(
    kind: str,
    sensitive_globals: list[str],
    top_level_names: frozenset[str],
    unit_digest: str,
    unit_text: str = "",
) -> tuple[str, dict[str, str]]:
    """Emit the one-time binding preamble for a unit.

    ESM units get a single top-level let statement, omitting names the module
    already declares (imports and exports must stay at the top level, so no
    wrapper is possible). CJS units are wrapped in two block statements with
    the bindings on the outer block, which tolerates re-declared identifiers.
    Returns the opening preamble text and the name -> alias map.
    """
    suffix = derive_suffix(unit_digest, unit_text)
    if kind == "esm":
        bound = [g for g in sensitive_globals if g not in top_level_names]
    elif kind == "cjs":
        bound = list(sensitive_globals)
    else:
        raise PreambleError(f"preambles apply to cjs/esm units, not {kind!r}")
    aliases = {name: f"{name}${suffix}" for name in bound}
    if len(set(aliases.values())) != len(aliases):
        raise PreambleError("alias collision within unit")

    bindings = ", ".join(f"{name} = {alias}" for name, alias in aliases.items())
    if kind == "esm":
        preamble = f"let {bindings};\n" if bindings else ""
    else:
        preamble = f"{{ let {bindings};\n{{\n" if bindings else "{\n{\n"
    return preamble, aliases


CJS_PREAMBLE_CLOSE = "\n}\n}"


# ---------------------------------------------------------------------------
# Clone planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutlinedUnit:
    original_path: str
    output_path: str
    kind: str
    preamble_text: str
    embedded_source: str
    one_time_names: dict[str, str]
    policy_ref: str
    output_text: str = field(repr=False, default="")


@dataclass
class CloneManifest:
    working_directory: str
    copied: list[tuple[str, str]] = field(default_factory=list)
    outlined: list[OutlinedUnit] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    scheduled: list[str] = field(default_factory=list)


def clone_project(root: Path) -> CloneManifest:
    """Classify every file under root: outline, copy, or skip."""
    root = Path(root).resolve()
    if not root.is_dir():
        raise OutlineError(f"project root {root} is not a directory")
    if (root / GUARD_DIRNAME).exists():
        raise OutlineError(
            f"destination collision: project already contains a {GUARD_DIRNAME!r} entry"
        )
    manifest = CloneManifest(working_directory=str(root))
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = Path(dirpath) / name
            relative = full.relative_to(root).as_posix()
            if not os.access(full, os.R_OK):
                raise OutlineError(f"unreadable file: {relative}")
            suffix = PurePosixPath(relative).suffix
            if suffix in (".js", ".cjs", ".mjs"):
                manifest.scheduled.append(relative)
            elif suffix in (".json", ".node"):
                manifest.copied.append((relative, relative))
            else:
                manifest.skipped.append((relative, SKIP_REASON_NON_CODE))
    return manifest


# ---------------------------------------------------------------------------
# Outlined unit assembly
# ---------------------------------------------------------------------------

_USE_STRICT_RE = re.compile(r"""^[ \t\r\n]*(["'])use strict\1[ \t]*;?""")


def _js_string(value: str) -> str:
    return json.dumps(value, ensure_ascii=True)


def _split_headers(text: str) -> tuple[str, bool]:
    """(shebang line or "", has use-strict directive) for the unit's start."""
    shebang = ""
    rest = text
    if text.startswith("#!"):
        newline = text.find("\n")
        shebang = text if newline < 0 else text[:newline]
        rest = "" if newline < 0 else text[newline + 1:]
    return shebang, bool(_USE_STRICT_RE.match(rest))


def _guard_relpath(unit_relative: str, asset: str) -> str:
    depth = len(PurePosixPath(unit_relative).parent.parts)
    prefix = "../" * depth if depth else "./"
    return f"{prefix}{GUARD_DIRNAME}/{asset}"


def policy_filename(pkg: PackageId) -> str:
    return quote(pkg.spec, safe="@.-_~") + ".json"


def outline_file(
    unit: SourceUnit,
    policy: ModulePolicy,
    package_relative: str,
    capability_map: CapabilityMap | None = None,
) -> OutlinedUnit:
    """Rewrite one source unit into its outlined form."""
    if unit.kind not in ("cjs", "esm"):
        raise OutlineError(f"{unit.path}: only cjs/esm units are outlined")
    cmap = capability_map or bundled_map()
    digest = hashlib.sha256(
        unit.path.encode("utf-8") + b"\n" + unit.text.encode("utf-8")
    ).hexdigest()

    # eval and Function are realm intrinsics: the evaluation context supplies
    # them natively when code generation is granted, and strict-mode guest
    # code cannot legally re-bind "eval" anyway. Everything else sensitive is
    # host-delivered through a one-time alias.
    sensitive = [
        name for name, provenance in globals_for(policy, unit.kind, cmap)
        if provenance in ("granted", "cjs-synthetic") and name not in ("eval", "Function")
    ]
    top_names = scan_top_level_names(unit.text) if unit.kind == "esm" else frozenset()
    preamble, aliases = generate_preamble(
        unit.kind, sensitive, top_names, digest, unit.text
    )
    close = CJS_PREAMBLE_CLOSE if unit.kind == "cjs" else ""
    suffix = next(iter(aliases.values())).rsplit("$", 1)[1] if aliases else derive_suffix(digest, unit.text)

    shebang, use_strict = _split_headers(unit.text)
    headers = ""
    if shebang:
        headers += shebang + "\n"
    if use_strict:
        headers += '"use strict";\n'

    ref = "$" + suffix
    alias_doc = json.dumps(dict(sorted(aliases.items())), ensure_ascii=True, sort_keys=True)
    policy_id = _js_string(policy.package.spec)
    file_js = _js_string(unit.path)
    pkg_file_js = _js_string(package_relative)

    if unit.kind == "cjs":
        guard_path = _js_string(_guard_relpath(unit.path, "guard.cjs"))
        text = (
            f"{headers}"
            f"const __rt{ref} = require({guard_path});\n"
            f"const __policy{ref} = __rt{ref}.policyFor({policy_id});\n"
            f"const __ctx{ref} = __rt{ref}.createContext(__policy{ref}, {{\n"
            f'  kind: "cjs",\n'
            f"  file: {file_js},\n"
            f"  packageFile: {pkg_file_js},\n"
            f"  aliases: {alias_doc},\n"
            f"  host: {{ require: require, module: module, filename: __filename, dirname: __dirname }},\n"
            f"}});\n"
            f"__rt{ref}.evaluate(__ctx{ref}, {_js_string(preamble)},\n"
            f"{_js_string(unit.text)},\n"
            f"{_js_string(close)});\n"
        )
    else:
        guard_path = _js_string(_guard_relpath(unit.path, "guard.mjs"))
        text = (
            f"{headers}"
            f"import * as __rt{ref} from {guard_path};\n"
            f"const __policy{ref} = __rt{ref}.policyFor({policy_id});\n"
            f"const __ctx{ref} = __rt{ref}.createContext(__policy{ref}, {{\n"
            f'  kind: "esm",\n'
            f"  file: {file_js},\n"
            f"  packageFile: {pkg_file_js},\n"
            f"  aliases: {alias_doc},\n"
            f"  url: import.meta.url,\n"
            f"}});\n"
            f"await __rt{ref}.evaluate(__ctx{ref}, {_js_string(preamble)},\n"
            f"{_js_string(unit.text)},\n"
            f"{_js_string(close)});\n"
        )

    return OutlinedUnit(
        original_path=unit.path,
        output_path=unit.path,
        kind=unit.kind,
        preamble_text=preamble,
        embedded_source=unit.text,
        one_time_names=aliases,
        policy_ref=policy.package.spec,
        output_text=text,
    )


def extract_embedded_source(outlined_text: str) -> str:
    """Recover the original source bytes from an outlined unit's text."""
    lines = outlined_text.split("\n")
    for index, line in enumerate(lines):
        if ".evaluate(" in line:
            literal = lines[index + 1]
            if literal.endswith(","):
                literal = literal[:-1]
            return json.loads(literal)
    raise OutlineError("no evaluation call found in outlined text")


# ---------------------------------------------------------------------------
# Full clone pipeline
# ---------------------------------------------------------------------------


def runtime_assets_dir() -> Path:
    return Path(__file__).parent / "runtime_assets"


@dataclass
class CloneResult:
    manifest: CloneManifest
    policies: dict[PackageId, ModulePolicy]
    out_dir: Path
    entry: str
    mode: str


def _project_entry(root: Path, override: str | None) -> str:
    if override:
        return PurePosixPath(override).as_posix()
    manifest_path = root / "package.json"
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        main = doc.get("main") or "index.js"
    except (OSError, json.JSONDecodeError):
        main = "index.js"
    main = PurePosixPath(main).as_posix()
    if not main.endswith((".js", ".cjs", ".mjs")):
        for ext in (".js", ".cjs", ".mjs"):
            if (root / (main + ext)).is_file():
                return main + ext
        for ext in (".js", ".cjs", ".mjs"):
            if (root / main / ("index" + ext)).is_file():
                return (PurePosixPath(main) / ("index" + ext)).as_posix()
    return main


def write_clone(
    root: Path,
    out_dir: Path,
    graph: DependencyGraph,
    cbom: CbomDocument,
    mode: str = "exit",
    entry: str | None = None,
    capability_map: CapabilityMap | None = None,
) -> CloneResult:
    """Produce the guarded clone of root at out_dir."""
    cmap = capability_map or bundled_map()
    root = Path(root).resolve()
    out = Path(out_dir).resolve()
    if root == out or root in out.parents or out in root.parents:
        raise OutlineError("output directory must not overlap the project root")

    layout = resolve_layout(root, graph)
    manifest = clone_project(root)
    entry_rel = _project_entry(root, entry)

    policies: dict[PackageId, ModulePolicy] = {}
    package_files: dict[PackageId, list[str]] = {}
    for pkg in sorted(graph.nodes):
        files = [layout.package_relative(pkg, rel) for rel, _ in layout.files_of(pkg)]
        package_files[pkg] = files
        policies[pkg] = compile_policy(pkg, graph, cbom, files, mode, cmap)

    out.mkdir(parents=True, exist_ok=True)
    if any(out.iterdir()):
        raise OutlineError(f"output directory {out} is not empty")

    try:
        for src_rel, dst_rel in manifest.copied:
            target = out / dst_rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(root / src_rel, target)

        for relative in manifest.scheduled:
            kind = layout.module_kind(relative)
            owner = layout.owner_of(relative)
            unit = read_unit(root, relative, kind)
            outlined = outline_file(
                unit, policies[owner], layout.package_relative(owner, relative), cmap
            )
            target = out / outlined.output_path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(outlined.output_text, encoding="utf-8")
            manifest.outlined.append(outlined)

        _write_guard_dir(out, root, graph, layout, policies, mode, entry_rel)
    except Exception:
        shutil.rmtree(out, ignore_errors=True)
        raise
    return CloneResult(manifest=manifest, policies=policies, out_dir=out,
                       entry=entry_rel, mode=mode)


def _write_guard_dir(
    out: Path,
    root: Path,
    graph: DependencyGraph,
    layout: PackageLayout,
    policies: dict[PackageId, ModulePolicy],
    mode: str,
    entry: str,
) -> None:
    guard_dir = out / GUARD_DIRNAME
    (guard_dir / "policies").mkdir(parents=True, exist_ok=True)

    assets = runtime_assets_dir()
    for name in _RUNTIME_ASSETS:
        source = assets / name
        if not source.is_file():
            raise OutlineError(f"missing runtime asset: {name}")
        shutil.copyfile(source, guard_dir / name)

    package_table: dict[str, dict] = {}
    for pkg in sorted(graph.nodes):
        policy_doc = policies[pkg].to_doc()
        locations = list(layout.locations[pkg])
        policy_doc["package_roots"] = locations
        filename = policy_filename(pkg)
        (guard_dir / "policies" / filename).write_bytes(
            (json.dumps(policy_doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
        )
        package_table[pkg.spec] = {
            "roots": locations,
            "policy": f"policies/{filename}",
        }

    requires_vm_modules = any(
        layout.module_kind(relative) == "esm"
        for pkg in graph.nodes
        for relative, kind in layout.files_of(pkg)
        if kind in ("cjs", "esm")
    )
    manifest_doc = {
        "entry": entry,
        "mode": mode,
        "root_package": graph.root.spec,
        "requires_vm_modules": requires_vm_modules,
        "working_directory": str(root),
        "packages": package_table,
    }
    (guard_dir / "manifest.json").write_bytes(
        (json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )
