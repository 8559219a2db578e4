"""Static capability inference over package source files.

The scan is lexical but literal-aware: trigger words inside comments, strings,
and template text never fire, removing the classic false-grant of plain regex
matching while keeping the same trigger vocabulary: privileged builtin
specifiers in import positions, ".node" paths, and capability-bearing global
names used as bare identifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .capabilities import (
    Capability,
    GLOBAL_RULES,
    capability_of_import,
)
from .cbom import CbomDocument
from .js_lexer import LexError, Token, tokenize
from .resolve import PackageLayout, resolve_layout
from .sbom import DependencyGraph, PackageId

SOURCE_EXTENSIONS = (".js", ".cjs", ".mjs")


class InferenceError(ValueError):
    """Raised when a package or file cannot be scanned."""


@dataclass(frozen=True)
class SourceUnit:
    """One file of a package, project-relative, with decoded text."""

    path: str
    kind: str  # cjs | esm | json | addon
    text: str


def _specifier_position(tokens: list[Token], index: int) -> bool:
    """True when tokens[index] (a string) sits in import/require position."""
    prev = tokens[index - 1] if index >= 1 else None
    prev2 = tokens[index - 2] if index >= 2 else None
    prev3 = tokens[index - 3] if index >= 3 else None
    if prev is None:
        return False
    # require("x") / import("x"), excluding member calls like obj.require("x")
    if prev.kind == "punct" and prev.value == "(" and prev2 is not None:
        if prev2.kind == "ident" and prev2.value in ("require", "import"):
            dotted = prev3 is not None and prev3.kind == "punct" and prev3.value in (".", "?.")
            return not dotted
        return False
    # import "x";  /  from "x"
    if prev.kind == "ident" and prev.value == "import":
        return True
    if prev.kind == "ident" and prev.value == "from":
        return True
    return False


def scan_unit(unit: SourceUnit) -> frozenset[Capability]:
    """Capabilities a single source unit triggers."""
    if unit.kind == "json":
        return frozenset()
    if unit.kind == "addon":
        return frozenset([Capability.ADDON])
    try:
        tokens = tokenize(unit.text)
    except LexError as exc:
        raise InferenceError(f"{unit.path}: {exc}") from exc

    found: set[Capability] = set()
    for index, token in enumerate(tokens):
        if token.kind == "string":
            if _specifier_position(tokens, index):
                cap = capability_of_import(token.value)
                if cap is not None:
                    found.add(cap)
        elif token.kind == "ident" and token.value in GLOBAL_RULES:
            prev = tokens[index - 1] if index >= 1 else None
            if prev is not None and prev.kind == "punct" and prev.value in (".", "?."):
                continue  # member access, not the global
            found.add(GLOBAL_RULES[token.value])
    return frozenset(found)


def read_unit(root: Path, relative: str, kind: str) -> SourceUnit:
    if kind == "addon":
        return SourceUnit(path=relative, kind=kind, text="")
    raw = (root / relative).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InferenceError(f"{relative}: not valid UTF-8 ({exc})") from exc
    return SourceUnit(path=relative, kind=kind, text=text)


def package_units(layout: PackageLayout, pkg: PackageId) -> list[SourceUnit]:
    """All scannable units owned by one package, sorted by path."""
    units = []
    for relative, kind in layout.files_of(pkg):
        if kind in ("cjs", "esm", "addon"):
            units.append(read_unit(layout.root, relative, kind))
        elif kind == "json":
            units.append(SourceUnit(path=relative, kind="json", text=""))
    return units


def infer_cbom(project_root: Path, graph: DependencyGraph) -> CbomDocument:
    """Scan every graph package's own files and collect grants per package.

    Per-package locality holds by construction: a package's grant set is the
    union over its own files only, never its dependencies'.
    """
    layout = resolve_layout(project_root, graph)
    grants: dict[PackageId, frozenset[Capability]] = {}
    for pkg in sorted(graph.nodes):
        caps: set[Capability] = set()
        for unit in package_units(layout, pkg):
            caps |= scan_unit(unit)
        grants[pkg] = frozenset(caps)
    return CbomDocument(grants=grants)
