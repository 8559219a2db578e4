"""Compile per-package enforcement policies from the SBOM graph and CBOM grants.

Each package receives one ModulePolicy holding the import allowlist (own
files, declared dependencies, default builtins, granted privileged builtins),
the granted bindings, the granted globals, the code-generation flag, and the
enforcement mode. Verdicts over a policy are pure membership decisions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Iterable

from .capabilities import Capability, CapabilityMap, bundled_map, normalize_specifier
from .cbom import CbomDocument
from .sbom import DependencyGraph, PackageId, direct_dependencies

ENFORCEMENT_MODES = ("log", "throw", "exit")

#: Synthesized CommonJS scope names, in installation order.
CJS_SYNTHETICS = ("require", "module", "exports", "__dirname", "__filename")

POLICY_FILE_EXTENSIONS = (".js", ".cjs", ".mjs", ".json", ".node")

ALLOW = "allow"
DENY = "deny"


class PolicyError(ValueError):
    """Raised when a policy cannot be compiled as requested."""


@dataclass(frozen=True)
class Verdict:
    decision: str  # allow | deny
    reason: str
    matched_entry: str | None = None

    @property
    def allowed(self) -> bool:
        return self.decision == ALLOW


@dataclass(frozen=True)
class ModulePolicy:
    package: PackageId
    grants: tuple[str, ...]  # enforced capability names, sorted
    import_files: tuple[str, ...]  # Ia: package-relative paths
    import_packages: tuple[str, ...]  # Ib: declared dependency names
    import_builtins: tuple[str, ...]  # Ic: default-allowed builtins (bare)
    import_granted: tuple[str, ...]  # Id: granted privileged builtins (bare)
    binding_granted: tuple[str, ...]  # Bb; unlisted non-privileged names stay allowed
    global_granted: tuple[str, ...]  # Gb
    codegen_allowed: bool
    mode: str

    @property
    def import_allowlist(self) -> frozenset[str]:
        return frozenset(
            (*self.import_files, *self.import_packages,
             *self.import_builtins, *self.import_granted)
        )

    def grants_capability(self, capability: Capability) -> bool:
        return capability.value in self.grants

    def to_doc(self) -> dict:
        return {
            "package": self.package.spec,
            "grants": list(self.grants),
            "mode": self.mode,
            "codegen": self.codegen_allowed,
            "imports": {
                "files": list(self.import_files),
                "packages": list(self.import_packages),
                "builtins": list(self.import_builtins),
                "granted_builtins": list(self.import_granted),
            },
            "bindings": {"granted": list(self.binding_granted)},
            "globals": {"granted": list(self.global_granted)},
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def compile_policy(
    pkg: PackageId,
    graph: DependencyGraph,
    cbom: CbomDocument,
    files: Iterable[str],
    mode: str = "exit",
    capability_map: CapabilityMap | None = None,
) -> ModulePolicy:
    """Build the allowlists for one package from its grants and file list.

    `files` are package-relative paths of the package's own files; anything
    escaping the package directory or carrying an unexpected extension is
    rejected. `.node` files join the allowlist only under an addon grant.
    """
    cmap = capability_map or bundled_map()
    graph.require(pkg)
    if mode not in ENFORCEMENT_MODES:
        raise PolicyError(f"unknown enforcement mode: {mode!r}")

    grants = cbom.enforced_view(pkg)
    own_files: list[str] = []
    for entry in files:
        path = PurePosixPath(entry)
        if path.is_absolute() or ".." in path.parts:
            raise PolicyError(f"{pkg}: file outside package directory: {entry}")
        if path.suffix not in POLICY_FILE_EXTENSIONS:
            raise PolicyError(f"{pkg}: unsupported policy file extension: {entry}")
        if path.suffix == ".node" and Capability.ADDON not in grants:
            continue
        own_files.append(str(path))

    granted_builtins: set[str] = set()
    for cap in grants:
        granted_builtins.update(cmap.privileged_builtins_for(cap))

    return ModulePolicy(
        package=pkg,
        grants=tuple(sorted(cap.value for cap in grants)),
        import_files=tuple(sorted(set(own_files))),
        import_packages=tuple(sorted({dep.name for dep in direct_dependencies(graph, pkg)})),
        import_builtins=cmap.default_allowed_builtins(),
        import_granted=tuple(sorted(granted_builtins)),
        binding_granted=cmap.granted_bindings(grants),
        global_granted=cmap.granted_globals(grants),
        codegen_allowed=Capability.CODE in grants,
        mode=mode,
    )


def _local_candidates(resolved: str) -> list[str]:
    """Resolution candidates for a package-relative path, extension-ful first."""
    candidates = [resolved]
    if not resolved.endswith(POLICY_FILE_EXTENSIONS):
        candidates.extend(resolved + ext for ext in (".js", ".cjs", ".mjs", ".json", ".node"))
    prefix = "" if resolved in ("", ".") else resolved + "/"
    candidates.extend(
        prefix + "index" + ext for ext in (".js", ".cjs", ".mjs", ".json", ".node")
    )
    return candidates


def _resolve_relative(specifier: str, importing_file: str) -> str | None:
    """Normalize ./ and ../ against the importing file; None when escaping."""
    base = PurePosixPath(importing_file).parent
    combined = base / specifier
    parts: list[str] = []
    for part in combined.parts:
        if part == ".":
            continue
        if part == "..":
            if not parts:
                return None
            parts.pop()
        else:
            parts.append(part)
    return "/".join(parts)


def _dependency_name(specifier: str) -> str:
    """The package-name part of a bare specifier ("pkg/sub" -> "pkg")."""
    if specifier.startswith("@"):
        segments = specifier.split("/")
        return "/".join(segments[:2]) if len(segments) >= 2 else specifier
    return specifier.split("/", 1)[0]


def _deny(policy: ModulePolicy, specifier: str,
          capability_map: CapabilityMap) -> Verdict:
    cap = capability_map.capability_of_import(specifier)
    if cap is not None and not policy.grants_capability(cap):
        return Verdict(DENY, "capability-missing")
    return Verdict(DENY, "not-in-allowlist")


def check_import(
    policy: ModulePolicy,
    specifier: str,
    importing_file: str = "index.js",
    capability_map: CapabilityMap | None = None,
) -> Verdict:
    """Decide one import attempt against the compiled allowlist.

    `importing_file` is the package-relative path of the requesting unit and
    anchors relative specifiers. Denials distinguish a privileged builtin
    whose capability is ungranted (capability-missing) from everything else
    (not-in-allowlist).
    """
    cmap = capability_map or bundled_map()
    if not specifier:
        return Verdict(DENY, "not-in-allowlist")

    if specifier.startswith(("./", "../")) or specifier in (".", ".."):
        resolved = _resolve_relative(specifier, importing_file)
        if resolved is None:
            return _deny(policy, specifier, cmap)
        for candidate in _local_candidates(resolved):
            if candidate in policy.import_files:
                return Verdict(ALLOW, "local-file", matched_entry=candidate)
        return _deny(policy, resolved or specifier, cmap)

    if specifier.startswith("node:"):
        bare = normalize_specifier(specifier)
        if bare in policy.import_granted:
            return Verdict(ALLOW, "granted-builtin", matched_entry=bare)
        if bare in policy.import_builtins:
            return Verdict(ALLOW, "default-builtin", matched_entry=bare)
        return _deny(policy, specifier, cmap)

    if specifier in policy.import_granted:
        return Verdict(ALLOW, "granted-builtin", matched_entry=specifier)
    if specifier in policy.import_builtins:
        return Verdict(ALLOW, "default-builtin", matched_entry=specifier)
    name = _dependency_name(specifier)
    if name in policy.import_packages:
        return Verdict(ALLOW, "sbom-dependency", matched_entry=name)
    return _deny(policy, specifier, cmap)


def check_binding(
    policy: ModulePolicy,
    name: str,
    capability_map: CapabilityMap | None = None,
) -> Verdict:
    """Decide one process.binding access; unlisted names are default-allowed."""
    cmap = capability_map or bundled_map()
    cap = cmap.capability_of_binding(name)
    if cap is None:
        return Verdict(ALLOW, "default-builtin", matched_entry=name)
    if name in policy.binding_granted:
        return Verdict(ALLOW, "granted-builtin", matched_entry=name)
    return Verdict(DENY, "capability-missing")


def globals_for(
    policy: ModulePolicy,
    unit_kind: str,
    capability_map: CapabilityMap | None = None,
) -> list[tuple[str, str]]:
    """Ordered global-namespace listing for a unit of the given kind.

    Standard names come from the default-globals manifest, granted names from
    the CBOM; cjs units additionally receive the synthesized module-scope
    names. Order is deterministic: standard, granted, synthetics.
    """
    cmap = capability_map or bundled_map()
    listing = [(name, "standard") for name in cmap.default_globals]
    listing.extend((name, "granted") for name in policy.global_granted)
    if unit_kind == "cjs":
        listing.extend((name, "cjs-synthetic") for name in CJS_SYNTHETICS)
    return listing
