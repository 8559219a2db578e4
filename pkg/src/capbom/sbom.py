"""SBOM ingestion: parse a CycloneDX-shaped document into a dependency graph.

The accepted input is a pinned subset of CycloneDX JSON: a root component
under metadata.component, a components array carrying name/version/bom-ref,
and a dependencies array of {ref, dependsOn[]}. Cycles are legal everywhere;
no traversal here assumes acyclicity.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class SbomError(ValueError):
    """Raised when an SBOM document cannot be loaded into a graph."""


class UnknownPackageError(KeyError):
    """Raised when a graph query names a package outside the graph."""

    def __str__(self) -> str:  # KeyError repr-quotes its payload otherwise
        return self.args[0] if self.args else ""


@dataclass(frozen=True, order=True)
class PackageId:
    """A package identity: registry name (possibly scoped) at an exact version."""

    name: str
    version: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("package name must be non-empty")
        if not self.version:
            raise ValueError("package version must be non-empty")

    @classmethod
    def parse(cls, text: str) -> "PackageId":
        name, sep, version = text.rpartition("@")
        if not sep or not name or not version:
            raise ValueError(f"not a name@version identity: {text!r}")
        return cls(name=name, version=version)

    @property
    def spec(self) -> str:
        return f"{self.name}@{self.version}"

    def __str__(self) -> str:
        return self.spec


@dataclass(frozen=True)
class DependencyGraph:
    """Packages plus directed depends-on edges, rooted at the application."""

    root: PackageId
    nodes: frozenset[PackageId]
    edges: frozenset[tuple[PackageId, PackageId]]
    _adjacency: dict[PackageId, frozenset[PackageId]] = field(
        init=False, repr=False, compare=False, hash=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        if self.root not in self.nodes:
            raise SbomError(f"root {self.root} is not among the graph nodes")
        for source, target in self.edges:
            if source not in self.nodes or target not in self.nodes:
                raise SbomError(f"edge {source} -> {target} references a missing node")
        out: dict[PackageId, set[PackageId]] = {node: set() for node in self.nodes}
        for source, target in self.edges:
            out[source].add(target)
        self._adjacency.update({pkg: frozenset(deps) for pkg, deps in out.items()})

    def require(self, pkg: PackageId) -> None:
        if pkg not in self.nodes:
            raise UnknownPackageError(f"unknown package: {pkg}")

    def names(self) -> frozenset[str]:
        return frozenset(pkg.name for pkg in self.nodes)

    def versions_of(self, name: str) -> frozenset[str]:
        return frozenset(pkg.version for pkg in self.nodes if pkg.name == name)


def direct_dependencies(graph: DependencyGraph, pkg: PackageId) -> frozenset[PackageId]:
    """The exact edge targets of pkg."""
    graph.require(pkg)
    return graph._adjacency[pkg]


def reachable(graph: DependencyGraph, pkg: PackageId) -> frozenset[PackageId]:
    """Everything reachable over one or more edges from pkg.

    pkg itself is included only when a cycle leads back to it. Terminates on
    cyclic graphs via a visited set.
    """
    graph.require(pkg)
    seen: set[PackageId] = set()
    queue = deque(graph._adjacency[pkg])
    while queue:
        current = queue.popleft()
        if current in seen:
            continue
        seen.add(current)
        queue.extend(graph._adjacency[current])
    return frozenset(seen)


def _component_id(entry: Mapping, where: str) -> PackageId:
    if not isinstance(entry, Mapping):
        raise SbomError(f"{where}: component entry is not an object")
    name = entry.get("name")
    version = entry.get("version")
    if not isinstance(name, str) or not name:
        raise SbomError(f"{where}: component is missing a name")
    if not isinstance(version, str) or not version:
        raise SbomError(f"{where}: component {name!r} is missing a version")
    return PackageId(name=name, version=version)


def parse_sbom(document_bytes: bytes) -> DependencyGraph:
    """Load the supported CycloneDX subset into a DependencyGraph."""
    try:
        doc = json.loads(document_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SbomError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("bomFormat") != "CycloneDX":
        raise SbomError("unknown schema: expected a CycloneDX document")

    metadata = doc.get("metadata")
    if not isinstance(metadata, dict) or "component" not in metadata:
        raise SbomError("missing root: no metadata.component entry")
    root = _component_id(metadata["component"], "metadata.component")
    refs: dict[str, PackageId] = {}

    def register(ref: str | None, pkg: PackageId, where: str) -> None:
        key = ref if isinstance(ref, str) and ref else pkg.spec
        if key in refs and refs[key] != pkg:
            raise SbomError(f"{where}: bom-ref {key!r} is declared twice")
        refs[key] = pkg

    register(metadata["component"].get("bom-ref"), root, "metadata.component")
    nodes = {root}
    components = doc.get("components", [])
    if not isinstance(components, list):
        raise SbomError("components must be an array")
    for index, entry in enumerate(components):
        pkg = _component_id(entry, f"components[{index}]")
        register(entry.get("bom-ref"), pkg, f"components[{index}]")
        nodes.add(pkg)

    edges: set[tuple[PackageId, PackageId]] = set()
    dependencies = doc.get("dependencies", [])
    if not isinstance(dependencies, list):
        raise SbomError("dependencies must be an array")
    for index, entry in enumerate(dependencies):
        where = f"dependencies[{index}]"
        if not isinstance(entry, Mapping) or "ref" not in entry:
            raise SbomError(f"{where}: expected an object with a ref")
        ref = entry["ref"]
        if ref not in refs:
            raise SbomError(f"{where}: undeclared component {ref!r}")
        source = refs[ref]
        for target_ref in entry.get("dependsOn", []):
            if target_ref not in refs:
                raise SbomError(f"{where}: undeclared component {target_ref!r}")
            edges.add((source, refs[target_ref]))

    return DependencyGraph(root=root, nodes=frozenset(nodes), edges=frozenset(edges))


def format_sbom(graph: DependencyGraph) -> bytes:
    """Emit the graph as normalized JSON in the same subset parse_sbom accepts."""
    components = [
        {"bom-ref": pkg.spec, "name": pkg.name, "version": pkg.version}
        for pkg in sorted(graph.nodes - {graph.root})
    ]
    by_source: dict[PackageId, list[str]] = {}
    for source, target in graph.edges:
        by_source.setdefault(source, []).append(target.spec)
    dependencies = [
        {"ref": pkg.spec, "dependsOn": sorted(by_source.get(pkg, []))}
        for pkg in sorted(graph.nodes)
    ]
    doc = {
        "bomFormat": "CycloneDX",
        "specVersion": "1.5",
        "metadata": {
            "component": {
                "bom-ref": graph.root.spec,
                "name": graph.root.name,
                "version": graph.root.version,
            }
        },
        "components": components,
        "dependencies": dependencies,
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def graph_report(graph: DependencyGraph) -> dict:
    """Debug view: normalized nodes/edges listing used by the CLI report command."""
    return {
        "root": graph.root.spec,
        "nodes": sorted(pkg.spec for pkg in graph.nodes),
        "edges": sorted([src.spec, dst.spec] for src, dst in graph.edges),
    }


def resolve_identities(specs: Iterable[str]) -> tuple[PackageId, ...]:
    return tuple(PackageId.parse(s) for s in specs)
