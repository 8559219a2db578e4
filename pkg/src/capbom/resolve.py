"""Map SBOM package identities onto the project's on-disk layout.

Resolution mirrors the runtime's lookup: from a dependent's own directory,
nested node_modules directories are searched upward toward the project root,
nearest match first. A found package whose manifest version disagrees with
the SBOM is an error, never a silent re-match.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .sbom import DependencyGraph, PackageId

CODE_EXTENSIONS = {".js", ".cjs", ".mjs"}
DATA_EXTENSIONS = {".json", ".node"}


class ResolutionError(ValueError):
    """Raised when graph packages and the directory tree disagree."""


def _read_manifest(directory: Path) -> dict | None:
    manifest = directory / "package.json"
    if not manifest.is_file():
        return None
    try:
        return json.loads(manifest.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ResolutionError(f"{manifest}: unreadable package manifest ({exc})") from exc


@dataclass
class PackageLayout:
    """Resolved locations for every graph package plus file attribution."""

    root: Path
    graph: DependencyGraph
    locations: dict[PackageId, tuple[str, ...]]
    _kind_cache: dict[str, str] = field(default_factory=dict, repr=False)

    def directories(self) -> list[tuple[str, PackageId]]:
        """(project-relative dir, owner) pairs, longest paths first."""
        pairs = [
            (loc, pkg)
            for pkg, locs in self.locations.items()
            for loc in locs
        ]
        pairs.sort(key=lambda item: (-len(item[0]), item[0]))
        return pairs

    def owner_of(self, relative: str) -> PackageId:
        """Attribute a project-relative file path to its owning package."""
        path = PurePosixPath(relative)
        for location, pkg in self.directories():
            base = PurePosixPath(location) if location else None
            if base is None or base == path or base in path.parents:
                remainder = path.relative_to(base) if base else path
                if "node_modules" in remainder.parts:
                    raise ResolutionError(
                        f"{relative}: file belongs to a package that is not in the SBOM"
                    )
                return pkg
        raise ResolutionError(f"{relative}: not under the project root")

    def package_relative(self, pkg: PackageId, relative: str) -> str:
        for location in self.locations[pkg]:
            base = PurePosixPath(location) if location else None
            path = PurePosixPath(relative)
            if base is None or base == path or base in path.parents:
                return str(path.relative_to(base)) if base else str(path)
        raise ResolutionError(f"{relative}: not inside package {pkg}")

    def module_kind(self, relative: str) -> str | None:
        """Classify a file: cjs/esm by extension and nearest manifest "type"."""
        suffix = PurePosixPath(relative).suffix
        if suffix == ".mjs":
            return "esm"
        if suffix == ".cjs":
            return "cjs"
        if suffix == ".json":
            return "json"
        if suffix == ".node":
            return "addon"
        if suffix != ".js":
            return None
        directory = str(PurePosixPath(relative).parent)
        return self._dir_kind(directory)

    def _dir_kind(self, directory: str) -> str:
        if directory in self._kind_cache:
            return self._kind_cache[directory]
        current = PurePosixPath(directory)
        chain = [str(current)]
        kind = "cjs"
        while True:
            probe = self.root / str(current) if str(current) != "." else self.root
            manifest = _read_manifest(probe)
            if manifest is not None:
                kind = "esm" if manifest.get("type") == "module" else "cjs"
                break
            if str(current) == ".":
                break
            current = current.parent
            chain.append(str(current))
        for entry in chain:
            self._kind_cache[entry] = kind
        return kind

    def files_of(self, pkg: PackageId) -> list[tuple[str, str]]:
        """All (project-relative path, kind) files owned by pkg, sorted.

        Nested node_modules subtrees belong to other packages and are pruned.
        """
        found: list[tuple[str, str]] = []
        for location in self.locations[pkg]:
            base = self.root / location if location else self.root
            for dirpath, dirnames, filenames in os.walk(base):
                dirnames[:] = sorted(d for d in dirnames if d != "node_modules")
                for name in sorted(filenames):
                    full = Path(dirpath) / name
                    relative = full.relative_to(self.root).as_posix()
                    kind = self.module_kind(relative)
                    if kind is not None:
                        found.append((relative, kind))
        return sorted(found)


def resolve_layout(project_root: Path, graph: DependencyGraph) -> PackageLayout:
    """Locate every graph package beneath the project root."""
    root = Path(project_root).resolve()
    if not root.is_dir():
        raise ResolutionError(f"project root {project_root} is not a directory")

    manifest = _read_manifest(root)
    if manifest is None:
        raise ResolutionError(f"{root}: project root has no package.json")
    declared = PackageId(
        name=manifest.get("name", ""), version=manifest.get("version", "")
    ) if manifest.get("name") and manifest.get("version") else None
    if declared != graph.root:
        raise ResolutionError(
            f"project root manifest declares {declared}, SBOM root is {graph.root}"
        )

    layout = PackageLayout(root=root, graph=graph, locations={graph.root: ("",)})
    unresolved: list[str] = []
    queue = [graph.root]
    seen = {graph.root}
    while queue:
        dependent = queue.pop(0)
        for target in sorted(_targets(graph, dependent)):
            spot = _find_package(root, layout.locations[dependent], target, unresolved)
            if spot is not None:
                existing = layout.locations.get(target, ())
                if spot not in existing:
                    layout.locations[target] = tuple(sorted({*existing, spot}))
            if target not in seen:
                seen.add(target)
                queue.append(target)

    missing = [pkg for pkg in graph.nodes if pkg not in layout.locations]
    if missing or unresolved:
        problems = [f"unresolvable package: {pkg}" for pkg in sorted(missing)]
        problems.extend(sorted(set(unresolved)))
        raise ResolutionError("; ".join(problems))
    return layout


def _targets(graph: DependencyGraph, pkg: PackageId) -> frozenset[PackageId]:
    from .sbom import direct_dependencies

    return direct_dependencies(graph, pkg)


def _find_package(
    root: Path,
    dependent_locations: tuple[str, ...],
    target: PackageId,
    problems: list[str],
) -> str | None:
    for start in dependent_locations:
        current = PurePosixPath(start) if start else PurePosixPath(".")
        while True:
            candidate = current / "node_modules" / target.name
            candidate_abs = root / candidate
            manifest = _read_manifest(candidate_abs)
            if manifest is not None:
                found = manifest.get("version", "")
                if found != target.version:
                    problems.append(
                        f"version mismatch for {target.name}: SBOM says "
                        f"{target.version}, {candidate} contains {found}"
                    )
                    return None
                return candidate.as_posix()
            if str(current) == ".":
                break
            current = current.parent
    return None
