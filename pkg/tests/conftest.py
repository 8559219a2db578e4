"""Shared fixtures: fixture-tree loading, random graphs, independent oracles."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from capbom.capabilities import Capability
from capbom.cbom import CbomDocument, parse_cbom
from capbom.sbom import DependencyGraph, PackageId, parse_sbom

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = Path(__file__).parent / "corpus"
ORACLE = Path(__file__).parent / "oracle"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def load_graph(name: str) -> DependencyGraph:
    return parse_sbom((FIXTURES / name / "sbom.json").read_bytes())


def load_cbom(name: str, filename: str) -> CbomDocument:
    return parse_cbom((FIXTURES / name / filename).read_bytes())


def project_root(name: str) -> Path:
    return FIXTURES / name / "project"


# ---------------------------------------------------------------------------
# Randomized inputs (seeded; the acceptance suite fixes its own seeds)
# ---------------------------------------------------------------------------


def random_graph(rng: random.Random, max_nodes: int = 20) -> DependencyGraph:
    """A random graph with up to max_nodes nodes; cycles permitted."""
    count = rng.randint(1, max_nodes)
    nodes = [PackageId(f"pkg-{i}", f"{rng.randint(0, 3)}.{rng.randint(0, 9)}.0")
             for i in range(count)]
    # Distinct names may collide on version only with distinct names overall;
    # ensure identity uniqueness.
    nodes = list(dict.fromkeys(nodes))
    root = nodes[0]
    edges: set[tuple[PackageId, PackageId]] = set()
    for _ in range(rng.randint(0, count * 2)):
        a, b = rng.choice(nodes), rng.choice(nodes)
        edges.add((a, b))
    return DependencyGraph(root=root, nodes=frozenset(nodes), edges=frozenset(edges))


def random_cbom(rng: random.Random, graph: DependencyGraph) -> CbomDocument:
    grants = {}
    caps = list(Capability)
    for pkg in graph.nodes:
        grants[pkg] = frozenset(rng.sample(caps, rng.randint(0, len(caps))))
    return CbomDocument(grants=grants)


# ---------------------------------------------------------------------------
# Independent oracles (deliberately different formulations than the package)
# ---------------------------------------------------------------------------


def fixpoint_reachable(graph: DependencyGraph, pkg: PackageId) -> frozenset[PackageId]:
    """Reachability as a fixpoint over the raw edge set."""
    reached: set[PackageId] = set()
    changed = True
    while changed:
        changed = False
        for source, target in graph.edges:
            if (source == pkg or source in reached) and target not in reached:
                reached.add(target)
                changed = True
    return frozenset(reached)


def union_presented(cbom: CbomDocument, graph: DependencyGraph, pkg: PackageId):
    view = set(cbom.enforced_view(pkg))
    for dep in fixpoint_reachable(graph, pkg):
        view |= cbom.enforced_view(dep)
    return frozenset(view)


def classify_diff_counts(old_cbom, new_cbom, old_graph, new_graph):
    """Per-package brute-force classifier for diff counts (total, reviewable, updated)."""
    total = reviewable = updated = 0
    names = {p.name for p in old_graph.nodes} | {p.name for p in new_graph.nodes}
    for name in names:
        old_pkgs = {p for p in old_graph.nodes if p.name == name}
        new_pkgs = {p for p in new_graph.nodes if p.name == name}
        old_union = set()
        for p in old_pkgs:
            old_union |= old_cbom.enforced_view(p)
        new_union = set()
        for p in new_pkgs:
            new_union |= new_cbom.enforced_view(p)
        for p in new_pkgs:
            if p in old_pkgs:
                gained = new_cbom.enforced_view(p) - old_cbom.enforced_view(p)
                total += len(gained)
            elif old_pkgs:
                gained = new_cbom.enforced_view(p) - old_union
                total += len(gained)
                reviewable += len(gained)
                updated += len(gained)
            else:
                gained = new_cbom.enforced_view(p)
                total += len(gained)
                reviewable += len(gained)
        total += len(old_union - new_union)
    return total, reviewable, updated


def mutate_snapshot(rng: random.Random, graph: DependencyGraph, cbom: CbomDocument):
    """Random second snapshot: add/remove/update packages and jitter grants."""
    nodes = set(graph.nodes)
    grants = {pkg: set(caps) for pkg, caps in cbom.grants.items()}
    for pkg in sorted(graph.nodes):
        roll = rng.random()
        if pkg == graph.root:
            continue
        if roll < 0.2:
            nodes.discard(pkg)
            grants.pop(pkg, None)
        elif roll < 0.4:
            bumped = PackageId(pkg.name, pkg.version + ".1")
            nodes.discard(pkg)
            old = grants.pop(pkg, set())
            grants[bumped] = jitter_grants(rng, old)
            nodes.add(bumped)
        elif roll < 0.6:
            grants[pkg] = jitter_grants(rng, grants.get(pkg, set()))
    for i in range(rng.randint(0, 3)):
        fresh = PackageId(f"new-{i}", "1.0.0")
        nodes.add(fresh)
        grants[fresh] = jitter_grants(rng, set())
    edges = {(a, b) for a, b in graph.edges if a in nodes and b in nodes}
    new_graph = DependencyGraph(root=graph.root, nodes=frozenset(nodes), edges=frozenset(edges))
    return new_graph, CbomDocument.of({p: frozenset(c) for p, c in grants.items()})


def jitter_grants(rng: random.Random, caps: set) -> set:
    out = set(caps)
    for cap in Capability:
        roll = rng.random()
        if roll < 0.15:
            out.add(cap)
        elif roll < 0.3:
            out.discard(cap)
    return out


def write_sbom_fixture(path: Path, root_spec: str, components: list[str],
                       edges: list[tuple[str, list[str]]]) -> None:
    name, _, version = root_spec.rpartition("@")
    doc = {
        "bomFormat": "CycloneDX",
        "specVersion": "1.5",
        "metadata": {"component": {"bom-ref": root_spec, "name": name, "version": version}},
        "components": [
            {
                "bom-ref": spec,
                "name": spec.rpartition("@")[0],
                "version": spec.rpartition("@")[2],
            }
            for spec in components
        ],
        "dependencies": [{"ref": src, "dependsOn": targets} for src, targets in edges],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
