"""CBOM documents: per-package capability grants, views, and update diffs.

A CBOM maps package identities to granted capability sets and is total by
default: a package without an entry has an empty grant set. Serialization is
canonical (sorted keys, sorted capability arrays) so documents diff cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .capabilities import (
    Capability,
    capability_of_binding,
    capability_of_global,
    capability_of_import,
)
from .sbom import DependencyGraph, PackageId, reachable


class CbomError(ValueError):
    """Raised when a CBOM document cannot be parsed."""


@dataclass(frozen=True)
class CbomDocument:
    grants: Mapping[PackageId, frozenset[Capability]] = field(default_factory=dict)

    @classmethod
    def of(cls, grants: Mapping[PackageId, Iterable[Capability]]) -> "CbomDocument":
        return cls(grants={pkg: frozenset(caps) for pkg, caps in grants.items()})

    def enforced_view(self, pkg: PackageId) -> frozenset[Capability]:
        return self.grants.get(pkg, frozenset())

    def granting(self, pkg: PackageId, caps: Iterable[Capability]) -> "CbomDocument":
        updated = dict(self.grants)
        updated[pkg] = self.enforced_view(pkg) | frozenset(caps)
        return CbomDocument(grants=updated)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CbomDocument):
            return NotImplemented
        return dict(self.grants) == dict(other.grants)

    def __hash__(self) -> int:
        return hash(frozenset((pkg, caps) for pkg, caps in self.grants.items()))


def enforced_view(cbom: CbomDocument, pkg: PackageId) -> frozenset[Capability]:
    """Exactly the package's own grant set; empty when absent."""
    return cbom.enforced_view(pkg)


def presented_view(
    cbom: CbomDocument, graph: DependencyGraph, pkg: PackageId
) -> frozenset[Capability]:
    """The package's grants unioned with those of every transitive dependency.

    This is what a human reviews: the capability surface the package's whole
    subtree can exercise, while enforcement stays per-package.
    """
    view = set(cbom.enforced_view(pkg))
    for dep in reachable(graph, pkg):
        view |= cbom.enforced_view(dep)
    return frozenset(view)


def parse_cbom(document_bytes: bytes) -> CbomDocument:
    try:
        doc = json.loads(document_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CbomError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CbomError("CBOM must be a JSON object of name@version -> capabilities")
    grants: dict[PackageId, frozenset[Capability]] = {}
    for key, value in doc.items():
        try:
            pkg = PackageId.parse(key)
        except ValueError as exc:
            raise CbomError(f"bad package key {key!r}: {exc}") from exc
        if not isinstance(value, list):
            raise CbomError(f"{key}: grant set must be an array")
        try:
            grants[pkg] = frozenset(Capability.parse(item) for item in value)
        except ValueError as exc:
            raise CbomError(f"{key}: {exc}") from exc
    return CbomDocument(grants=grants)


def format_cbom(cbom: CbomDocument) -> bytes:
    doc = {
        pkg.spec: sorted(cap.value for cap in caps)
        for pkg, caps in cbom.grants.items()
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Update-review diffing
# ---------------------------------------------------------------------------

#: How the owning package moved between the two snapshots.
PACKAGE_ADDED = "added"
PACKAGE_UPDATED = "updated"
PACKAGE_REMOVED = "removed"
PACKAGE_UNCHANGED = "unchanged"


@dataclass(frozen=True)
class CapabilityChange:
    package: PackageId
    capability: Capability
    change: str  # "added" | "removed"
    package_change: str

    def as_dict(self) -> dict:
        return {
            "package": self.package.spec,
            "capability": self.capability.value,
            "change": self.change,
            "package_change": self.package_change,
        }


@dataclass(frozen=True)
class CbomDiff:
    total: int
    reviewable: int
    updated: int
    details: tuple[CapabilityChange, ...]

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "reviewable": self.reviewable,
            "updated": self.updated,
            "details": [d.as_dict() for d in self.details],
        }


def diff_cboms(
    old: CbomDocument,
    new: CbomDocument,
    old_graph: DependencyGraph,
    new_graph: DependencyGraph,
) -> CbomDiff:
    """Classify capability changes between two SBOM+CBOM snapshots.

    Package identity is name@version; "updated" means the name survives with
    a different version. New capabilities of an updated identity are measured
    against the union of the old versions' grants for that name. Removed
    capabilities count toward the total only.
    """
    old_by_name: dict[str, set[PackageId]] = {}
    for pkg in old_graph.nodes:
        old_by_name.setdefault(pkg.name, set()).add(pkg)
    new_by_name: dict[str, set[PackageId]] = {}
    for pkg in new_graph.nodes:
        new_by_name.setdefault(pkg.name, set()).add(pkg)

    details: list[CapabilityChange] = []
    for name in sorted(set(old_by_name) | set(new_by_name)):
        old_versions = old_by_name.get(name, set())
        new_versions = new_by_name.get(name, set())
        old_union: set[Capability] = set()
        for pkg in old_versions:
            old_union |= old.enforced_view(pkg)
        new_union: set[Capability] = set()
        for pkg in new_versions:
            new_union |= new.enforced_view(pkg)

        for pkg in sorted(new_versions):
            if pkg in old_versions:
                status = PACKAGE_UNCHANGED
                baseline = old.enforced_view(pkg)
            elif old_versions:
                status = PACKAGE_UPDATED
                baseline = frozenset(old_union)
            else:
                status = PACKAGE_ADDED
                baseline = frozenset()
            for cap in sorted(new.enforced_view(pkg) - baseline, key=lambda c: c.value):
                details.append(CapabilityChange(pkg, cap, "added", status))

        removed_caps = old_union - new_union
        if removed_caps:
            if not new_versions:
                status = PACKAGE_REMOVED
                carrier = max(old_versions)
            elif new_versions == old_versions:
                status = PACKAGE_UNCHANGED
                carrier = max(new_versions)
            else:
                status = PACKAGE_UPDATED
                carrier = max(new_versions)
            for cap in sorted(removed_caps, key=lambda c: c.value):
                details.append(CapabilityChange(carrier, cap, "removed", status))

    total = len(details)
    reviewable = sum(
        1 for d in details
        if d.change == "added" and d.package_change in (PACKAGE_ADDED, PACKAGE_UPDATED)
    )
    updated = sum(
        1 for d in details
        if d.change == "added" and d.package_change == PACKAGE_UPDATED
    )
    return CbomDiff(total=total, reviewable=reviewable, updated=updated, details=tuple(details))


# ---------------------------------------------------------------------------
# Dynamic inference from guard violation logs
# ---------------------------------------------------------------------------

VIOLATION_KINDS = ("import", "global", "binding", "codegen")


@dataclass(frozen=True)
class ViolationRecord:
    """One denial event as emitted by the guard runtime (one NDJSON line)."""

    package: PackageId
    kind: str
    subject: str
    capability: Capability | None = None
    file: str | None = None
    timestamp: str | None = None
    mode: str | None = None

    def resolve_capability(self) -> Capability | None:
        if self.capability is not None:
            return self.capability
        if self.kind == "import":
            return capability_of_import(self.subject)
        if self.kind == "global":
            return capability_of_global(self.subject)
        if self.kind == "binding":
            return capability_of_binding(self.subject)
        if self.kind == "codegen":
            return Capability.CODE
        return None


def parse_violation_log(text: str) -> tuple[list[ViolationRecord], list[str]]:
    """Parse NDJSON violation lines; malformed lines are returned as errors."""
    records: list[ViolationRecord] = []
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            record = ViolationRecord(
                package=PackageId.parse(doc["package"]),
                kind=doc["kind"],
                subject=doc["subject"],
                capability=Capability.parse(doc["capability"]) if doc.get("capability") else None,
                file=doc.get("file"),
                timestamp=doc.get("timestamp"),
                mode=doc.get("mode"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        records.append(record)
    return records, errors


def extend_from_violations(
    cbom: CbomDocument, log: Sequence[ViolationRecord]
) -> tuple[CbomDocument, list[ViolationRecord]]:
    """Fill CBOM gaps from observed denials; unresolvable records are returned.

    Idempotent: replaying the same log cannot change the result twice. Records
    whose subject maps to no capability (e.g. an undeclared third-party import,
    which is an SBOM violation rather than a capability violation) are skipped
    and reported back to the caller.
    """
    grants = {pkg: set(caps) for pkg, caps in cbom.grants.items()}
    skipped: list[ViolationRecord] = []
    for record in log:
        cap = record.resolve_capability()
        if cap is None:
            skipped.append(record)
            continue
        grants.setdefault(record.package, set()).add(cap)
    doc = CbomDocument(grants={pkg: frozenset(caps) for pkg, caps in grants.items()})
    return doc, skipped
