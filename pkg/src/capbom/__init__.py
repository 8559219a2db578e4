"""capbom: capability bill of materials tooling for Node.js projects.

Parses SBOMs into dependency graphs, infers and diffs per-package capability
grants (CBOMs), compiles them into enforceable module policies, and rewrites
projects into guarded clones whose emitted runtime enforces the policies.
"""

from .capabilities import (
    Capability,
    CapabilityMap,
    capability_of_binding,
    capability_of_global,
    capability_of_import,
    builtin_is_default_allowed,
)
from .cbom import (
    CbomDiff,
    CbomDocument,
    ViolationRecord,
    diff_cboms,
    enforced_view,
    extend_from_violations,
    format_cbom,
    parse_cbom,
    presented_view,
)
from .inference import SourceUnit, infer_cbom, scan_unit
from .outline import (
    CloneManifest,
    OutlinedUnit,
    clone_project,
    generate_preamble,
    outline_file,
    scan_top_level_names,
    write_clone,
)
from .policy import (
    ModulePolicy,
    Verdict,
    check_binding,
    check_import,
    compile_policy,
    globals_for,
)
from .sbom import (
    DependencyGraph,
    PackageId,
    SbomError,
    direct_dependencies,
    format_sbom,
    parse_sbom,
    reachable,
)

__version__ = "0.1.0"

__all__ = [
    "Capability",
    "CapabilityMap",
    "CbomDiff",
    "CbomDocument",
    "CloneManifest",
    "DependencyGraph",
    "ModulePolicy",
    "OutlinedUnit",
    "PackageId",
    "SbomError",
    "SourceUnit",
    "Verdict",
    "ViolationRecord",
    "builtin_is_default_allowed",
    "capability_of_binding",
    "capability_of_global",
    "capability_of_import",
    "check_binding",
    "check_import",
    "clone_project",
    "compile_policy",
    "diff_cboms",
    "direct_dependencies",
    "enforced_view",
    "extend_from_violations",
    "format_cbom",
    "format_sbom",
    "generate_preamble",
    "globals_for",
    "infer_cbom",
    "outline_file",
    "parse_cbom",
    "parse_sbom",
    "presented_view",
    "reachable",
    "scan_top_level_names",
    "scan_unit",
    "write_clone",
]
