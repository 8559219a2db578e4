"""Command-line surface: infer, outline, diff, report.

Exit codes: 0 success, 2 review required (capability changes a human should
look at), 1 operational error. Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .capabilities import CapabilityMap, bundled_map
from .cbom import (
    CbomDocument,
    diff_cboms,
    format_cbom,
    parse_cbom,
    presented_view,
)
from .inference import InferenceError, infer_cbom
from .js_lexer import LexError
from .outline import OutlineError, write_clone
from .policy import compile_policy
from .resolve import ResolutionError, resolve_layout
from .sbom import (
    SbomError,
    UnknownPackageError,
    direct_dependencies,
    graph_report,
    parse_sbom,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REVIEW_REQUIRED = 2

_USAGE_ERRORS = (
    SbomError,
    UnknownPackageError,
    InferenceError,
    ResolutionError,
    OutlineError,
    LexError,
    ValueError,
    OSError,
)


@dataclass
class Config:
    sbom_path: Path
    project_root: Path | None = None
    cbom_path: Path | None = None
    output: Path | None = None
    mode: str = "exit"
    entry: str | None = None
    builtin_manifest: Path | None = None
    report_format: str = "table"

    def capability_map(self) -> CapabilityMap:
        if self.builtin_manifest is not None:
            return CapabilityMap.with_manifest_file(self.builtin_manifest)
        return bundled_map()


def _load_graph(path: Path):
    return parse_sbom(Path(path).read_bytes())


def _load_cbom(path: Path) -> CbomDocument:
    return parse_cbom(Path(path).read_bytes())


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for index, cell in enumerate(row):
            widths[index] = max(widths[index], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))).rstrip(),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def _caps(caps) -> str:
    return ",".join(sorted(c.value for c in caps)) or "-"


def cmd_infer(config: Config) -> int:
    graph = _load_graph(config.sbom_path)
    cbom = infer_cbom(config.project_root, graph)
    payload = format_cbom(cbom)
    if config.output is not None:
        Path(config.output).write_bytes(payload)
    if config.report_format == "json":
        sys.stdout.write(payload.decode("utf-8"))
    else:
        rows = [
            [pkg.spec, _caps(caps)]
            for pkg, caps in sorted(cbom.grants.items())
        ]
        sys.stdout.write(_table(["package", "capabilities"], rows))
    return EXIT_OK


def cmd_outline(config: Config) -> int:
    graph = _load_graph(config.sbom_path)
    if config.cbom_path is not None:
        cbom = _load_cbom(config.cbom_path)
    else:
        cbom = infer_cbom(config.project_root, graph)
    result = write_clone(
        config.project_root,
        config.output,
        graph,
        cbom,
        mode=config.mode,
        entry=config.entry,
        capability_map=config.capability_map(),
    )
    manifest = result.manifest
    summary = {
        "outlined": len(manifest.outlined),
        "copied": len(manifest.copied),
        "skipped": len(manifest.skipped),
        "mode": result.mode,
        "entry": result.entry,
        "out": str(result.out_dir),
    }
    if config.report_format == "json":
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(
            f"outlined {summary['outlined']}, copied {summary['copied']}, "
            f"skipped {summary['skipped']} (mode={summary['mode']}, "
            f"entry={summary['entry']})\n"
            f"clone written to {summary['out']}\n"
        )
    return EXIT_OK


def cmd_diff(args) -> int:
    old_graph = _load_graph(args.old_sbom)
    new_graph = _load_graph(args.new_sbom)
    old_cbom = _load_cbom(args.old_cbom)
    new_cbom = _load_cbom(args.new_cbom)
    diff = diff_cboms(old_cbom, new_cbom, old_graph, new_graph)
    if args.format == "json":
        sys.stdout.write(json.dumps(diff.as_dict(), indent=2, sort_keys=True) + "\n")
    else:
        rows = [
            [d.package.spec, d.capability.value, d.change, d.package_change]
            for d in diff.details
        ]
        sys.stdout.write(_table(["package", "capability", "change", "package-change"], rows))
        sys.stdout.write(
            f"total={diff.total} reviewable={diff.reviewable} updated={diff.updated}\n"
        )
    return EXIT_REVIEW_REQUIRED if diff.reviewable > 0 else EXIT_OK


def cmd_report(args) -> int:
    graph = _load_graph(args.sbom)
    cbom = _load_cbom(args.cbom)
    baseline = None
    if args.baseline_sbom or args.baseline_cbom:
        if not (args.baseline_sbom and args.baseline_cbom):
            raise ValueError("--baseline-sbom and --baseline-cbom must be given together")
        baseline = (_load_graph(args.baseline_sbom), _load_cbom(args.baseline_cbom))

    entries = []
    flagged = 0
    direct = {pkg for pkg in direct_dependencies(graph, graph.root)}
    for pkg in sorted(graph.nodes):
        enforced = cbom.enforced_view(pkg)
        presented = presented_view(cbom, graph, pkg)
        entry = {
            "package": pkg.spec,
            "enforced": sorted(c.value for c in enforced),
            "presented": sorted(c.value for c in presented),
            "delta": sorted(c.value for c in presented - enforced),
        }
        if baseline is not None and pkg in direct:
            base_graph, base_cbom = baseline
            gained: set = set()
            for old_pkg in base_graph.nodes:
                if old_pkg.name == pkg.name:
                    gained |= presented - presented_view(base_cbom, base_graph, old_pkg)
            if any(old.name == pkg.name for old in base_graph.nodes) and gained:
                entry["gained"] = sorted(c.value for c in gained)
                flagged += 1
        entries.append(entry)

    if args.format == "json":
        payload = {"root": graph.root.spec, "packages": entries}
        if args.graph:
            payload["graph"] = graph_report(graph)
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        rows = []
        for entry in entries:
            marker = " review" if entry.get("gained") else ""
            rows.append([
                entry["package"],
                ",".join(entry["enforced"]) or "-",
                ",".join(entry["presented"]) or "-",
                (",".join(entry.get("gained", [])) + marker).strip() or "-",
            ])
        sys.stdout.write(_table(["package", "enforced", "presented", "gained"], rows))
    if args.policies:
        _report_policies(args, graph, cbom)
    return EXIT_REVIEW_REQUIRED if flagged else EXIT_OK


def _report_policies(args, graph, cbom) -> None:
    if not args.root:
        raise ValueError("--policies requires --root to enumerate package files")
    layout = resolve_layout(Path(args.root), graph)
    cmap = (
        CapabilityMap.with_manifest_file(args.builtin_manifest)
        if args.builtin_manifest else bundled_map()
    )
    docs = []
    for pkg in sorted(graph.nodes):
        files = [layout.package_relative(pkg, rel) for rel, _ in layout.files_of(pkg)]
        docs.append(compile_policy(pkg, graph, cbom, files, args.mode, cmap).to_doc())
    sys.stdout.write(json.dumps(docs, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capbom",
        description="Compile SBOM+CBOM documents into enforceable capability "
                    "policies and guarded clones for Node.js projects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_infer = sub.add_parser("infer", help="statically infer a CBOM from package sources")
    p_infer.add_argument("--sbom", required=True, type=Path)
    p_infer.add_argument("--root", required=True, type=Path)
    p_infer.add_argument("--out", type=Path, help="write the CBOM JSON here")
    p_infer.add_argument("--format", choices=("table", "json"), default="table")

    p_outline = sub.add_parser("outline", help="write the guarded clone of a project")
    p_outline.add_argument("--sbom", required=True, type=Path)
    p_outline.add_argument("--cbom", type=Path, help="grants file; inferred statically when absent")
    p_outline.add_argument("--root", required=True, type=Path)
    p_outline.add_argument("--out", required=True, type=Path)
    p_outline.add_argument("--mode", choices=("log", "throw", "exit"), default="exit")
    p_outline.add_argument("--entry", help="project-relative entry file (default: package.json main)")
    p_outline.add_argument("--builtin-manifest", type=Path)
    p_outline.add_argument("--format", choices=("table", "json"), default="table")

    p_diff = sub.add_parser("diff", help="classify capability changes between two snapshots")
    p_diff.add_argument("--old-sbom", required=True, type=Path)
    p_diff.add_argument("--old-cbom", required=True, type=Path)
    p_diff.add_argument("--new-sbom", required=True, type=Path)
    p_diff.add_argument("--new-cbom", required=True, type=Path)
    p_diff.add_argument("--format", choices=("table", "json"), default="table")

    p_report = sub.add_parser("report", help="enforced/presented views per package")
    p_report.add_argument("--sbom", required=True, type=Path)
    p_report.add_argument("--cbom", required=True, type=Path)
    p_report.add_argument("--baseline-sbom", type=Path)
    p_report.add_argument("--baseline-cbom", type=Path)
    p_report.add_argument("--policies", action="store_true", help="dump compiled policies (needs --root)")
    p_report.add_argument("--graph", action="store_true", help="include the normalized graph dump")
    p_report.add_argument("--root", type=Path)
    p_report.add_argument("--mode", choices=("log", "throw", "exit"), default="exit")
    p_report.add_argument("--builtin-manifest", type=Path)
    p_report.add_argument("--format", choices=("table", "json"), default="table")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "infer":
            return cmd_infer(Config(
                sbom_path=args.sbom, project_root=args.root,
                output=args.out, report_format=args.format,
            ))
        if args.command == "outline":
            return cmd_outline(Config(
                sbom_path=args.sbom, project_root=args.root, cbom_path=args.cbom,
                output=args.out, mode=args.mode, entry=args.entry,
                builtin_manifest=args.builtin_manifest, report_format=args.format,
            ))
        if args.command == "diff":
            return cmd_diff(args)
        if args.command == "report":
            return cmd_report(args)
    except _USAGE_ERRORS as exc:
        print(f"capbom: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
