"""Static-analyzer report parsing and taxonomy category scoring.

Consumes saved report files (Flawfinder ``--csv`` output, Cppcheck
``--xml-version=2`` output) rather than invoking the tools, so tests stay
hermetic and runs reproducible. Findings map onto the six-category weakness
taxonomy and accumulate severity-weighted scores per category.
"""

from __future__ import annotations

import csv
import io
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

TOOL_FLAWFINDER = "flawfinder"
TOOL_CPPCHECK = "cppcheck"

CATEGORY_UNTAXONOMIZED = "UNT"

MAJOR_CATEGORIES = ("SFE", "LOG", "MEM", "NUM", "IDN", "UNT")


class StaticScanError(ValueError):
    """Raised for malformed reports or invalid scoring parameters."""


@dataclass(frozen=True)
class StaticFinding:
    tool: str
    rule_id: str
    cwe: int | None
    severity: int
    message: str
    file: str
    line: int

    def __post_init__(self) -> None:
        if self.tool not in (TOOL_FLAWFINDER, TOOL_CPPCHECK):
            raise StaticScanError(f"unknown tool {self.tool!r}")
        if not 0 <= self.severity <= 5:
            raise StaticScanError(
                f"severity {self.severity} outside 0-5 for rule {self.rule_id!r}"
            )
        if self.line < 1:
            raise StaticScanError(f"line must be >= 1, got {self.line}")


# --- normalization tables (data files, retunable without code changes) ------


def _load_packaged_json(name: str) -> dict:
    with resources.files("vulnprompt.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_severity_maps(path: str | Path | None = None) -> dict:
    if path is None:
        return _load_packaged_json("severity_maps.json")
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_category_map(path: str | Path | None = None) -> dict:
    """Mapping table: rule id -> category and CWE -> category."""
    if path is None:
        return _load_packaged_json("category_map.json")
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- Flawfinder CSV ----------------------------------------------------------

_FLAWFINDER_REQUIRED = ("file", "line", "level", "category", "name", "cwes")
_CWE_RE = re.compile(r"CWE-(\d+)")


def parse_flawfinder(report: str) -> list[StaticFinding]:
    """Parse Flawfinder CSV-mode output into findings.

    The header must cover file, line, level, category, name, and CWEs
    (case-insensitive, any column order); the full 13-column output of
    ``flawfinder --csv`` satisfies this.
    """
    reader = csv.reader(io.StringIO(report))
    try:
        header = next(reader)
    except StopIteration:
        raise StaticScanError("flawfinder report is empty (no header row)") from None
    columns = {name.strip().lower(): idx for idx, name in enumerate(header)}
    missing = [c for c in _FLAWFINDER_REQUIRED if c not in columns]
    if missing:
        raise StaticScanError(
            f"flawfinder report missing required column(s): {', '.join(missing)}"
        )

    findings: list[StaticFinding] = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            file_ = row[columns["file"]]
            line = int(row[columns["line"]])
            level = int(row[columns["level"]])
            name = row[columns["name"]]
            cwes = row[columns["cwes"]]
        except (IndexError, ValueError) as exc:
            raise StaticScanError(f"flawfinder row {row_no}: unparseable ({exc})") from exc
        if not 0 <= level <= 5:
            raise StaticScanError(
                f"flawfinder row {row_no}: level {level} outside severity range 0-5"
            )
        cwe_match = _CWE_RE.search(cwes or "")
        message = row[columns["warning"]] if "warning" in columns and len(row) > columns["warning"] else name
        findings.append(
            StaticFinding(
                tool=TOOL_FLAWFINDER,
                rule_id=name,
                cwe=int(cwe_match.group(1)) if cwe_match else None,
                severity=level,
                message=message,
                file=file_,
                line=line,
            )
        )
    return findings


# --- Cppcheck XML v2 ---------------------------------------------------------


def parse_cppcheck(report: str, severity_maps: Mapping | None = None) -> list[StaticFinding]:
    """Parse Cppcheck XML v2 output into findings.

    Severity classes map through the normalization table (error=5, warning=3,
    performance/portability=2, style/information=1 by default). Errors without
    a <location> element keep their score contribution under file="" line=1.
    """
    maps = severity_maps or load_severity_maps()
    class_map: Mapping[str, int] = maps["cppcheck_severity_classes"]
    try:
        root = ET.fromstring(report)
    except ET.ParseError as exc:
        raise StaticScanError(f"cppcheck report is not well-formed XML: {exc}") from exc

    errors_parent = root.find("errors") if root.tag == "results" else root
    if errors_parent is None or (root.tag != "results" and root.tag != "errors"):
        raise StaticScanError("cppcheck report lacks a <results>/<errors> section")

    findings: list[StaticFinding] = []
    for err in errors_parent.iter("error"):
        rule_id = err.get("id", "")
        severity_class = err.get("severity", "")
        if severity_class not in class_map:
            raise StaticScanError(
                f"cppcheck error {rule_id!r}: unknown severity class {severity_class!r}"
            )
        cwe_attr = err.get("cwe")
        location = err.find("location")
        findings.append(
            StaticFinding(
                tool=TOOL_CPPCHECK,
                rule_id=rule_id,
                cwe=int(cwe_attr) if cwe_attr else None,
                severity=class_map[severity_class],
                message=err.get("msg", ""),
                file=location.get("file", "") if location is not None else "",
                line=int(location.get("line", "1")) if location is not None else 1,
            )
        )
    return findings


# --- canonical findings serialization ----------------------------------------


def findings_to_jsonl(findings: Iterable[StaticFinding]) -> str:
    lines = []
    for f in findings:
        lines.append(
            json.dumps(
                {
                    "tool": f.tool,
                    "rule_id": f.rule_id,
                    "cwe": f.cwe,
                    "severity": f.severity,
                    "message": f.message,
                    "file": f.file,
                    "line": f.line,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def findings_from_jsonl(text: str) -> list[StaticFinding]:
    findings = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            findings.append(StaticFinding(**obj))
        except (json.JSONDecodeError, TypeError) as exc:
            raise StaticScanError(f"findings line {line_no}: {exc}") from exc
    return findings


# --- taxonomy scoring ---------------------------------------------------------


@dataclass(frozen=True)
class CategoryScores:
    """Severity-weighted scores per taxonomy category, per tool and combined.

    cwe_detail tracks, per category, how much score each CWE contributed;
    it feeds the dominant-CWE hint used for subcategory guidance retrieval.
    """

    combined: Mapping[str, float]
    per_tool: Mapping[str, Mapping[str, float]]
    cwe_detail: Mapping[str, Mapping[int, float]]

    def score(self, category: str) -> float:
        return self.combined.get(category, 0.0)


@dataclass(frozen=True)
class RankedCategories:
    """Top categories by combined score, descending, ties by code ascending."""

    entries: tuple[tuple[str, float], ...]
    dominant_cwe: Mapping[str, int] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.entries)


def map_to_taxonomy(
    findings: Iterable[StaticFinding],
    mapping: Mapping | None = None,
    severity_maps: Mapping | None = None,
) -> CategoryScores:
    """Accumulate each finding's severity under exactly one category.

    Resolution order: rule id, then CWE, then the UNT fallback. Scores are
    severity times the per-tool weight (1.0 by default, so scores conserve
    the raw severity sum).
    """
    mapping = mapping or load_category_map()
    maps = severity_maps or load_severity_maps()
    weights: Mapping[str, float] = maps.get("tool_score_weights", {})
    rule_map: Mapping[str, str] = mapping.get("rule_to_category", {})
    cwe_map: Mapping[str, str] = mapping.get("cwe_to_category", {})

    combined: dict[str, float] = {}
    per_tool: dict[str, dict[str, float]] = {}
    cwe_detail: dict[str, dict[int, float]] = {}
    for f in findings:
        category = rule_map.get(f.rule_id)
        if category is None and f.cwe is not None:
            category = cwe_map.get(str(f.cwe))
        if category is None:
            category = CATEGORY_UNTAXONOMIZED
        contribution = f.severity * float(weights.get(f.tool, 1.0))
        combined[category] = combined.get(category, 0.0) + contribution
        per_tool.setdefault(f.tool, {})[category] = (
            per_tool.setdefault(f.tool, {}).get(category, 0.0) + contribution
        )
        if f.cwe is not None:
            detail = cwe_detail.setdefault(category, {})
            detail[f.cwe] = detail.get(f.cwe, 0.0) + contribution
    return CategoryScores(combined=combined, per_tool=per_tool, cwe_detail=cwe_detail)


def top_k(scores: CategoryScores, k: int = 2) -> RankedCategories:
    """Highest-scoring K categories; zero-score categories never appear."""
    if k < 1:
        raise StaticScanError(f"K must be >= 1, got {k}")
    ranked = sorted(
        ((code, score) for code, score in scores.combined.items() if score > 0),
        key=lambda item: (-item[1], item[0]),
    )[:k]
    dominant: dict[str, int] = {}
    for code, _ in ranked:
        detail = scores.cwe_detail.get(code)
        if detail:
            dominant[code] = min(
                detail, key=lambda cwe: (-detail[cwe], cwe)
            )
    return RankedCategories(entries=tuple(ranked), dominant_cwe=dominant)
