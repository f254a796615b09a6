"""Hierarchical guidance library and query-key resolution.

The library holds six major weakness categories (SFE, LOG, MEM, NUM, IDN,
UNT) plus CWE-keyed subcategories, each carrying a five-step guidance
template. A query key combines the ranked static-scan categories with the
detection model's verdict; retrieval resolves the top-ranked category (refined
to a subcategory when a dominant CWE points at one) and always returns
guidance, falling back to UNT.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .modelplug import ModelPrediction
from .staticscan import MAJOR_CATEGORIES, RankedCategories

GUIDANCE_STEPS = ("semantics", "logic", "internal_risks", "external_risks", "chain")
_ALLOWED_PLACEHOLDERS = {"code", "category", "findings"}


class TaxonomyError(ValueError):
    """Raised for schema violations in a guidance library file."""


@dataclass(frozen=True)
class CotGuidance:
    """Five ordered step templates with {code}/{category}/{findings} slots."""

    semantics: str
    logic: str
    internal_risks: str
    external_risks: str
    chain: str
    source: str = ""

    def steps(self) -> tuple[tuple[str, str], ...]:
        return tuple((name, getattr(self, name)) for name in GUIDANCE_STEPS)


@dataclass(frozen=True)
class TaxonomyNode:
    code: str
    name: str
    parent: str | None
    cwe_ids: tuple[int, ...]
    guidance: CotGuidance


@dataclass(frozen=True)
class QueryKey:
    """Ranked categories plus the model verdict; the retrieval key."""

    categories: RankedCategories
    model_verdict: int
    model_probability: float

    def serialize(self) -> str:
        """Canonical, byte-stable form for lookup and logging."""
        payload = {
            "categories": list(self.categories.codes),
            "cwe_hints": {
                code: self.categories.dominant_cwe[code]
                for code in sorted(self.categories.dominant_cwe)
            },
            "dl": "vulnerable" if self.model_verdict else "benign",
            "probability": round(self.model_probability, 4),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class CotLibrary:
    """Immutable lookup structure over taxonomy nodes."""

    def __init__(self, nodes: Mapping[str, TaxonomyNode], version: str) -> None:
        self._nodes = dict(nodes)
        self.version = version
        self._by_cwe: dict[int, str] = {}
        for node in self._nodes.values():
            for cwe in node.cwe_ids:
                self._by_cwe.setdefault(cwe, node.code)

    @property
    def nodes(self) -> Mapping[str, TaxonomyNode]:
        return dict(self._nodes)

    @property
    def majors(self) -> tuple[str, ...]:
        return tuple(c for c in MAJOR_CATEGORIES if c in self._nodes)

    def node(self, code: str) -> TaxonomyNode | None:
        return self._nodes.get(code)

    def node_for_cwe(self, cwe: int) -> TaxonomyNode | None:
        code = self._by_cwe.get(cwe)
        return self._nodes.get(code) if code else None


def _validate_placeholders(text: str, where: str) -> None:
    idx = 0
    while True:
        start = text.find("{", idx)
        if start == -1:
            return
        end = text.find("}", start)
        if end == -1:
            raise TaxonomyError(f"{where}: unterminated placeholder brace")
        name = text[start + 1 : end]
        if name not in _ALLOWED_PLACEHOLDERS:
            raise TaxonomyError(f"{where}: unknown placeholder {{{name}}}")
        idx = end + 1


def _guidance_from_obj(obj: Mapping, code: str) -> CotGuidance:
    missing = [s for s in GUIDANCE_STEPS if s not in obj or not obj[s]]
    if missing:
        raise TaxonomyError(f"node {code!r}: guidance missing step(s) {', '.join(missing)}")
    for step in GUIDANCE_STEPS:
        _validate_placeholders(obj[step], f"node {code!r} step {step!r}")
    return CotGuidance(
        semantics=obj["semantics"],
        logic=obj["logic"],
        internal_risks=obj["internal_risks"],
        external_risks=obj["external_risks"],
        chain=obj["chain"],
        source=code,
    )


def load_library(path: str | Path | None = None) -> CotLibrary:
    """Load and validate a guidance library; None loads the packaged default.

    All six major categories must be present; subcategories must name a major
    parent and inherit its guidance verbatim when they carry none of their own.
    """
    if path is None:
        with resources.files("vulnprompt.data").joinpath("cot_library.json").open(
            "r", encoding="utf-8"
        ) as fh:
            doc = json.load(fh)
    else:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise TaxonomyError(f"library file is not valid JSON: {exc}") from exc

    categories = doc.get("categories", {})
    missing_majors = [c for c in MAJOR_CATEGORIES if c not in categories]
    if missing_majors:
        raise TaxonomyError(f"library missing major category(ies): {', '.join(missing_majors)}")

    nodes: dict[str, TaxonomyNode] = {}
    for code, obj in categories.items():
        if code not in MAJOR_CATEGORIES:
            raise TaxonomyError(f"unknown major category {code!r}")
        if not obj.get("guidance"):
            raise TaxonomyError(f"major category {code!r} must carry guidance")
        nodes[code] = TaxonomyNode(
            code=code,
            name=obj.get("name", code),
            parent=None,
            cwe_ids=tuple(obj.get("cwe_ids", ())),
            guidance=_guidance_from_obj(obj["guidance"], code),
        )

    for code, obj in doc.get("subcategories", {}).items():
        if code in nodes:
            raise TaxonomyError(f"duplicate node code {code!r}")
        parent = obj.get("parent")
        if parent not in nodes or parent not in MAJOR_CATEGORIES:
            raise TaxonomyError(f"orphan subcategory {code!r}: parent {parent!r} is not a major")
        raw_guidance = obj.get("guidance")
        if raw_guidance:
            guidance = _guidance_from_obj(raw_guidance, code)
        else:
            parent_guidance = nodes[parent].guidance
            guidance = CotGuidance(
                semantics=parent_guidance.semantics,
                logic=parent_guidance.logic,
                internal_risks=parent_guidance.internal_risks,
                external_risks=parent_guidance.external_risks,
                chain=parent_guidance.chain,
                source=code,
            )
        nodes[code] = TaxonomyNode(
            code=code,
            name=obj.get("name", code),
            parent=parent,
            cwe_ids=tuple(int(c) for c in obj.get("cwe_ids", ())),
            guidance=guidance,
        )

    return CotLibrary(nodes, version=str(doc.get("library_version", "unversioned")))


def build_query_key(ranked: RankedCategories, prediction: ModelPrediction) -> QueryKey:
    return QueryKey(
        categories=ranked,
        model_verdict=prediction.verdict,
        model_probability=prediction.probability,
    )


def retrieve_guidance(library: CotLibrary, key: QueryKey) -> CotGuidance:
    """Guidance for the highest-ranked category that has a node.

    A dominant CWE refines the match to a subcategory when the library has
    one under that category; an empty ranking or unknown codes fall back to
    UNT. Total: never raises.
    """
    for code, _score in key.categories:
        hint = key.categories.dominant_cwe.get(code)
        if hint is not None:
            sub = library.node_for_cwe(hint)
            if sub is not None and (sub.parent == code or sub.code == code):
                return sub.guidance
        node = library.node(code)
        if node is not None:
            return node.guidance
    unt = library.node("UNT")
    assert unt is not None  # guaranteed by load_library
    return unt.guidance
