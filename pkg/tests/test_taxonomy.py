import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnprompt.modelplug import ModelPrediction
from vulnprompt.staticscan import MAJOR_CATEGORIES, RankedCategories, load_category_map
from vulnprompt.taxonomy import (
    GUIDANCE_STEPS,
    TaxonomyError,
    build_query_key,
    load_library,
    retrieve_guidance,
)

GENERIC_GUIDANCE = {
    "semantics": "Describe the code.",
    "logic": "Trace the flow.",
    "internal_risks": "List risky constructs: {findings}",
    "external_risks": "Check external calls.",
    "chain": "Ask ordered questions about {category} and conclude.",
}


def minimal_library_doc():
    return {
        "schema_version": 1,
        "library_version": "test-1",
        "categories": {
            code: {"name": code, "guidance": dict(GENERIC_GUIDANCE)}
            for code in MAJOR_CATEGORIES
        },
        "subcategories": {},
    }


def write_library(tmp_path, doc):
    path = tmp_path / "library.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def prediction(probability=0.9, threshold=0.5):
    return ModelPrediction(probability=probability, model_id="test", threshold=threshold)


def ranked(entries, dominant=None):
    return RankedCategories(entries=tuple(entries), dominant_cwe=dominant or {})


class TestLoadLibrary:
    def test_default_library_has_six_majors(self):
        library = load_library()
        assert library.majors == MAJOR_CATEGORIES

    def test_missing_major_rejected(self, tmp_path):
        doc = minimal_library_doc()
        del doc["categories"]["UNT"]
        with pytest.raises(TaxonomyError, match="UNT"):
            load_library(write_library(tmp_path, doc))

    def test_subcategory_inherits_parent_guidance(self, tmp_path):
        doc = minimal_library_doc()
        doc["subcategories"]["MEM-416"] = {
            "name": "Use After Free", "parent": "MEM", "cwe_ids": [416], "guidance": None,
        }
        library = load_library(write_library(tmp_path, doc))
        sub = library.node("MEM-416")
        parent = library.node("MEM")
        for step in GUIDANCE_STEPS:
            assert getattr(sub.guidance, step) == getattr(parent.guidance, step)
        assert sub.guidance.source == "MEM-416"

    def test_orphan_subcategory_named(self, tmp_path):
        doc = minimal_library_doc()
        doc["subcategories"]["XXX-1"] = {
            "name": "Orphan", "parent": "NOPE", "cwe_ids": [1], "guidance": None,
        }
        with pytest.raises(TaxonomyError, match="XXX-1"):
            load_library(write_library(tmp_path, doc))

    def test_unknown_placeholder_rejected_at_load(self, tmp_path):
        doc = minimal_library_doc()
        doc["categories"]["MEM"]["guidance"]["logic"] = "Uses {bogus} placeholder."
        with pytest.raises(TaxonomyError, match="bogus"):
            load_library(write_library(tmp_path, doc))

    def test_missing_step_rejected(self, tmp_path):
        doc = minimal_library_doc()
        del doc["categories"]["LOG"]["guidance"]["chain"]
        with pytest.raises(TaxonomyError, match="chain"):
            load_library(write_library(tmp_path, doc))

    def test_default_subcategories_carry_cwe_ids(self):
        library = load_library()
        node = library.node_for_cwe(476)
        assert node is not None
        assert node.parent == "IDN"


class TestQueryKey:
    def test_canonical_serialization(self):
        key = build_query_key(ranked([("MEM", 8.0), ("IDN", 5.0)]), prediction(0.9))
        payload = json.loads(key.serialize())
        assert payload["categories"] == ["MEM", "IDN"]
        assert payload["dl"] == "vulnerable"

    def test_empty_ranking_benign(self):
        key = build_query_key(ranked([]), prediction(0.2))
        payload = json.loads(key.serialize())
        assert payload["categories"] == []
        assert payload["dl"] == "benign"

    def test_serialization_deterministic(self):
        a = build_query_key(ranked([("MEM", 8.0)], {"MEM": 120}), prediction(0.7))
        b = build_query_key(ranked([("MEM", 8.0)], {"MEM": 120}), prediction(0.7))
        assert a.serialize() == b.serialize()
        assert a.serialize().encode("utf-8") == b.serialize().encode("utf-8")


class TestRetrieveGuidance:
    def test_null_pointer_subcategory_refinement(self):
        library = load_library()
        key = build_query_key(ranked([("IDN", 5.0)], {"IDN": 476}), prediction(0.9))
        guidance = retrieve_guidance(library, key)
        assert guidance.source == "IDN-476"
        assert guidance is not library.node("IDN").guidance

    def test_empty_ranking_falls_to_unt(self):
        library = load_library()
        key = build_query_key(ranked([]), prediction(0.1))
        assert retrieve_guidance(library, key).source == "UNT"

    def test_unknown_category_falls_through(self):
        library = load_library()
        key = build_query_key(ranked([("ZZZ", 9.0), ("MEM", 3.0)]), prediction(0.9))
        assert retrieve_guidance(library, key).source == "MEM"

    def test_unknown_category_alone_falls_to_unt(self):
        library = load_library()
        key = build_query_key(ranked([("ZZZ", 9.0)]), prediction(0.9))
        assert retrieve_guidance(library, key).source == "UNT"

    def test_hint_without_subcategory_uses_major(self):
        library = load_library()
        key = build_query_key(ranked([("MEM", 4.0)], {"MEM": 9999}), prediction(0.9))
        assert retrieve_guidance(library, key).source == "MEM"

    def test_lookup_is_pure(self):
        library = load_library()
        key = build_query_key(ranked([("NUM", 2.0)], {"NUM": 190}), prediction(0.6))
        first = retrieve_guidance(library, key)
        nodes_before = set(library.nodes)
        second = retrieve_guidance(library, key)
        assert first == second
        assert set(library.nodes) == nodes_before

    @given(
        codes=st.lists(
            st.sampled_from(list(MAJOR_CATEGORIES) + ["FAKE", "ZZZ"]),
            min_size=0, max_size=4, unique=True,
        ),
        probability=st.floats(0.0, 1.0),
        cwe=st.one_of(st.none(), st.integers(1, 1000)),
    )
    @settings(max_examples=80, deadline=None)
    def test_totality(self, codes, probability, cwe):
        library = load_library()
        entries = [(code, float(10 - i)) for i, code in enumerate(codes)]
        dominant = {codes[0]: cwe} if codes and cwe is not None else {}
        key = build_query_key(ranked(entries, dominant), prediction(probability))
        guidance = retrieve_guidance(library, key)
        assert guidance is not None
        for step in GUIDANCE_STEPS:
            assert getattr(guidance, step)


def test_mapping_table_resolves_against_library():
    # Every CWE in the mapping lands on a node: a CWE-keyed subcategory or
    # the mapped major itself.
    library = load_library()
    mapping = load_category_map()
    for cwe_text, category in mapping["cwe_to_category"].items():
        sub = library.node_for_cwe(int(cwe_text))
        assert sub is not None or library.node(category) is not None
        if sub is not None and category in MAJOR_CATEGORIES:
            assert sub.parent == category or sub.code == category
    for rule, category in mapping["rule_to_category"].items():
        assert library.node(category) is not None, rule
