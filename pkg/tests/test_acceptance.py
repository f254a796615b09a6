"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with: pytest tests/test_acceptance.py -v -s
"""

import math
import random
import re
import time
from contextlib import contextmanager

import pytest

from vulnprompt import corpus as corpus_mod
from vulnprompt.corpus import Corpus, FunctionRecord, save_corpus
from vulnprompt.evalharness import (
    ConfusionCounts,
    MetricsError,
    RunConfig,
    confusion,
    cv,
    fpr,
    mcc,
    metrics_from_confusion,
    precision_recall_f1,
    run_pipeline,
)
from vulnprompt.llmclient import LlmConfig
from vulnprompt.modelplug import BuiltinProvider, ProviderConfig, TrainConfig, train_builtin
from vulnprompt.promptgen import (
    AUXILIARY_TEMPLATE,
    COT2STEP_TEMPLATES,
    COT_SECTION_MARKER,
    ICL_SECTION_MARKER,
    ROLE_TEMPLATE,
)
from vulnprompt.simindex import (
    TokenShingleSet,
    build_index,
    estimate_jaccard,
    exact_jaccard,
    minhash,
)
from vulnprompt.staticscan import map_to_taxonomy, parse_cppcheck, parse_flawfinder
from vulnprompt.synthetic import make_corpus

from .conftest import GOLDENS, FIXTURES


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] {name}")
        raise
    print(f"\n[PASS] {name}")


_WORDS = [
    "count", "buffer", "input", "size", "total", "index", "value", "offset",
    "limit", "sum", "data", "ptr", "len", "tmp", "result", "flag", "mask",
]


def _random_function(rng, n_statements=12, name="fn"):
    lines = [f"int {name}(int a, int b) {{"]
    for _ in range(n_statements):
        v1, v2 = rng.choice(_WORDS), rng.choice(_WORDS)
        op = rng.choice(["+", "-", "*", "%"])
        lines.append(
            f"    int {v1}_{rng.randint(0, 99)} = {v2} {op} {rng.choice(_WORDS)} {op} {rng.randint(1, 999)};"
        )
    lines.append("    return a + b;")
    lines.append("}")
    return "\n".join(lines)


def test_metric_oracle_suite():
    with criterion("metric oracle suite: 1000 random matrices within 1e-12, < 5 s"):
        rng = random.Random(20240501)
        start = time.perf_counter()
        for _ in range(1000):
            tp, fp, tn, fn = (rng.randint(0, 2000) for _ in range(4))
            c = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
            # independent brute-force evaluation of the published formulas
            expected_fpr = fp / (fp + tn) if fp + tn else 0.0
            denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
            expected_mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
            expected_p = tp / (tp + fp) if tp + fp else 0.0
            expected_r = tp / (tp + fn) if tp + fn else 0.0
            expected_f1 = (
                2 * expected_p * expected_r / (expected_p + expected_r)
                if expected_p + expected_r
                else 0.0
            )
            p, r, f1 = precision_recall_f1(c)
            assert abs(fpr(c) - expected_fpr) <= 1e-12
            assert abs(mcc(c) - expected_mcc) <= 1e-12
            assert abs(p - expected_p) <= 1e-12
            assert abs(r - expected_r) <= 1e-12
            assert abs(f1 - expected_f1) <= 1e-12
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"metric oracle suite took {elapsed:.2f}s"


def test_mcc_anchor_values():
    with criterion("MCC anchors: perfect=1.0, balanced=0.0, {3,1,2,4}=0.4082"):
        assert mcc(ConfusionCounts(tp=5, tn=5, fp=0, fn=0)) == 1.0
        assert mcc(ConfusionCounts(tp=1, fp=1, tn=1, fn=1)) == 0.0
        assert abs(mcc(ConfusionCounts(tp=3, fp=1, fn=2, tn=4)) - 0.4082) <= 1e-4


def test_cv_anchors():
    with criterion("CV anchors: [2,2,2]=0, [0,1]=1.0, zero mean errors"):
        assert cv([2, 2, 2]) == 0.0
        assert cv([0, 1]) == 1.0
        with pytest.raises(MetricsError):
            cv([0, 0])


def test_minhash_fidelity():
    with criterion("MinHash fidelity: >=95/100 pairs within 0.1 of exact Jaccard, < 10 s"):
        rng = random.Random(7)
        start = time.perf_counter()
        within = 0
        for pair in range(100):
            base = _random_function(rng, n_statements=18, name=f"fn{pair}")
            lines = base.splitlines()
            for idx in rng.sample(range(1, len(lines) - 2), rng.randint(0, 12)):
                lines[idx] = f"    int mut_{idx} = value % {rng.randint(2, 50)};"
            variant = "\n".join(lines)
            a = TokenShingleSet.from_source(base)
            b = TokenShingleSet.from_source(variant)
            exact = exact_jaccard(a, b)  # brute-force set-intersection oracle
            estimate = estimate_jaccard(minhash(a, 256, 0), minhash(b, 256, 0))
            if abs(estimate - exact) <= 0.1:
                within += 1
        elapsed = time.perf_counter() - start
        assert within >= 95, f"only {within}/100 pairs within 0.1"
        assert elapsed < 10.0, f"fidelity check took {elapsed:.2f}s"


def test_lsh_self_retrieval():
    with criterion("LSH self-retrieval: exact duplicate ranks first at 1.0, 100 corpora"):
        rng = random.Random(99)
        for corpus_no in range(100):
            entries = [
                (f"c{corpus_no}_e{i}", _random_function(rng, name=f"fn{corpus_no}_{i}"))
                for i in range(50)
            ]
            index = build_index(entries)
            for entry_id, source in rng.sample(entries, 5):
                results = index.query(source, m=3)
                assert results, f"no candidates for duplicate of {entry_id}"
                assert results[0] == (entry_id, 1.0), (
                    f"duplicate of {entry_id} ranked {results[:2]}"
                )


def test_parser_fixtures():
    with criterion("parser fixtures: exact finding lists; nullPointer -> IDN"):
        ff = parse_flawfinder((FIXTURES / "flawfinder_sample.csv").read_text(encoding="utf-8"))
        assert [(f.rule_id, f.severity, f.cwe, f.file, f.line) for f in ff] == [
            ("strcpy", 4, 120, "src/net.c", 42),
            ("strcpy", 4, 120, "src/net.c", 57),
            ("printf", 4, 134, "src/fmt.c", 13),
            ("random", 3, 327, "src/rand.c", 9),
            ("strlen", 1, 126, "src/misc.c", 81),
        ]
        cc = parse_cppcheck((FIXTURES / "cppcheck_sample.xml").read_text(encoding="utf-8"))
        assert [(f.rule_id, f.severity, f.cwe) for f in cc] == [
            ("nullPointer", 5, 476),
            ("uninitvar", 5, 457),
            ("arrayIndexOutOfBounds", 5, 788),
            ("unreadVariable", 1, 563),
            ("redundantCondition", 3, None),
        ]
        null_pointer = [f for f in cc if f.rule_id == "nullPointer"]
        scores = map_to_taxonomy(null_pointer)
        assert scores.score("IDN") == 5
        assert scores.score("MEM") == 0


def test_dataset_prep():
    with criterion("dataset prep: undersample equalizes; split 8:2 stratified, deterministic"):
        records = tuple(
            FunctionRecord(id=f"v{i}", project="p", source=f"int f{i}() {{ return {i}; }}", label=1)
            for i in range(10)
        ) + tuple(
            FunctionRecord(id=f"b{i}", project="p", source=f"int g{i}() {{ return {i}; }}", label=0)
            for i in range(40)
        )
        corpus = Corpus(records=records)

        balanced = corpus_mod.undersample(corpus, ratio=1.0, seed=11)
        counts = balanced.label_counts()
        assert counts[0] == counts[1] == 10

        ds = corpus_mod.split(balanced, train_fraction=0.8, seed=11)
        assert abs(len(ds.train) - 16) <= 1
        assert abs(len(ds.test) - 4) <= 1
        for label in (0, 1):
            in_train = sum(1 for r in ds.train if r.label == label)
            assert abs(in_train - 8) <= 1

        again = corpus_mod.split(
            corpus_mod.undersample(corpus, ratio=1.0, seed=11), train_fraction=0.8, seed=11
        )
        assert [r.id for r in again.train] == [r.id for r in ds.train]
        assert [r.id for r in again.test] == [r.id for r in ds.test]


def _synthetic_run_config(tmp_path, out_name):
    corpus_path = tmp_path / "acceptance_corpus.jsonl"
    if not corpus_path.exists():
        save_corpus(make_corpus(seed=0), corpus_path)
    return RunConfig(
        corpus_path=str(corpus_path),
        provider=ProviderConfig(kind="builtin", location="auto"),
        llm=LlmConfig(transport="mock", max_in_flight=1),
        mock_policy="echo-provider",
        seed=0,
        icl_size=3,
        output_dir=str(tmp_path / out_name),
    )


def test_prompt_structure_goldens(tmp_path):
    with criterion("prompt structure: 1 ICL section (3 pairs) + 1 COT section (5 steps); byte-stable"):
        config_a = _synthetic_run_config(tmp_path, "run_a")
        result = run_pipeline(config_a)
        assert len(result.samples) == 10

        prompts_dir = tmp_path / "run_a" / "prompts"
        prompt_files = sorted(prompts_dir.glob("*.txt"))
        assert len(prompt_files) == 10
        for path in prompt_files:
            text = path.read_text(encoding="utf-8")
            assert text.count(ICL_SECTION_MARKER) == 1
            assert text.count(COT_SECTION_MARKER) == 1
            assert text.count("Q: Is the following program buggy?") == 3
            assert len(re.findall(r"A: Detection probability: \d\.\d\d", text)) == 3
            for step_no, heading in enumerate(
                ["Semantics", "Logic", "Internal risks", "External risks", "Chain"], start=1
            ):
                assert f"Step {step_no} - {heading}:" in text

        config_b = _synthetic_run_config(tmp_path, "run_b")
        run_pipeline(config_b)
        for path in prompt_files:
            twin = tmp_path / "run_b" / "prompts" / path.name
            assert path.read_bytes() == twin.read_bytes(), f"{path.name} differs between runs"


def test_baseline_fidelity_goldens():
    with criterion("baseline templates match goldens character-for-character"):
        role_golden = (GOLDENS / "baseline_role.txt").read_text(encoding="utf-8").rstrip("\n")
        aux_golden = (GOLDENS / "baseline_auxiliary.txt").read_text(encoding="utf-8").rstrip("\n")
        cot1_golden = (GOLDENS / "baseline_cot2step_1.txt").read_text(encoding="utf-8").rstrip("\n")
        cot2_golden = (GOLDENS / "baseline_cot2step_2.txt").read_text(encoding="utf-8").rstrip("\n")
        assert ROLE_TEMPLATE == role_golden
        assert AUXILIARY_TEMPLATE == aux_golden
        assert COT2STEP_TEMPLATES[0] == cot1_golden
        assert COT2STEP_TEMPLATES[1] == cot2_golden


def test_pipeline_consistency(tmp_path):
    with criterion("pipeline consistency: echo-mock metrics equal provider metrics exactly"):
        config = _synthetic_run_config(tmp_path, "run_consistency")
        result = run_pipeline(config)

        full = corpus_mod.load_corpus(config.corpus_path)
        ds = corpus_mod.split(full, train_fraction=0.8, seed=0)
        provider = BuiltinProvider(train_builtin(ds.train, TrainConfig(seed=0)))
        targets = sorted(ds.test, key=lambda r: r.id)
        decisions = ["yes" if provider.predict(t).verdict else "no" for t in targets]
        expected = metrics_from_confusion(confusion(decisions, [t.label for t in targets]))

        assert result.report.precision == expected.precision
        assert result.report.recall == expected.recall
        assert result.report.f1 == expected.f1
        assert result.report.fpr == expected.fpr
        assert result.report.mcc == expected.mcc
        assert result.report.counts == expected.counts
