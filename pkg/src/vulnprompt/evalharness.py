"""End-to-end run orchestration, classifier metrics, and report rendering.

A run follows one fixed path per test sample: similar-code retrieval feeds the
ICL block, static findings plus the model verdict select guidance for the COT
block, the assembled prompt goes to the LLM, and the parsed verdicts aggregate
into precision/recall/F1/FPR/MCC. Zero-denominator conventions are explicit
(metrics report 0 with a note; CV raises) and surfaced in reports.
"""

from __future__ import annotations

import concurrent.futures
import contextlib
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import corpus as corpus_mod
from .corpus import FunctionRecord
from .llmclient import (
    LlmClient,
    LlmConfig,
    MockTransport,
    RetryPolicy,
    parse_verdict,
    prompt_hash,
)
from .modelplug import (
    Provider,
    ProviderConfig,
    BuiltinProvider,
    TrainConfig,
    provider_from_config,
    train_builtin,
)
from .promptgen import (
    assemble_composite,
    assemble_icl,
    complete_cot,
    render_baseline,
    summarize_dataflow,
)
from .simindex import IndexParams, build_index
from .staticscan import StaticFinding, findings_from_jsonl, load_category_map, map_to_taxonomy, top_k
from .taxonomy import build_query_key, load_library, retrieve_guidance

PROMPT_MODES = ("composite", "role", "auxiliary", "cot2step")


class MetricsError(ValueError):
    """Raised for undefined metrics or misaligned inputs."""


class PipelineError(RuntimeError):
    """Carries the failing sample id and stage."""

    def __init__(self, sample_id: str, stage: str, cause: Exception) -> None:
        super().__init__(f"sample {sample_id!r}: stage {stage!r} failed: {cause}")
        self.sample_id = sample_id
        self.stage = stage
        self.cause = cause


# --- confusion counts and metrics ------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricsError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    fpr: float
    mcc: float
    counts: ConfusionCounts
    unparseable: int = 0
    notes: tuple[str, ...] = ()


def confusion(
    decisions: Sequence[str], labels: Sequence[int], unparseable_policy: str = "no"
) -> ConfusionCounts:
    """Count outcomes with vulnerable (label 1) as the positive class.

    Unparseable verdicts map to the given policy decision before counting.
    """
    if len(decisions) != len(labels):
        raise MetricsError(f"{len(decisions)} decisions vs {len(labels)} labels")
    if unparseable_policy not in ("yes", "no"):
        raise MetricsError(f"unparseable policy must be 'yes' or 'no', got {unparseable_policy!r}")
    tp = fp = tn = fn = 0
    for decision, label in zip(decisions, labels):
        effective = unparseable_policy if decision == "unparseable" else decision
        if effective == "yes":
            if label == 1:
                tp += 1
            else:
                fp += 1
        elif effective == "no":
            if label == 1:
                fn += 1
            else:
                tn += 1
        else:
            raise MetricsError(f"unknown decision {decision!r}")
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def fpr(c: ConfusionCounts) -> float:
    """False positive rate FP/(FP+TN); 0 when that denominator is empty."""
    denom = c.fp + c.tn
    return c.fp / denom if denom else 0.0


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    product = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if product == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(product)


def precision_recall_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) else 0.0
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return precision, recall, f1


def cv(series: Sequence[float]) -> float:
    """Coefficient of variation: population standard deviation over mean."""
    if not series:
        raise MetricsError("CV is undefined for an empty series")
    mean = sum(series) / len(series)
    if mean <= 0:
        raise MetricsError(f"CV is undefined for mean {mean}")
    variance = sum((x - mean) ** 2 for x in series) / len(series)
    return math.sqrt(variance) / mean


def metrics_from_confusion(c: ConfusionCounts, unparseable: int = 0) -> MetricsReport:
    notes = []
    if c.fp + c.tn == 0:
        notes.append("fpr: empty denominator, reported 0 by convention")
    if (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn) == 0:
        notes.append("mcc: empty marginal, reported 0 by convention")
    if c.tp + c.fp == 0:
        notes.append("precision: empty denominator, reported 0 by convention")
    if c.tp + c.fn == 0:
        notes.append("recall: empty denominator, reported 0 by convention")
    p, r, f1_value = precision_recall_f1(c)
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f1_value,
        fpr=fpr(c),
        mcc=mcc(c),
        counts=c,
        unparseable=unparseable,
        notes=tuple(notes),
    )


# --- run configuration -------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    corpus_path: str
    provider: ProviderConfig
    llm: LlmConfig = field(default_factory=LlmConfig)
    prompt_mode: str = "composite"
    seed: int = 0
    train_fraction: float = 0.8
    undersample_ratio: float | None = None
    index: IndexParams = field(default_factory=IndexParams)
    icl_size: int = 3
    top_k_categories: int = 2
    token_budget: int | None = None
    library_path: str | None = None
    category_map_path: str | None = None
    findings_path: str | None = None
    function_map_path: str | None = None
    unparseable_policy: str = "no"
    mock_policy: str = "script"  # script | echo-provider
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if self.prompt_mode not in PROMPT_MODES:
            raise MetricsError(f"unknown prompt mode {self.prompt_mode!r}")
        if self.mock_policy not in ("script", "echo-provider"):
            raise MetricsError(f"unknown mock policy {self.mock_policy!r}")


def run_config_from_json(path: str | Path) -> RunConfig:
    """Build a RunConfig from the single run-config JSON file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    provider = ProviderConfig(**doc["provider"])
    llm_doc = dict(doc.get("llm", {}))
    if "retry" in llm_doc:
        llm_doc["retry"] = RetryPolicy(**llm_doc["retry"])
    llm = LlmConfig(**llm_doc)
    index = IndexParams(**doc.get("index", {}))
    fields = {
        k: doc[k]
        for k in (
            "corpus_path", "prompt_mode", "seed", "train_fraction", "undersample_ratio",
            "icl_size", "top_k_categories", "token_budget", "library_path",
            "category_map_path", "findings_path", "function_map_path",
            "unparseable_policy", "mock_policy", "output_dir",
        )
        if k in doc
    }
    return RunConfig(provider=provider, llm=llm, index=index, **fields)


# --- findings association ------------------------------------------------------------


def load_function_map(path: str | Path) -> list[dict]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(json.loads(line))
    return entries


def findings_for_function(
    record: FunctionRecord,
    findings: Sequence[StaticFinding],
    function_map: Sequence[Mapping] | None,
) -> list[StaticFinding]:
    """Associate findings with one function.

    With a function map (file plus optional line range per function id),
    association is per function; without one it falls back to nothing,
    since records carry no file path of their own.
    """
    if not findings or not function_map:
        return []
    rows = [m for m in function_map if m.get("function_id") == record.id]
    selected: list[StaticFinding] = []
    for row in rows:
        start = row.get("start_line")
        end = row.get("end_line")
        for f in findings:
            if f.file != row.get("file"):
                continue
            if start is not None and f.line < start:
                continue
            if end is not None and f.line > end:
                continue
            selected.append(f)
    return selected


# --- pipeline ---------------------------------------------------------------------


@dataclass
class SampleResult:
    id: str
    project: str
    label: int
    framework: str
    prompt_sha256: str
    provider_probability: float
    provider_verdict: int
    decision: str
    explanation: str
    response_text: str
    attempts: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)


@dataclass
class RunResult:
    samples: list[SampleResult]
    report: MetricsReport
    by_project: dict[str, MetricsReport]
    manifest: dict


def _sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextlib.contextmanager
def _stage(sample_id: str, stage: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(sample_id, stage, exc) from exc


def run_pipeline(config: RunConfig) -> RunResult:
    """Execute one full run and return per-sample results, metrics, manifest."""
    started = time.time()
    full = corpus_mod.load_corpus(config.corpus_path)
    working = (
        corpus_mod.undersample(full, ratio=config.undersample_ratio, seed=config.seed)
        if config.undersample_ratio is not None
        else full
    )
    data_split = corpus_mod.split(working, train_fraction=config.train_fraction, seed=config.seed)

    if config.provider.kind == "builtin" and config.provider.location == "auto":
        classifier = train_builtin(data_split.train, TrainConfig(seed=config.seed))
        provider: Provider = BuiltinProvider(classifier, threshold=config.provider.threshold)
    else:
        provider = provider_from_config(config.provider)

    index = build_index(
        ((rec.id, rec.source) for rec in data_split.train), params=config.index
    )
    library = load_library(config.library_path)
    category_map = load_category_map(config.category_map_path)
    findings = (
        findings_from_jsonl(Path(config.findings_path).read_text(encoding="utf-8"))
        if config.findings_path
        else []
    )
    function_map = (
        load_function_map(config.function_map_path) if config.function_map_path else None
    )

    client = LlmClient(config.llm)
    echo = config.llm.transport == "mock" and config.mock_policy == "echo-provider"
    if echo and not isinstance(client.transport, MockTransport):
        raise MetricsError("echo-provider mock policy requires the mock transport")

    train_by_id = {rec.id: rec for rec in data_split.train}

    def process(target: FunctionRecord) -> tuple[SampleResult, tuple[str, ...]]:
        with _stage(target.id, "predict"):
            target_prediction = provider.predict(target)

        icl_block = None
        cot_block = None
        if config.prompt_mode == "composite":
            with _stage(target.id, "retrieve"):
                hits = index.query(target.source, m=config.icl_size)
                candidates = [(train_by_id[hit_id], sim) for hit_id, sim in hits]
            with _stage(target.id, "candidate-predict"):
                candidate_predictions = provider.predict_batch([rec for rec, _ in candidates])
            with _stage(target.id, "assemble-icl"):
                icl_block = assemble_icl(
                    candidates,
                    candidate_predictions,
                    m=config.icl_size,
                    target_id=target.id,
                    token_budget=config.token_budget,
                )
            with _stage(target.id, "guidance"):
                sample_findings = findings_for_function(target, findings, function_map)
                scores = map_to_taxonomy(sample_findings, mapping=category_map)
                ranked = top_k(scores, k=config.top_k_categories)
                key = build_query_key(ranked, target_prediction)
                guidance = retrieve_guidance(library, key)
            with _stage(target.id, "assemble-cot"):
                cot_block = complete_cot(guidance, target, key)
            with _stage(target.id, "assemble"):
                prompt = assemble_composite(icl_block, cot_block, target)
                prompts = (prompt.text,)
        else:
            with _stage(target.id, "assemble"):
                aux = (
                    summarize_dataflow(target.source)
                    if config.prompt_mode == "auxiliary"
                    else None
                )
                prompts = render_baseline(config.prompt_mode, target, aux=aux)

        with _stage(target.id, "detect"):
            if echo:
                assert isinstance(client.transport, MockTransport)
                echo_text = "Yes" if target_prediction.verdict else "No"
                for p in prompts:
                    client.transport.responses[prompt_hash(p)] = echo_text
            if len(prompts) == 1:
                response = client.detect(prompts[0])
            else:
                response = client.detect_dialogue(prompts)[-1]
        with _stage(target.id, "parse"):
            verdict = parse_verdict(response)

        return SampleResult(
            id=target.id,
            project=target.project,
            label=target.label,
            framework=config.prompt_mode,
            prompt_sha256=prompt_hash("\x00".join(prompts)),
            provider_probability=target_prediction.probability,
            provider_verdict=target_prediction.verdict,
            decision=verdict.decision,
            explanation=verdict.explanation,
            response_text=response.text,
            attempts=response.attempts,
        ), prompts

    ordered_targets = sorted(data_split.test, key=lambda rec: rec.id)
    results: dict[str, SampleResult] = {}
    prompt_texts: dict[str, tuple[str, ...]] = {}
    workers = max(1, config.llm.max_in_flight)
    if workers == 1:
        for target in ordered_targets:
            sample, prompts = process(target)
            results[target.id] = sample
            prompt_texts[target.id] = prompts
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(process, t): t.id for t in ordered_targets}
            for future in concurrent.futures.as_completed(futures):
                sample, prompts = future.result()
                results[futures[future]] = sample
                prompt_texts[futures[future]] = prompts

    ordered = [results[t.id] for t in ordered_targets]
    decisions = [s.decision for s in ordered]
    labels = [s.label for s in ordered]
    unparseable_count = sum(1 for d in decisions if d == "unparseable")
    counts = confusion(decisions, labels, unparseable_policy=config.unparseable_policy)
    report = metrics_from_confusion(counts, unparseable=unparseable_count)

    by_project: dict[str, MetricsReport] = {}
    for project in sorted({s.project for s in ordered}):
        proj = [s for s in ordered if s.project == project]
        proj_counts = confusion(
            [s.decision for s in proj],
            [s.label for s in proj],
            unparseable_policy=config.unparseable_policy,
        )
        by_project[project] = metrics_from_confusion(
            proj_counts, unparseable=sum(1 for s in proj if s.decision == "unparseable")
        )

    probabilities = [s.provider_probability for s in ordered]
    provider_cv = None
    if probabilities and sum(probabilities) > 0:
        provider_cv = cv(probabilities)

    manifest = {
        "config": _config_snapshot(config),
        "seed": config.seed,
        "corpus_sha256": _sha256_file(config.corpus_path),
        "provider_id": provider.model_id,
        "prompt_mode": config.prompt_mode,
        "library_version": library.version,
        "test_size": len(ordered),
        "train_size": len(data_split.train),
        "unparseable": unparseable_count,
        "provider_cv": provider_cv,
        "started_at": started,
        "finished_at": time.time(),
    }

    if config.output_dir:
        _write_outputs(Path(config.output_dir), ordered, prompt_texts, manifest)

    return RunResult(samples=ordered, report=report, by_project=by_project, manifest=manifest)


def _config_snapshot(config: RunConfig) -> dict:
    snapshot = asdict(config)
    return snapshot


def _write_outputs(
    out_dir: Path,
    samples: Sequence[SampleResult],
    prompt_texts: Mapping[str, tuple[str, ...]],
    manifest: Mapping,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "results.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            fh.write(sample.to_json() + "\n")
    prompts_dir = out_dir / "prompts"
    prompts_dir.mkdir(exist_ok=True)
    for sample in samples:
        texts = prompt_texts[sample.id]
        body = texts[0] if len(texts) == 1 else "\n\n--- turn break ---\n\n".join(texts)
        (prompts_dir / f"{sample.id}.txt").write_text(body + "\n", encoding="utf-8", newline="\n")
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def load_results(path: str | Path) -> list[SampleResult]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            samples.append(SampleResult(**json.loads(line)))
    return samples


def rescore(samples: Sequence[SampleResult], unparseable_policy: str = "no") -> list[tuple[str, str, MetricsReport]]:
    """Group stored per-sample results by (framework, project) and recompute
    metrics under the given unparseable policy, without re-querying anything."""
    rows: list[tuple[str, str, MetricsReport]] = []
    groups = sorted({(s.framework, s.project) for s in samples})
    for framework, project in groups:
        members = [s for s in samples if s.framework == framework and s.project == project]
        counts = confusion(
            [s.decision for s in members],
            [s.label for s in members],
            unparseable_policy=unparseable_policy,
        )
        rows.append(
            (
                framework,
                project,
                metrics_from_confusion(
                    counts, unparseable=sum(1 for s in members if s.decision == "unparseable")
                ),
            )
        )
    return rows


# --- reports -----------------------------------------------------------------------

REPORT_COLUMNS = (
    "framework",
    "project",
    "precision_pct",
    "recall_pct",
    "f1_pct",
    "fpr_pct",
    "mcc_pct",
    "unparseable_count",
)


def _pct(value: float) -> str:
    return f"{value * 100:.1f}"


def emit_report(rows: Sequence[tuple[str, str, MetricsReport]], format: str = "markdown") -> str:
    """Render metric rows, one per (framework, project), in the fixed column
    order: precision, recall, F1, FPR, MCC (percent, one decimal)."""
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for framework, project, report in rows:
            lines.append(
                ",".join(
                    [
                        framework,
                        project,
                        _pct(report.precision),
                        _pct(report.recall),
                        _pct(report.f1),
                        _pct(report.fpr),
                        _pct(report.mcc),
                        str(report.unparseable),
                    ]
                )
            )
        return "\n".join(lines) + "\n"
    if format == "markdown":
        lines = [
            "| Framework | Project | P_vul | R_vul | F1 | FPR | MCC | Unparseable |",
            "|---|---|---|---|---|---|---|---|",
        ]
        notes: list[str] = []
        for framework, project, report in rows:
            lines.append(
                f"| {framework} | {project} | {_pct(report.precision)} | {_pct(report.recall)} "
                f"| {_pct(report.f1)} | {_pct(report.fpr)} | {_pct(report.mcc)} "
                f"| {report.unparseable} |"
            )
            notes.extend(f"{framework}/{project}: {n}" for n in report.notes)
        if notes:
            lines.append("")
            lines.extend(f"- {n}" for n in notes)
        return "\n".join(lines) + "\n"
    raise MetricsError(f"unknown report format {format!r}")
