"""Prompt assembly: in-context example blocks, guided-step completion,
composite two-part prompts, and the three comparison baselines.

The composite prompt is laid out in a fixed order — reference examples,
analysis steps, target code, answer instruction — so byte-stable output only
depends on the inputs. Baseline templates are frozen strings; their wording is
load-bearing for comparison runs and must not drift.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .corpus import FunctionRecord
from .modelplug import ModelPrediction
from .taxonomy import CotGuidance, QueryKey

ICL_SECTION_MARKER = "=== Reference examples ==="
COT_SECTION_MARKER = "=== Analysis steps ==="
TARGET_SECTION_MARKER = "=== Target code ==="

ANSWER_INSTRUCTION = (
    "Please answer Yes or No. Give the answer as the first word, then explain "
    "the decisive reason in one or two sentences."
)

STEP_HEADINGS = {
    "semantics": "Semantics",
    "logic": "Logic",
    "internal_risks": "Internal risks",
    "external_risks": "External risks",
    "chain": "Chain",
}

BASELINE_KINDS = ("role", "auxiliary", "cot2step")

ROLE_TEMPLATE = (
    "I want you to act as a Vulnerability Detection System. "
    "My first request is “Is the following program buggy?” "
    "Please answer Yes or No. [CODE]"
)

AUXILIARY_TEMPLATE = (
    "I want you to act as a vulnerability detection system. "
    "I will provide you with the original program and the data flow information, "
    "and you will act upon them. Is the following program buggy? [CODE], [DF description]."
)

COT2STEP_TEMPLATES = (
    "Please describe the intent of the given code. [CODE].",
    "I want you to act as a vulnerability detection system. "
    "Is the above program buggy? Please answer Yes or No",
)


class PromptError(ValueError):
    """Raised for misaligned or mismatched prompt inputs."""


def estimate_tokens(text: str) -> int:
    """Crude budget estimate: one token per ~4 characters."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class IclBlock:
    """Question/answer pairs of similar code and its detection probability."""

    pairs: tuple[tuple[str, float, float], ...]  # (code, probability, similarity)
    header: str
    target_id: str | None = None

    def render(self) -> str:
        parts = [ICL_SECTION_MARKER, self.header]
        for code, probability, _similarity in self.pairs:
            parts.append(f"Q: Is the following program buggy?\n{code}")
            parts.append(f"A: Detection probability: {probability:.2f}")
        return "\n".join(parts)


@dataclass(frozen=True)
class CotBlock:
    """Five rendered analysis steps plus the guidance node they came from."""

    steps: tuple[tuple[str, str], ...]  # (heading, text), fixed order
    source: str
    target_id: str | None = None

    def render(self) -> str:
        parts = [COT_SECTION_MARKER, "Analyze the target code below in these steps:"]
        for i, (heading, text) in enumerate(self.steps, start=1):
            parts.append(f"Step {i} - {heading}: {text}")
        return "\n".join(parts)


@dataclass(frozen=True)
class CompositePrompt:
    """Assembled two-part prompt: examples, steps, target, instruction."""

    icl: IclBlock
    cot: CotBlock
    target_id: str
    text: str
    token_estimate: int


def assemble_icl(
    candidates: Sequence[tuple[FunctionRecord, float]],
    predictions: Sequence[ModelPrediction],
    m: int = 3,
    target_id: str | None = None,
    token_budget: int | None = None,
) -> IclBlock:
    """Pair the top-m candidates with their detection probabilities.

    Pairs keep descending-similarity order. A token budget, when set, drops
    the longest candidate code first until the block fits.
    """
    if m < 1:
        raise PromptError(f"ICL size m must be >= 1, got {m}")
    if len(candidates) != len(predictions):
        raise PromptError(
            f"candidates and predictions misaligned: {len(candidates)} vs {len(predictions)}"
        )
    paired = [
        (record.source, prediction.probability, similarity)
        for (record, similarity), prediction in zip(candidates, predictions)
    ]
    paired.sort(key=lambda item: -item[2])
    paired = paired[:m]

    if token_budget is not None:
        while paired and sum(estimate_tokens(code) for code, _, _ in paired) > token_budget:
            longest = max(range(len(paired)), key=lambda i: len(paired[i][0]))
            paired.pop(longest)

    header = (
        "Here are similar functions from the project history with the detection "
        "model's probability that each is vulnerable (most similar first):"
        if paired
        else "No similar reference examples were found in the project history."
    )
    return IclBlock(pairs=tuple(paired), header=header, target_id=target_id)


class CotCompleter(Protocol):
    def complete(self, rendered_steps: tuple[tuple[str, str], ...], target: FunctionRecord) -> (
        tuple[tuple[str, str], ...]
    ): ...


class OfflineCompleter:
    """Pure placeholder substitution; the default, deterministic path."""

    def complete(self, rendered_steps, target):
        return rendered_steps


class LlmCompleter:
    """One LLM round trip expands the guidance into a concrete chain.

    The completion must preserve all five step headings; one retry, then
    fall back to the offline rendering.
    """

    def __init__(self, complete_text: Callable[[str], str]) -> None:
        self._complete_text = complete_text

    def complete(self, rendered_steps, target):
        request = "\n".join(
            [
                "Expand each analysis step below into concrete guidance for the target "
                "function. Keep exactly these five step headings, one per line, in order:",
                *(f"Step {i} - {h}: {t}" for i, (h, t) in enumerate(rendered_steps, start=1)),
                "",
                "Target function:",
                target.source,
            ]
        )
        for _ in range(2):
            response = self._complete_text(request)
            parsed = _parse_completed_steps(response, [h for h, _ in rendered_steps])
            if parsed is not None:
                return parsed
        return rendered_steps


def _parse_completed_steps(
    text: str, headings: Sequence[str]
) -> tuple[tuple[str, str], ...] | None:
    pattern = re.compile(
        r"Step\s+(\d)\s*-\s*(" + "|".join(re.escape(h) for h in headings) + r")\s*:\s*",
        re.IGNORECASE,
    )
    matches = list(pattern.finditer(text))
    if len(matches) != len(headings):
        return None
    found = [m.group(2) for m in matches]
    if [f.lower() for f in found] != [h.lower() for h in headings]:
        return None
    steps = []
    for i, match in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        steps.append((headings[i], text[match.end() : end].strip()))
    return tuple(steps)


def _findings_text(key: QueryKey) -> str:
    if not len(key.categories):
        return "no static-analyzer findings"
    parts = []
    for code, score in key.categories:
        cwe = key.categories.dominant_cwe.get(code)
        parts.append(f"{code} (score {score:g}{f', mainly CWE-{cwe}' if cwe else ''})")
    verdict = "vulnerable" if key.model_verdict else "benign"
    return (
        f"categories {', '.join(parts)}; detection model says {verdict} "
        f"(p={key.model_probability:.2f})"
    )


def complete_cot(
    guidance: CotGuidance,
    target: FunctionRecord,
    key: QueryKey,
    completer: CotCompleter | None = None,
) -> CotBlock:
    """Render the five guidance steps for one target.

    Offline mode substitutes placeholders only; a live completer may rewrite
    step bodies but never the heading structure.
    """
    completer = completer or OfflineCompleter()
    substitutions = {
        "code": target.source,
        "category": guidance.source.split("-")[0] if guidance.source else "UNT",
        "findings": _findings_text(key),
    }
    rendered = tuple(
        (STEP_HEADINGS[name], template.format(**substitutions))
        for name, template in guidance.steps()
    )
    completed = completer.complete(rendered, target)
    return CotBlock(steps=completed, source=guidance.source, target_id=target.id)


def assemble_composite(
    icl: IclBlock,
    cot: CotBlock,
    target: FunctionRecord,
) -> CompositePrompt:
    """Join the two blocks with the target code and the answer instruction."""
    for block_name, block_target in (("ICL", icl.target_id), ("COT", cot.target_id)):
        if block_target is not None and block_target != target.id:
            raise PromptError(
                f"{block_name} block was built for {block_target!r}, not {target.id!r}"
            )
    text = "\n\n".join(
        [
            icl.render(),
            cot.render(),
            f"{TARGET_SECTION_MARKER}\n{target.source}",
            ANSWER_INSTRUCTION,
        ]
    )
    return CompositePrompt(
        icl=icl,
        cot=cot,
        target_id=target.id,
        text=text,
        token_estimate=estimate_tokens(text),
    )


def render_baseline(
    kind: str, target: FunctionRecord, aux: str | None = None
) -> tuple[str, ...]:
    """Render one of the comparison prompts; cot2step yields two ordered turns."""
    if kind not in BASELINE_KINDS:
        raise PromptError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    if kind == "role":
        return (ROLE_TEMPLATE.replace("[CODE]", target.source),)
    if kind == "auxiliary":
        if aux is None:
            raise PromptError("auxiliary baseline requires data-flow text")
        return (
            AUXILIARY_TEMPLATE.replace("[CODE]", target.source).replace(
                "[DF description]", aux
            ),
        )
    return (
        COT2STEP_TEMPLATES[0].replace("[CODE]", target.source),
        COT2STEP_TEMPLATES[1],
    )


# --- data-flow summary (auxiliary baseline input) ------------------------------

_C_KEYWORDS = {
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double",
    "else", "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long",
    "register", "restrict", "return", "short", "signed", "sizeof", "static", "struct",
    "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "bool",
    "true", "false", "NULL",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ASSIGN_RE = re.compile(
    r"([A-Za-z_][A-Za-z0-9_]*(?:\s*(?:\[[^\]]*\]|->[A-Za-z_]\w*|\.[A-Za-z_]\w*))*)\s*"
    r"(?:[+\-*/%&|^]|<<|>>)?=(?!=)"
)
_DECL_RE = re.compile(
    r"^\s*(?:const\s+|static\s+|unsigned\s+|signed\s+|struct\s+\w+\s+|\w+\s+)+"
    r"[*\s]*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\[[^\]]*\])?\s*(?:=|;)"
)

_MAX_SUMMARY_LINES = 40
_MAX_SUMMARY_CHARS = 2000


def summarize_dataflow(source: str) -> str:
    """Per-line def/use summary: which names each line defines and reads."""
    lines_out: list[str] = []
    for line_no, line in enumerate(source.splitlines(), start=1):
        code = line.split("//")[0]
        if not code.strip():
            continue
        defined: list[str] = []
        decl = _DECL_RE.match(code)
        if decl and decl.group(1) not in _C_KEYWORDS:
            defined.append(decl.group(1))
        for assign in _ASSIGN_RE.finditer(code):
            base = _IDENT_RE.match(assign.group(1).strip())
            if base and base.group(0) not in _C_KEYWORDS and base.group(0) not in defined:
                defined.append(base.group(0))
        used = [
            name
            for name in _IDENT_RE.findall(code)
            if name not in _C_KEYWORDS and name not in defined
        ]
        used = list(dict.fromkeys(used))
        if not defined and not used:
            continue
        pieces = []
        if defined:
            pieces.append(f"defines {', '.join(defined)}")
        if used:
            pieces.append(f"uses {', '.join(used)}")
        lines_out.append(f"line {line_no}: {'; '.join(pieces)}")
        if len(lines_out) >= _MAX_SUMMARY_LINES:
            lines_out.append("...")
            break
    summary = "\n".join(lines_out)
    if len(summary) > _MAX_SUMMARY_CHARS:
        summary = summary[: _MAX_SUMMARY_CHARS - 3] + "..."
    return summary
