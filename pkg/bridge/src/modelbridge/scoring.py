"""Model backends: a JSON linear artifact for hermetic runs, and an optional
transformers sequence-classification backend for real pretrained models.

Both return a ScoreResult with the probability in [0, 1] plus flags for
truncated and empty inputs. Scoring is deterministic for a fixed artifact
(inference mode, no sampling).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

LINEAR_ARTIFACT_KIND = "token-logistic"

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|\d+|[^\sA-Za-z0-9_]")


class ModelLoadError(RuntimeError):
    """The configured model reference could not be loaded."""


@dataclass(frozen=True)
class ScoreResult:
    probability: float
    truncated: bool = False
    empty_input: bool = False


class LinearTokenScorer:
    """Scores with a token-weight table: sigmoid(bias + sum of token weights).

    Artifact schema (shared file format with the pipeline's trainer):
    {"kind": "token-logistic", "vocabulary": {token: weight}, "bias": float}
    """

    def __init__(self, vocabulary: dict[str, float], bias: float, max_tokens: int = 4096) -> None:
        self.vocabulary = vocabulary
        self.bias = float(bias)
        self.max_tokens = max_tokens

    @classmethod
    def from_artifact(cls, path: Path, max_tokens: int = 4096) -> "LinearTokenScorer":
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelLoadError(f"cannot read linear artifact {path}: {exc}") from exc
        if doc.get("kind") != LINEAR_ARTIFACT_KIND:
            raise ModelLoadError(f"{path}: expected kind {LINEAR_ARTIFACT_KIND!r}")
        return cls(vocabulary=doc["vocabulary"], bias=doc["bias"], max_tokens=max_tokens)

    @property
    def identifier(self) -> str:
        return f"{LINEAR_ARTIFACT_KIND}:{len(self.vocabulary)}"

    def score(self, code: str) -> ScoreResult:
        if not code.strip():
            probability = 1.0 / (1.0 + math.exp(-self.bias))
            return ScoreResult(probability=probability, empty_input=True)
        tokens = _TOKEN_RE.findall(code)
        truncated = len(tokens) > self.max_tokens
        if truncated:
            tokens = tokens[: self.max_tokens]
        z = self.bias
        for token in tokens:
            weight = self.vocabulary.get(token)
            if weight is not None:
                z += weight
        z = max(min(z, 500.0), -500.0)
        return ScoreResult(probability=1.0 / (1.0 + math.exp(-z)), truncated=truncated)


class TransformerScorer:
    """Wraps a transformers sequence-classification checkpoint (hub id or
    local directory). Loaded lazily so the hermetic backend never needs
    torch installed."""

    def __init__(self, model_ref: str, device: str = "cpu") -> None:
        try:
            import torch
            from transformers import AutoModelForSequenceClassification, AutoTokenizer
        except ImportError as exc:
            raise ModelLoadError(
                "transformers backend needs the [hf] extra (torch + transformers)"
            ) from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_ref)
            self._model = AutoModelForSequenceClassification.from_pretrained(model_ref)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {model_ref!r}: {exc}") from exc
        self._torch = torch
        self._model.to(device)
        self._model.eval()
        self._device = device
        self._ref = model_ref

    @property
    def identifier(self) -> str:
        return self._ref

    def score(self, code: str) -> ScoreResult:
        if not code.strip():
            return ScoreResult(probability=self._forward(code), empty_input=True)
        max_length = getattr(self._tokenizer, "model_max_length", 512) or 512
        token_count = len(self._tokenizer(code, truncation=False)["input_ids"])
        return ScoreResult(probability=self._forward(code), truncated=token_count > max_length)

    def _forward(self, code: str) -> float:
        torch = self._torch
        inputs = self._tokenizer(
            code, return_tensors="pt", truncation=True, padding=False
        ).to(self._device)
        with torch.no_grad():
            logits = self._model(**inputs).logits[0]
        if logits.shape[-1] == 1:
            return float(torch.sigmoid(logits[0]))
        return float(torch.softmax(logits, dim=-1)[-1])


def load_scorer(model_ref: str, device: str = "cpu", max_tokens: int = 4096):
    """A .json path loads the linear artifact; anything else goes to the
    transformers backend."""
    path = Path(model_ref)
    if path.suffix == ".json" and path.is_file():
        return LinearTokenScorer.from_artifact(path, max_tokens=max_tokens)
    return TransformerScorer(model_ref, device=device)
