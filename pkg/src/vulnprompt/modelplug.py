"""Pluggable detection-probability providers.

Three kinds stand behind one interface: a file provider replaying stored
id -> probability maps, an HTTP provider speaking the wire protocol below,
and a hermetic built-in classifier (logistic regression over bag-of-token
counts) for desk-scale runs.

HTTP wire protocol (the contract a bridge server implements):
    POST {base}/predict        {"id": str, "code": str} -> {"probability": float}
    POST {base}/predict_batch  {"items": [{"id", "code"}, ...]}
                               -> {"probabilities": [float, ...]}
    GET  {base}/health         -> 200
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import Corpus, FunctionRecord
from .simindex import tokenize

DEFAULT_THRESHOLD = 0.5


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportError(ProviderError):
    """Endpoint unreachable, timed out, or otherwise failed in transit."""


class ProtocolError(ProviderError):
    """Endpoint answered, but outside the wire contract."""


@dataclass(frozen=True)
class ModelPrediction:
    """Detection probability plus the thresholded verdict."""

    probability: float
    model_id: str
    threshold: float = DEFAULT_THRESHOLD
    verdict: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ProtocolError(f"probability {self.probability} outside [0, 1]")
        object.__setattr__(self, "verdict", int(self.probability >= self.threshold))


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # file | http | builtin
    location: str
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if self.kind not in ("file", "http", "builtin"):
            raise ProviderError(f"unknown provider kind {self.kind!r}")
        if not self.location:
            raise ProviderError(f"{self.kind} provider needs a location")


class Provider(Protocol):
    model_id: str

    def predict(self, record: FunctionRecord) -> ModelPrediction: ...

    def predict_batch(self, records: Sequence[FunctionRecord]) -> list[ModelPrediction]: ...


# --- file provider ------------------------------------------------------------


class FileProvider:
    """Replays a stored {"id": probability} JSON map."""

    def __init__(self, path: str | Path, threshold: float = DEFAULT_THRESHOLD) -> None:
        path = Path(path)
        table = json.loads(path.read_text(encoding="utf-8"))
        for rec_id, prob in table.items():
            if not isinstance(prob, (int, float)) or not 0.0 <= prob <= 1.0:
                raise ProtocolError(f"stored probability for {rec_id!r} outside [0, 1]: {prob!r}")
        self._table: dict[str, float] = {k: float(v) for k, v in table.items()}
        self.threshold = threshold
        self.model_id = f"file:{path.name}"

    def predict(self, record: FunctionRecord) -> ModelPrediction:
        if record.id not in self._table:
            raise ProviderError(f"no stored probability for id {record.id!r}")
        return ModelPrediction(
            probability=self._table[record.id], model_id=self.model_id, threshold=self.threshold
        )

    def predict_batch(self, records: Sequence[FunctionRecord]) -> list[ModelPrediction]:
        missing = [r.id for r in records if r.id not in self._table]
        if missing:
            raise ProviderError(f"no stored probability for id(s): {', '.join(missing)}")
        return [self.predict(r) for r in records]


# --- HTTP provider ------------------------------------------------------------


class HttpProvider:
    """Talks to a probability server over the wire protocol above."""

    def __init__(
        self,
        endpoint: str,
        threshold: float = DEFAULT_THRESHOLD,
        timeout: float = 10.0,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.threshold = threshold
        self.timeout = timeout
        self.model_id = f"http:{self.endpoint}"
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _post(self, path: str, payload: dict) -> dict:
        with self._gate:
            try:
                resp = self._session.post(
                    f"{self.endpoint}{path}", json=payload, timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                raise TransportError(f"POST {path} failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"POST {path} returned status {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"POST {path} returned non-JSON body") from exc

    def _validated(self, value: object, rec_id: str) -> float:
        if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
            raise ProtocolError(f"probability for {rec_id!r} outside [0, 1]: {value!r}")
        return float(value)

    def health(self) -> bool:
        try:
            resp = self._session.get(f"{self.endpoint}/health", timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"GET /health failed: {exc}") from exc
        return resp.status_code == 200

    def predict(self, record: FunctionRecord) -> ModelPrediction:
        body = self._post("/predict", {"id": record.id, "code": record.source})
        prob = self._validated(body.get("probability"), record.id)
        return ModelPrediction(probability=prob, model_id=self.model_id, threshold=self.threshold)

    def predict_batch(self, records: Sequence[FunctionRecord]) -> list[ModelPrediction]:
        if not records:
            return []
        body = self._post(
            "/predict_batch",
            {"items": [{"id": r.id, "code": r.source} for r in records]},
        )
        probs = body.get("probabilities")
        if not isinstance(probs, list) or len(probs) != len(records):
            raise ProtocolError(
                f"batch response carried {len(probs) if isinstance(probs, list) else 'no'} "
                f"probabilities for {len(records)} items"
            )
        return [
            ModelPrediction(
                probability=self._validated(p, r.id),
                model_id=self.model_id,
                threshold=self.threshold,
            )
            for p, r in zip(probs, records)
        ]


# --- built-in classifier --------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class TrainManifest:
    seed: int
    epochs: int
    learning_rate: float
    l2: float
    vocab_size: int
    n_samples: int


ARTIFACT_KIND = "token-logistic"
ARTIFACT_VERSION = 1


class BuiltinClassifier:
    """Logistic regression over token counts; reproducible from its manifest."""

    def __init__(
        self,
        vocabulary: dict[str, float],
        bias: float,
        manifest: TrainManifest,
        loss_history: tuple[float, ...] = (),
    ) -> None:
        for token, weight in vocabulary.items():
            if not math.isfinite(weight):
                raise ProviderError(f"non-finite weight for token {token!r}")
        if not math.isfinite(bias):
            raise ProviderError("non-finite bias")
        self.vocabulary = dict(vocabulary)
        self.bias = float(bias)
        self.manifest = manifest
        self.loss_history = loss_history

    def predict_probability(self, source: str) -> float:
        z = self.bias
        for token in tokenize(source):
            weight = self.vocabulary.get(token)
            if weight is not None:
                z += weight
        return float(1.0 / (1.0 + math.exp(-z))) if z > -700 else 0.0

    def save(self, path: str | Path) -> None:
        doc = {
            "kind": ARTIFACT_KIND,
            "version": ARTIFACT_VERSION,
            "vocabulary": self.vocabulary,
            "bias": self.bias,
            "manifest": self.manifest.__dict__,
        }
        Path(path).write_text(
            json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "BuiltinClassifier":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("kind") != ARTIFACT_KIND:
            raise ProviderError(f"{path}: not a {ARTIFACT_KIND} artifact")
        return cls(
            vocabulary=doc["vocabulary"],
            bias=doc["bias"],
            manifest=TrainManifest(**doc["manifest"]),
        )


def _count_matrix(sources: Sequence[str], vocab_index: dict[str, int]) -> np.ndarray:
    x = np.zeros((len(sources), len(vocab_index)), dtype=np.float64)
    for row, source in enumerate(sources):
        for token in tokenize(source):
            col = vocab_index.get(token)
            if col is not None:
                x[row, col] += 1.0
    return x


def logistic_loss_and_grad(
    weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy with L2 penalty, and its analytic gradient."""
    z = x @ weights + bias
    # log(1 + e^z) - y*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(weights, weights))
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    residual = (p - y) / len(y)
    grad_w = x.T @ residual + l2 * weights
    grad_b = float(np.sum(residual))
    return loss, grad_w, grad_b


def train_builtin(train: Corpus, config: TrainConfig | None = None) -> BuiltinClassifier:
    """Fit the token-count logistic model by full-batch gradient descent.

    Per-epoch backtracking halves the step whenever it would raise the loss,
    so the recorded loss history is non-increasing. Deterministic for a given
    corpus and config.
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise ProviderError("training corpus is empty")
    counts = train.label_counts()
    if min(counts.values()) == 0:
        raise ProviderError("training corpus must contain both labels")

    vocab = sorted({tok for rec in train for tok in tokenize(rec.source)})
    vocab_index = {tok: i for i, tok in enumerate(vocab)}
    x = _count_matrix([rec.source for rec in train], vocab_index)
    y = np.array([float(rec.label) for rec in train])

    weights = np.zeros(len(vocab))
    bias = 0.0
    history: list[float] = []
    for _ in range(config.epochs):
        loss, grad_w, grad_b = logistic_loss_and_grad(weights, bias, x, y, config.l2)
        history.append(loss)
        step = config.learning_rate
        for _ in range(30):
            new_w = weights - step * grad_w
            new_b = bias - step * grad_b
            new_loss, _, _ = logistic_loss_and_grad(new_w, new_b, x, y, config.l2)
            if new_loss <= loss + 1e-12:
                break
            step /= 2.0
        weights, bias = new_w, new_b

    manifest = TrainManifest(
        seed=config.seed,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        l2=config.l2,
        vocab_size=len(vocab),
        n_samples=len(train),
    )
    vocabulary = {tok: float(weights[i]) for tok, i in vocab_index.items()}
    return BuiltinClassifier(
        vocabulary=vocabulary, bias=bias, manifest=manifest, loss_history=tuple(history)
    )


class BuiltinProvider:
    """Provider facade over a trained or loaded BuiltinClassifier."""

    def __init__(self, classifier: BuiltinClassifier, threshold: float = DEFAULT_THRESHOLD) -> None:
        self.classifier = classifier
        self.threshold = threshold
        self.model_id = f"builtin:{ARTIFACT_KIND}"

    def predict(self, record: FunctionRecord) -> ModelPrediction:
        return ModelPrediction(
            probability=self.classifier.predict_probability(record.source),
            model_id=self.model_id,
            threshold=self.threshold,
        )

    def predict_batch(self, records: Sequence[FunctionRecord]) -> list[ModelPrediction]:
        return [self.predict(r) for r in records]


def provider_from_config(config: ProviderConfig) -> Provider:
    if config.kind == "file":
        return FileProvider(config.location, threshold=config.threshold)
    if config.kind == "http":
        return HttpProvider(config.location, threshold=config.threshold)
    return BuiltinProvider(BuiltinClassifier.load(config.location), threshold=config.threshold)
