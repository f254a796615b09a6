"""FastAPI application implementing the provider wire protocol.

Endpoints:
    GET  /health         -> 200 {"status": "ok"}
    GET  /info           -> model identifier and server version
    POST /predict        {"id": str, "code": str} -> {"probability": float, ...}
    POST /predict_batch  {"items": [{"id", "code"}, ...]} -> {"probabilities": [...]}

Responses carry optional "truncated" and "empty_input" flags; clients that
only read "probability" stay conformant.
"""

from __future__ import annotations

from dataclasses import dataclass

from fastapi import FastAPI
from pydantic import BaseModel

from . import __version__
from .scoring import load_scorer


@dataclass(frozen=True)
class BridgeConfig:
    model_ref: str
    host: str = "127.0.0.1"
    port: int = 8191
    max_batch_size: int = 32
    device: str = "cpu"
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.max_batch_size < 1:
            raise ValueError(f"max_batch_size must be >= 1, got {self.max_batch_size}")


class PredictRequest(BaseModel):
    id: str
    code: str


class BatchRequest(BaseModel):
    items: list[PredictRequest]


def create_app(config: BridgeConfig) -> FastAPI:
    scorer = load_scorer(config.model_ref, device=config.device, max_tokens=config.max_tokens)
    app = FastAPI(title="modelbridge", version=__version__)

    def score_payload(code: str) -> dict:
        result = scorer.score(code)
        payload: dict = {"probability": result.probability}
        if result.truncated:
            payload["truncated"] = True
        if result.empty_input:
            payload["empty_input"] = True
        return payload

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/info")
    def info() -> dict:
        return {"model": scorer.identifier, "version": __version__}

    @app.post("/predict")
    def predict(request: PredictRequest) -> dict:
        return score_payload(request.code)

    @app.post("/predict_batch")
    def predict_batch(request: BatchRequest) -> dict:
        probabilities: list[float] = []
        flags: list[dict] = []
        for start in range(0, len(request.items), config.max_batch_size):
            chunk = request.items[start : start + config.max_batch_size]
            for item in chunk:
                payload = score_payload(item.code)
                probabilities.append(payload["probability"])
                flags.append(
                    {k: v for k, v in payload.items() if k != "probability"}
                )
        return {"probabilities": probabilities, "flags": flags}

    return app
