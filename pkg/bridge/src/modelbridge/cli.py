"""Bridge CLI: serve the HTTP endpoints or dump probabilities to a file."""

from __future__ import annotations

import json
from pathlib import Path

import click
import uvicorn

from .app import BridgeConfig, create_app
from .scoring import load_scorer


@click.group()
def main() -> None:
    """HTTP probability server for code-classification models."""


@main.command()
@click.option("--model", "model_ref", required=True, help="Linear artifact (.json) or transformers model path/hub id.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8191, show_default=True)
@click.option("--max-batch-size", type=int, default=32, show_default=True)
@click.option("--device", default="cpu", show_default=True)
def serve(model_ref, host, port, max_batch_size, device):
    """Run the server until interrupted."""
    config = BridgeConfig(
        model_ref=model_ref, host=host, port=port,
        max_batch_size=max_batch_size, device=device,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")


@main.command()
@click.option("--model", "model_ref", required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON-Lines file with id and code fields per line.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.option("--device", default="cpu", show_default=True)
def dump(model_ref, corpus_path, output, device):
    """Score every corpus record and write an id -> probability JSON file,
    the format the pipeline's file provider replays."""
    scorer = load_scorer(model_ref, device=device)
    table: dict[str, float] = {}
    for line_no, line in enumerate(Path(corpus_path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        record = json.loads(line)
        table[record["id"]] = scorer.score(record["code"]).probability
    Path(output).write_text(
        json.dumps(table, indent=1, sort_keys=True), encoding="utf-8"
    )
    click.echo(f"dumped {len(table)} probabilities -> {output}")


if __name__ == "__main__":
    main()
