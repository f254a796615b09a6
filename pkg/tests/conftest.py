from __future__ import annotations

import json
from pathlib import Path

import pytest

from vulnprompt.corpus import Corpus, FunctionRecord, save_corpus

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def goldens_dir() -> Path:
    return GOLDENS


def record(rec_id: str, source: str, label: int, project: str = "proj") -> FunctionRecord:
    return FunctionRecord(id=rec_id, project=project, source=source, label=label)


@pytest.fixture
def small_corpus() -> Corpus:
    return Corpus(
        records=(
            record("f1", "void a(char*s){ char b[4]; strcpy(b, s); }", 1),
            record("f2", "int add(int x, int y){ return x + y; }", 0),
            record("f3", "void c(char*s){ gets(s); }", 1),
            record("f4", "int sub(int x, int y){ return x - y; }", 0),
        )
    )


@pytest.fixture
def small_corpus_path(tmp_path, small_corpus) -> Path:
    path = tmp_path / "corpus.jsonl"
    save_corpus(small_corpus, path)
    return path


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path
