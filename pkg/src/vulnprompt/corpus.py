"""Function-level labeled corpora: loading, undersampling, and splitting.

Corpus files are JSON-Lines, one record per line:

    {"id": str, "project": str, "code": str, "label": 0|1, "commit": str?}

Label encoding: 1 = vulnerable, 0 = benign.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path

LABEL_VULNERABLE = 1
LABEL_BENIGN = 0


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid sampling parameters."""


@dataclass(frozen=True)
class FunctionRecord:
    """One labeled function-level code sample."""

    id: str
    project: str
    source: str
    label: int
    commit: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("record id must be a non-empty string")
        if not self.source:
            raise CorpusError(f"record {self.id!r}: source must be non-empty")
        if self.label not in (LABEL_BENIGN, LABEL_VULNERABLE):
            raise CorpusError(f"record {self.id!r}: label must be 0 or 1, got {self.label!r}")

    @property
    def is_vulnerable(self) -> bool:
        return self.label == LABEL_VULNERABLE


@dataclass(frozen=True)
class Provenance:
    source_path: str
    loaded_at: float


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of records with unique ids."""

    records: tuple[FunctionRecord, ...]
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise CorpusError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, record_id: str) -> FunctionRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def label_counts(self) -> dict[int, int]:
        counts = {LABEL_BENIGN: 0, LABEL_VULNERABLE: 0}
        for rec in self.records:
            counts[rec.label] += 1
        return counts

    @property
    def vulnerable(self) -> tuple[FunctionRecord, ...]:
        return tuple(r for r in self.records if r.is_vulnerable)

    @property
    def benign(self) -> tuple[FunctionRecord, ...]:
        return tuple(r for r in self.records if not r.is_vulnerable)


@dataclass(frozen=True)
class DatasetSplit:
    train: Corpus
    test: Corpus
    seed: int
    train_fraction: float


_REQUIRED_FIELDS = ("id", "project", "code", "label")


def _record_from_json(obj: dict, line_no: int) -> FunctionRecord:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {line_no}: expected a JSON object, got {type(obj).__name__}")
    missing = [k for k in _REQUIRED_FIELDS if k not in obj]
    if missing:
        raise CorpusError(f"line {line_no}: missing field(s) {', '.join(missing)}")
    if not isinstance(obj["label"], int) or isinstance(obj["label"], bool):
        raise CorpusError(f"line {line_no}: label must be integer 0 or 1")
    try:
        return FunctionRecord(
            id=str(obj["id"]),
            project=str(obj["project"]),
            source=obj["code"],
            label=obj["label"],
            commit=obj.get("commit"),
        )
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from exc


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a JSON-Lines corpus file.

    Raises CorpusError naming the offending line number for malformed lines
    and the offending id for duplicates.
    """
    path = Path(path)
    records: list[FunctionRecord] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            rec = _record_from_json(obj, line_no)
            if rec.id in seen:
                raise CorpusError(
                    f"line {line_no}: duplicate id {rec.id!r} (first seen on line {seen[rec.id]})"
                )
            seen[rec.id] = line_no
            records.append(rec)
    return Corpus(
        records=tuple(records),
        provenance=Provenance(source_path=str(path), loaded_at=time.time()),
    )


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSON-Lines (canonical field order, \\n endings)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in corpus.records:
            obj: dict = {"id": rec.id, "project": rec.project, "code": rec.source, "label": rec.label}
            if rec.commit is not None:
                obj["commit"] = rec.commit
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def undersample(corpus: Corpus, ratio: float = 1.0, seed: int = 0) -> Corpus:
    """Randomly drop benign records down to ``ratio`` benign per vulnerable.

    All vulnerable records are kept. Selection is deterministic for a seed and
    output preserves the input record order.
    """
    if ratio <= 0:
        raise CorpusError(f"undersampling ratio must be > 0, got {ratio}")
    vulnerable = corpus.vulnerable
    if not vulnerable:
        raise CorpusError("corpus has no vulnerable records; nothing to balance against")
    benign = corpus.benign
    target = min(len(benign), _round_half_up(ratio * len(vulnerable)))
    if target < len(benign):
        rng = random.Random(seed)
        kept_benign = {rec.id for rec in rng.sample(benign, target)}
    else:
        kept_benign = {rec.id for rec in benign}
    records = tuple(r for r in corpus.records if r.is_vulnerable or r.id in kept_benign)
    return Corpus(records=records, provenance=corpus.provenance)


def split(corpus: Corpus, train_fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Stratified train/test split, deterministic per seed.

    Per-label train counts are half-up rounds of ``train_fraction`` times the
    label group size, adjusted so both sides hold at least one record.
    """
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(corpus) < 2:
        raise CorpusError("corpus too small to split: need at least 2 records")

    rng = random.Random(seed)
    train_ids: set[str] = set()
    groups = [list(corpus.vulnerable), list(corpus.benign)]
    for group in groups:
        group.sort(key=lambda r: r.id)
        rng.shuffle(group)
        n_train = _round_half_up(train_fraction * len(group))
        train_ids.update(rec.id for rec in group[:n_train])

    # Keep both sides non-empty; move one record from the larger side if needed.
    all_ids = [rec.id for rec in corpus.records]
    if len(train_ids) == len(corpus):
        train_ids.discard(next(i for i in reversed(all_ids) if i in train_ids))
    elif not train_ids:
        train_ids.add(all_ids[0])

    train = tuple(r for r in corpus.records if r.id in train_ids)
    test = tuple(r for r in corpus.records if r.id not in train_ids)
    return DatasetSplit(
        train=Corpus(records=train, provenance=corpus.provenance),
        test=Corpus(records=test, provenance=corpus.provenance),
        seed=seed,
        train_fraction=train_fraction,
    )
