"""Token-shingle MinHash signatures and LSH candidate retrieval.

The tokenizer is language-light (C-family punctuation rules), which is enough
for similarity ranking without maintaining a grammar. Each signature slot
takes the minimum of a keyed 64-bit avalanche hash over the shingle set;
banding follows the standard b x r layout with b*r = n. Defaults (k=5, n=256,
b=32, r=8) put the banding collision threshold near (1/b)**(1/r) ~ 0.65
Jaccard.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_INDEX_MAGIC = b"VPLSHIDX"
_INDEX_VERSION = 1

MIN_SIGNATURE_LENGTH = 16

DEFAULT_SHINGLE_K = 5
DEFAULT_SIGNATURE_LENGTH = 256
DEFAULT_BANDS = 32
DEFAULT_ROWS_PER_BAND = 8


class SimIndexError(ValueError):
    """Raised for inconsistent signature or index parameters."""


# --- tokenization -----------------------------------------------------------

_TOKEN_PATTERNS = [
    r"//[^\n]*",                      # line comment
    r"/\*.*?\*/",                     # block comment
    r'"(?:\\.|[^"\\])*"',             # string literal
    r"'(?:\\.|[^'\\])*'",             # char literal
    r"[A-Za-z_][A-Za-z0-9_]*",        # identifier / keyword
    r"0[xX][0-9a-fA-F]+|\d+\.\d+(?:[eE][+-]?\d+)?|\d+[uUlL]*",  # numeric literal
    r"<<=|>>=|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[+\-*/%&|^!<>=]=?|::|[{}()\[\];,.?:~#]",
]

_TOKEN_RE = re.compile("|".join(f"({p})" for p in _TOKEN_PATTERNS), re.DOTALL)
_COMMENT_RE = re.compile(r"//[^\n]*|/\*.*?\*/", re.DOTALL)


def tokenize(source: str) -> list[str]:
    """Split code into identifier/literal/operator/punctuation tokens.

    Whitespace and comments are dropped. Deterministic for any input text.
    """
    tokens: list[str] = []
    for match in _TOKEN_RE.finditer(source):
        tok = match.group(0)
        if _COMMENT_RE.fullmatch(tok):
            continue
        tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class TokenShingleSet:
    """Set of k-token windows over a token stream."""

    shingles: frozenset[str]
    k: int

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], k: int = DEFAULT_SHINGLE_K) -> "TokenShingleSet":
        if k < 1:
            raise SimIndexError(f"shingle window k must be >= 1, got {k}")
        windows = (
            "\x1f".join(tokens[i : i + k]) for i in range(len(tokens) - k + 1)
        )
        return cls(shingles=frozenset(windows), k=k)

    @classmethod
    def from_source(cls, source: str, k: int = DEFAULT_SHINGLE_K) -> "TokenShingleSet":
        return cls.from_tokens(tokenize(source), k=k)

    def __len__(self) -> int:
        return len(self.shingles)


def exact_jaccard(a: TokenShingleSet, b: TokenShingleSet) -> float:
    """Brute-force Jaccard over the underlying shingle sets."""
    if not a.shingles and not b.shingles:
        return 0.0
    union = len(a.shingles | b.shingles)
    if union == 0:
        return 0.0
    return len(a.shingles & b.shingles) / union


# --- MinHash ----------------------------------------------------------------


def _base_hashes(shingles: Iterable[str], seed: int) -> np.ndarray:
    """Stable 64-bit hash per shingle, keyed by the signature seed."""
    key = seed.to_bytes(8, "little", signed=True)
    values = [
        int.from_bytes(
            hashlib.blake2b(s.encode("utf-8"), digest_size=8, key=key).digest(), "little"
        )
        for s in sorted(shingles)
    ]
    return np.asarray(values, dtype=np.uint64)


def _slot_keys(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << 64, size=n, dtype=np.uint64)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer: an avalanching permutation of the 64-bit space,
    so each slot key yields an (effectively) independent shingle ordering."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@dataclass(frozen=True)
class MinHashSignature:
    """Fixed-length sequence of minimum hash slot values."""

    slots: tuple[int, ...]
    n: int
    seed: int
    empty: bool = False

    def __post_init__(self) -> None:
        if len(self.slots) != self.n:
            raise SimIndexError(f"signature has {len(self.slots)} slots, expected n={self.n}")


def minhash(
    shingles: TokenShingleSet, n: int = DEFAULT_SIGNATURE_LENGTH, seed: int = 0
) -> MinHashSignature:
    """MinHash signature of a shingle set.

    An empty shingle set yields a sentinel signature that matches nothing,
    including itself.
    """
    if n < MIN_SIGNATURE_LENGTH:
        raise SimIndexError(f"signature length n must be >= {MIN_SIGNATURE_LENGTH}, got {n}")
    if not shingles.shingles:
        return MinHashSignature(slots=(0,) * n, n=n, seed=seed, empty=True)
    h = _base_hashes(shingles.shingles, seed)
    keys = _slot_keys(n, seed)
    # (num_shingles, n) grid of per-slot mixed hashes; min over shingles.
    with np.errstate(over="ignore"):
        grid = _mix64(h[:, None] ^ keys[None, :])
    slots = grid.min(axis=0)
    return MinHashSignature(slots=tuple(int(v) for v in slots), n=n, seed=seed)


def signature_for_source(
    source: str,
    k: int = DEFAULT_SHINGLE_K,
    n: int = DEFAULT_SIGNATURE_LENGTH,
    seed: int = 0,
) -> MinHashSignature:
    return minhash(TokenShingleSet.from_source(source, k=k), n=n, seed=seed)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of equal slots; 0.0 whenever a sentinel is involved."""
    if a.n != b.n:
        raise SimIndexError(f"signature length mismatch: {a.n} vs {b.n}")
    if a.seed != b.seed:
        raise SimIndexError(f"signature seed mismatch: {a.seed} vs {b.seed}")
    if a.empty or b.empty:
        return 0.0
    equal = sum(1 for x, y in zip(a.slots, b.slots) if x == y)
    return equal / a.n


# --- LSH index --------------------------------------------------------------


@dataclass(frozen=True)
class IndexParams:
    k: int = DEFAULT_SHINGLE_K
    n: int = DEFAULT_SIGNATURE_LENGTH
    b: int = DEFAULT_BANDS
    r: int = DEFAULT_ROWS_PER_BAND
    seed: int = 0

    def __post_init__(self) -> None:
        if self.b * self.r != self.n:
            raise SimIndexError(f"banding mismatch: b*r = {self.b}*{self.r} != n = {self.n}")
        if self.n < MIN_SIGNATURE_LENGTH:
            raise SimIndexError(f"signature length n must be >= {MIN_SIGNATURE_LENGTH}")
        if self.k < 1:
            raise SimIndexError("shingle window k must be >= 1")


def _band_key(slots: Sequence[int], band: int, r: int) -> str:
    packed = struct.pack(f"<{r}Q", *slots[band * r : (band + 1) * r])
    return hashlib.blake2b(packed, digest_size=8).hexdigest()


class LshIndex:
    """Banded MinHash index; immutable once built, safe for concurrent reads."""

    def __init__(self, params: IndexParams) -> None:
        self.params = params
        self._buckets: list[dict[str, list[str]]] = [{} for _ in range(params.b)]
        self._signatures: dict[str, MinHashSignature] = {}
        self._frozen = False

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._signatures)

    def signature(self, entry_id: str) -> MinHashSignature:
        return self._signatures[entry_id]

    def _insert(self, entry_id: str, sig: MinHashSignature) -> None:
        if self._frozen:
            raise SimIndexError("index is frozen; rebuild to add entries")
        if entry_id in self._signatures:
            raise SimIndexError(f"duplicate index id {entry_id!r}")
        self._signatures[entry_id] = sig
        if sig.empty:
            return  # sentinel signatures never collide
        for band in range(self.params.b):
            key = _band_key(sig.slots, band, self.params.r)
            self._buckets[band].setdefault(key, []).append(entry_id)

    def bucket_memberships(self, entry_id: str) -> int:
        sig = self._signatures[entry_id]
        if sig.empty:
            return 0
        count = 0
        for band in range(self.params.b):
            key = _band_key(sig.slots, band, self.params.r)
            if entry_id in self._buckets[band].get(key, ()):
                count += 1
        return count

    def query(self, source: str, m: int) -> list[tuple[str, float]]:
        """Candidates colliding with the query in any band, ranked by estimated
        Jaccard (descending, ties by id ascending), truncated to m."""
        if m < 1:
            raise SimIndexError(f"candidate count m must be >= 1, got {m}")
        sig = signature_for_source(
            source, k=self.params.k, n=self.params.n, seed=self.params.seed
        )
        if sig.empty:
            return []
        candidates: set[str] = set()
        for band in range(self.params.b):
            key = _band_key(sig.slots, band, self.params.r)
            candidates.update(self._buckets[band].get(key, ()))
        scored = [
            (entry_id, estimate_jaccard(sig, self._signatures[entry_id]))
            for entry_id in candidates
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:m]


def build_index(entries: Iterable[tuple[str, str]], params: IndexParams | None = None) -> LshIndex:
    """Index (id, source) pairs; the result is immutable."""
    params = params or IndexParams()
    index = LshIndex(params)
    for entry_id, source in entries:
        sig = signature_for_source(source, k=params.k, n=params.n, seed=params.seed)
        index._insert(entry_id, sig)
    index._frozen = True
    return index


# --- persistence ------------------------------------------------------------


def save_index(index: LshIndex, path: str | Path) -> None:
    """Versioned binary layout: magic, params header, buckets, signatures."""
    path = Path(path)
    header = {
        "version": _INDEX_VERSION,
        "params": {
            "k": index.params.k,
            "n": index.params.n,
            "b": index.params.b,
            "r": index.params.r,
            "seed": index.params.seed,
        },
        "entries": len(index._signatures),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buckets = [
        {key: list(ids) for key, ids in band.items()} for band in index._buckets
    ]
    buckets_bytes = json.dumps(buckets, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(buckets_bytes)))
        fh.write(buckets_bytes)
        for entry_id, sig in sorted(index._signatures.items()):
            id_bytes = entry_id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<?", sig.empty))
            fh.write(struct.pack(f"<{sig.n}Q", *sig.slots))


def load_index(path: str | Path) -> LshIndex:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(_INDEX_MAGIC))
        if magic != _INDEX_MAGIC:
            raise SimIndexError(f"{path}: not an index file (bad magic bytes)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != _INDEX_VERSION:
            raise SimIndexError(f"{path}: unsupported index version {header.get('version')}")
        params = IndexParams(**header["params"])
        (buckets_len,) = struct.unpack("<I", fh.read(4))
        buckets = json.loads(fh.read(buckets_len).decode("utf-8"))
        index = LshIndex(params)
        index._buckets = [dict(band) for band in buckets]
        for _ in range(header["entries"]):
            (id_len,) = struct.unpack("<I", fh.read(4))
            entry_id = fh.read(id_len).decode("utf-8")
            (empty,) = struct.unpack("<?", fh.read(1))
            slots = struct.unpack(f"<{params.n}Q", fh.read(8 * params.n))
            index._signatures[entry_id] = MinHashSignature(
                slots=slots, n=params.n, seed=params.seed, empty=empty
            )
        index._frozen = True
    return index
