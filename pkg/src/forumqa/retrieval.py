"""BM25 and dense cosine indices over chunks, plus the hybrid union policy.

The hybrid result is the dense top-k (default 3) followed by the lexical
top-k (default 2) with duplicates collapsed, dense first.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empties."""
    return _TOKEN.findall(text.lower())


class Bm25Index:
    """Okapi BM25 over chunk texts.

    IDF uses the +1-smoothed form ln(1 + (N - df + 0.5)/(df + 0.5)), which is
    strictly positive, so a chunk scores > 0 exactly when it contains at
    least one query term.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.texts: dict[str, str] = {}
        self.postings: dict[str, dict[str, int]] = {}  # term -> chunk_key -> tf
        self.lengths: dict[str, int] = {}

    @classmethod
    def build(cls, texts: Mapping[str, str], k1: float = 1.2, b: float = 0.75,
              pretokenized: Mapping[str, Sequence[str]] | None = None) -> "Bm25Index":
        index = cls(k1=k1, b=b)
        for key in texts:
            tokens = list(pretokenized[key]) if pretokenized is not None else tokenize(texts[key])
            index.texts[key] = texts[key]
            index.lengths[key] = len(tokens)
            for tok in tokens:
                index.postings.setdefault(tok, {}).setdefault(key, 0)
                index.postings[tok][key] += 1
        return index

    @property
    def chunk_count(self) -> int:
        return len(self.lengths)

    @property
    def avg_length(self) -> float:
        if not self.lengths:
            return 0.0
        return sum(self.lengths.values()) / len(self.lengths)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, {}))
        n = self.chunk_count
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def bm25_score(index: Bm25Index, query_terms: Sequence[str], chunk_key: str) -> float:
    """Okapi score of one chunk for the given query terms (occurrences count)."""
    if chunk_key not in index.lengths:
        raise KeyError(f"unknown chunk_key '{chunk_key}'")
    length = index.lengths[chunk_key]
    avg = index.avg_length
    score = 0.0
    for term in query_terms:
        tf = index.postings.get(term, {}).get(chunk_key, 0)
        if tf == 0:
            continue
        norm = index.k1 * (1.0 - index.b + index.b * length / avg)
        score += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def bm25_top_k(index: Bm25Index, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k chunks by BM25, positive scores only, ties by ascending key."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.chunk_count == 0:
        return []
    terms = tokenize(query)
    candidates: set[str] = set()
    for term in terms:
        candidates.update(index.postings.get(term, {}))
    scored = [(key, bm25_score(index, terms, key)) for key in candidates]
    scored = [(key, s) for key, s in scored if s > 0.0]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


class DenseIndex:
    """Exact cosine-similarity scan over one embedding vector per chunk."""

    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        if not vectors:
            self.keys: list[str] = []
            self.matrix = np.zeros((0, 0))
            self.dim = 0
            return
        self.keys = sorted(vectors)
        self.matrix = np.asarray([vectors[k] for k in self.keys], dtype=float)
        if self.matrix.ndim != 2:
            raise ValueError("vectors must share one dimension")
        self.dim = self.matrix.shape[1]
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero vector in dense index")
        self._unit = self.matrix / norms[:, None]


def dense_top_k(index: DenseIndex, query_vec: Sequence[float], k: int) -> list[tuple[str, float]]:
    """Top-k chunks by cosine similarity, ties by ascending key."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.keys:
        return []
    q = np.asarray(query_vec, dtype=float)
    if q.shape != (index.dim,):
        raise ValueError(f"dimension mismatch: query {q.shape[0] if q.ndim else 0} vs index {index.dim}")
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ValueError("zero query vector")
    sims = index._unit @ (q / qn)
    ranked = sorted(zip(index.keys, sims.tolist()), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


@dataclass(frozen=True)
class RetrievedItem:
    chunk_key: str
    text: str
    score: float
    source: str  # "dense" | "bm25" | "both"


@dataclass(frozen=True)
class RetrievedContext:
    items: tuple[RetrievedItem, ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def texts(self) -> list[str]:
        return [item.text for item in self.items]


def hybrid_retrieve(dense: DenseIndex, bm25: Bm25Index, query: str,
                    query_vec: Sequence[float], dense_k: int = 3,
                    bm25_k: int = 2) -> RetrievedContext:
    """Dense top-dense_k followed by BM25 top-bm25_k, duplicates collapsed.

    A chunk surfaced by both retrievers keeps its dense slot and score and is
    marked source="both". Both indices must cover the same chunk set.
    """
    if set(dense.keys) != set(bm25.lengths):
        raise ValueError("dense and bm25 indices cover different chunk sets")
    dense_hits = dense_top_k(dense, query_vec, dense_k)
    bm25_hits = bm25_top_k(bm25, query, bm25_k)
    bm25_keys = {key for key, _ in bm25_hits}

    items: list[RetrievedItem] = []
    taken: set[str] = set()
    for key, sim in dense_hits:
        source = "both" if key in bm25_keys else "dense"
        items.append(RetrievedItem(key, bm25.texts[key], sim, source))
        taken.add(key)
    for key, score in bm25_hits:
        if key in taken:
            continue
        items.append(RetrievedItem(key, bm25.texts[key], score, "bm25"))
        taken.add(key)
    return RetrievedContext(items=tuple(items))


def save_bm25(index: Bm25Index, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": "bm25",
            "k1": index.k1,
            "b": index.b,
            "chunk_count": index.chunk_count,
        }) + "\n")
        for key in sorted(index.lengths):
            tf = {t: posting[key] for t, posting in index.postings.items() if key in posting}
            fh.write(json.dumps({
                "chunk_key": key,
                "length": index.lengths[key],
                "text": index.texts[key],
                "tf": dict(sorted(tf.items())),
            }, ensure_ascii=False) + "\n")


def load_bm25(path) -> Bm25Index:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "bm25":
            raise ValueError(f"not a bm25 index file: {path}")
        index = Bm25Index(k1=header["k1"], b=header["b"])
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            key = rec["chunk_key"]
            index.texts[key] = rec["text"]
            index.lengths[key] = rec["length"]
            for term, tf in rec["tf"].items():
                index.postings.setdefault(term, {})[key] = tf
    return index


def save_dense(index: DenseIndex, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": "dense",
            "dim": index.dim,
            "chunk_count": len(index.keys),
        }) + "\n")
        for i, key in enumerate(index.keys):
            fh.write(json.dumps({
                "chunk_key": key,
                "vector": index.matrix[i].tolist(),
            }) + "\n")


def load_dense(path) -> DenseIndex:
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "dense":
            raise ValueError(f"not a dense index file: {path}")
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            vectors[rec["chunk_key"]] = rec["vector"]
    return DenseIndex(vectors)
