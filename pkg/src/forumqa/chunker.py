"""Recursive, delimiter-hierarchical document chunking with overlap.

Text is split on the first separator of the hierarchy (paragraphs, then
lines, then spaces, then raw characters); oversized fragments recurse with
the next separator, and adjacent fragments are greedily re-merged. Separator
characters stay attached to the end of the preceding fragment, so stripping
each chunk's overlap prefix and concatenating reproduces the source exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class DocumentChunk:
    doc_id: str
    chunk_index: int
    text: str
    start: int  # span of the chunk's own (non-overlap) content
    end: int    # in the CRLF-normalized source text


@dataclass(frozen=True)
class ChunkerConfig:
    max_chars: int = 1000
    overlap_chars: int = 100
    separators: tuple[str, ...] = ("\n\n", "\n", " ", "")

    def __post_init__(self):
        if self.max_chars <= 0:
            raise ValueError("max_chars must be positive")
        if not 0 <= self.overlap_chars < self.max_chars:
            raise ValueError("overlap_chars must be in [0, max_chars)")
        if not self.separators or self.separators[-1] != "":
            raise ValueError("separators must end with the empty string")


def chunk_key(chunk: DocumentChunk) -> str:
    return f"{chunk.doc_id}:{chunk.chunk_index}"


def _split_keep_sep(text: str, sep: str) -> list[str]:
    # separator stays at the end of the preceding part; concatenation == text
    raw = text.split(sep)
    parts = [p + sep for p in raw[:-1]]
    if raw[-1]:
        parts.append(raw[-1])
    return parts


def _split_recursive(text: str, separators: tuple[str, ...], budget: int) -> list[str]:
    if len(text) <= budget:
        return [text]
    sep = separators[0]
    if sep == "":
        return [text[i:i + budget] for i in range(0, len(text), budget)]
    pieces = []
    for part in _split_keep_sep(text, sep):
        if len(part) <= budget:
            pieces.append(part)
        else:
            pieces.extend(_split_recursive(part, separators[1:], budget))
    return pieces


def _greedy_merge(pieces: list[str], budget: int) -> list[str]:
    merged: list[str] = []
    acc = ""
    for piece in pieces:
        if acc and len(acc) + len(piece) <= budget:
            acc += piece
        else:
            if acc:
                merged.append(acc)
            acc = piece
    if acc:
        merged.append(acc)
    return merged


def split_document(doc: SourceDocument, cfg: ChunkerConfig | None = None) -> list[DocumentChunk]:
    """Chunk a document under the length cap, carrying an overlap prefix.

    Every chunk (overlap included) is at most cfg.max_chars long. Each chunk
    after the first starts with the previous chunk's final
    min(overlap_chars, len(previous chunk)) characters; the remainder is new
    content whose (start, end) span indexes the normalized source.
    """
    cfg = cfg or ChunkerConfig()
    text = doc.text.replace("\r\n", "\n")
    if not text:
        return []
    if len(text) <= cfg.max_chars:
        return [DocumentChunk(doc.doc_id, 0, text, 0, len(text))]

    budget = cfg.max_chars - cfg.overlap_chars
    segments = _greedy_merge(_split_recursive(text, cfg.separators, budget), budget)

    chunks: list[DocumentChunk] = []
    pos = 0
    prev_text = ""
    for i, seg in enumerate(segments):
        if i == 0:
            body = seg
        else:
            body = prev_text[len(prev_text) - min(cfg.overlap_chars, len(prev_text)):] + seg
        chunks.append(DocumentChunk(doc.doc_id, i, body, pos, pos + len(seg)))
        pos += len(seg)
        prev_text = body
    return chunks


def write_chunks(chunks: list[DocumentChunk], path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(json.dumps({
                "doc_id": c.doc_id,
                "chunk_index": c.chunk_index,
                "text": c.text,
                "start": c.start,
                "end": c.end,
            }, ensure_ascii=False) + "\n")
    return len(chunks)


def read_chunks(path) -> list[DocumentChunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            chunks.append(DocumentChunk(
                doc_id=rec["doc_id"],
                chunk_index=rec["chunk_index"],
                text=rec["text"],
                start=rec["start"],
                end=rec["end"],
            ))
    return chunks
