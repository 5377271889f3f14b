"""Forum export parsing and single-turn QA pair extraction.

The export is JSON-lines, one post per line:

    {"post_id": str, "semester": str, "kind": str, "subject": str,
     "folders": [str], "has_images": bool, "author_role": str,
     "parent_id": str|null, "revisions": [{"ts": ISO-8601, "body": str}]}

Ground-truth selection: an instructor answer always wins; otherwise the
latest student answer (by last revision timestamp) is used; unanswered
questions are dropped, as is any pair whose question or selected answer
carries images.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime

logger = logging.getLogger(__name__)

POST_KINDS = ("question", "i_answer", "s_answer", "followup", "followup_response", "note")
ANSWER_KINDS = ("i_answer", "s_answer")
AUTHOR_ROLES = ("instructor", "student")


@dataclass(frozen=True)
class Revision:
    ts: str
    body: str


@dataclass(frozen=True)
class ForumPost:
    post_id: str
    semester: str
    kind: str
    subject: str
    folders: tuple[str, ...]
    has_images: bool
    author_role: str
    parent_id: str | None
    revisions: tuple[Revision, ...]

    @property
    def body(self) -> str:
        """Current body, i.e. the last revision's text."""
        return self.revisions[-1].body

    @property
    def last_edited(self) -> datetime:
        return parse_timestamp(self.revisions[-1].ts)


@dataclass(frozen=True)
class QAPair:
    pair_id: str
    question_subject: str
    question_body: str
    answer_body: str
    answer_provenance: str  # "instructor" | "student"
    semester: str
    folders: tuple[str, ...]


@dataclass(frozen=True)
class KindStats:
    post_count: int
    mean_words: float
    stdev_words: float
    total_words: int


@dataclass(frozen=True)
class CorpusStats:
    per_kind: dict[str, KindStats]
    total_posts: int


def parse_timestamp(ts: str) -> datetime:
    # fromisoformat in 3.10 does not accept a trailing Z
    return datetime.fromisoformat(ts.replace("Z", "+00:00"))


def _parse_post(record: dict, line_no: int) -> ForumPost:
    kind = record.get("kind")
    if kind not in POST_KINDS:
        raise ValueError(f"unknown kind '{kind}' at line {line_no}")
    role = record.get("author_role")
    if role not in AUTHOR_ROLES:
        raise ValueError(f"unknown author_role '{role}' at line {line_no}")
    raw_revs = record.get("revisions") or []
    if not raw_revs:
        raise ValueError(f"post '{record.get('post_id')}' has no revisions at line {line_no}")
    revisions = sorted(
        (Revision(ts=str(r["ts"]), body=str(r["body"])) for r in raw_revs),
        key=lambda r: parse_timestamp(r.ts),
    )
    return ForumPost(
        post_id=str(record["post_id"]),
        semester=str(record["semester"]),
        kind=kind,
        subject=str(record.get("subject", "")),
        folders=tuple(str(f) for f in record.get("folders", [])),
        has_images=bool(record.get("has_images", False)),
        author_role=role,
        parent_id=record.get("parent_id") or None,
        revisions=tuple(revisions),
    )


def parse_forum_export(path) -> list[ForumPost]:
    """Parse a JSON-lines forum export into posts, preserving order.

    Unknown fields are ignored. Raises ValueError naming the line number
    for malformed JSON or unknown enum values.
    """
    posts = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed JSON at line {line_no}: {exc.msg}") from exc
            try:
                posts.append(_parse_post(record, line_no))
            except KeyError as exc:
                raise ValueError(f"missing field {exc} at line {line_no}") from exc
    return posts


def _pick_answer(candidates: list[ForumPost]) -> ForumPost:
    # latest revision timestamp wins; identical timestamps break by larger post_id
    return max(candidates, key=lambda p: (p.last_edited, p.post_id))


def extract_qa_pairs(posts: list[ForumPost]) -> list[QAPair]:
    """Extract one QA pair per answerable question under the ground-truth rules.

    Instructor answers take priority over student answers; among several of
    the same provenance the one with the latest revision wins. Questions with
    no answer are dropped, and so is any pair whose question or selected
    answer has images. Followups, followup responses, and notes never
    produce pairs. Answers with a dangling parent are skipped with a warning.
    """
    questions = {p.post_id: p for p in posts if p.kind == "question"}
    answers_by_parent: dict[str, list[ForumPost]] = {}
    for post in posts:
        if post.kind not in ANSWER_KINDS:
            continue
        if post.parent_id is None or post.parent_id not in questions:
            logger.warning("answer %s has no resolvable parent %r; skipped", post.post_id, post.parent_id)
            continue
        answers_by_parent.setdefault(post.parent_id, []).append(post)

    pairs = []
    for post in posts:
        if post.kind != "question":
            continue
        candidates = answers_by_parent.get(post.post_id, [])
        instructor = [a for a in candidates if a.kind == "i_answer"]
        chosen = _pick_answer(instructor) if instructor else (
            _pick_answer(candidates) if candidates else None
        )
        if chosen is None:
            continue
        if post.has_images or chosen.has_images:
            continue
        if not chosen.body.strip():
            logger.warning("selected answer %s for question %s is empty; pair dropped", chosen.post_id, post.post_id)
            continue
        pairs.append(
            QAPair(
                pair_id=f"{post.semester}-{post.post_id}",
                question_subject=post.subject,
                question_body=post.body,
                answer_body=chosen.body,
                answer_provenance="instructor" if chosen.kind == "i_answer" else "student",
                semester=post.semester,
                folders=post.folders,
            )
        )
    return pairs


def corpus_stats(posts: list[ForumPost]) -> CorpusStats:
    """Per-kind post counts and whitespace-token statistics over post bodies."""
    per_kind = {}
    for kind in POST_KINDS:
        counts = [len(p.body.split()) for p in posts if p.kind == kind]
        n = len(counts)
        mean = sum(counts) / n if n else 0.0
        if n >= 2:
            stdev = math.sqrt(sum((c - mean) ** 2 for c in counts) / (n - 1))
        else:
            stdev = 0.0
        per_kind[kind] = KindStats(
            post_count=n,
            mean_words=mean,
            stdev_words=stdev,
            total_words=sum(counts),
        )
    return CorpusStats(per_kind=per_kind, total_posts=len(posts))


def write_qa_pairs(pairs: list[QAPair], path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "pair_id": p.pair_id,
                "question_subject": p.question_subject,
                "question_body": p.question_body,
                "answer_body": p.answer_body,
                "answer_provenance": p.answer_provenance,
                "semester": p.semester,
                "folders": list(p.folders),
            }, ensure_ascii=False) + "\n")
    return len(pairs)


def read_qa_pairs(path) -> list[QAPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed JSON at line {line_no}: {exc.msg}") from exc
            pairs.append(QAPair(
                pair_id=rec["pair_id"],
                question_subject=rec["question_subject"],
                question_body=rec["question_body"],
                answer_body=rec["answer_body"],
                answer_provenance=rec["answer_provenance"],
                semester=rec["semester"],
                folders=tuple(rec.get("folders", [])),
            ))
    return pairs
