"""Preference pairs from answer edit histories, plus SFT/DPO dataset export.

An answer that was edited yields one pair: the first revision (non-preferred)
against the final revision (preferred). Exported DPO records carry exactly
the four keys instruction/output1/output2/preference, with preference fixed
at 2 (the second output is the preferred one).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from .ingest import ANSWER_KINDS, ForumPost, QAPair

logger = logging.getLogger(__name__)

PREFERRED_INDEX = 2  # output2, the final revision, is always preferred

_WS_RUN = re.compile(r"\s+")


def _normalized(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


@dataclass(frozen=True)
class PreferencePair:
    instruction: str
    output1: str  # original answer revision
    output2: str  # final answer revision
    preference: int = PREFERRED_INDEX
    answer_provenance: str = "instructor"  # metadata only, not part of the DPO record


def build_preference_pairs(posts: list[ForumPost]) -> list[PreferencePair]:
    """One pair per edited answer attached to an image-free question.

    Answers need at least two revisions and a real text change (whitespace-only
    edits are ignored). Intermediate revisions are skipped: the pair is always
    first versus last. Answers on image-bearing posts or with unresolvable
    parents produce nothing.
    """
    questions = {p.post_id: p for p in posts if p.kind == "question"}
    pairs = []
    for post in posts:
        if post.kind not in ANSWER_KINDS:
            continue
        parent = questions.get(post.parent_id or "")
        if parent is None:
            logger.warning("answer %s has no resolvable parent %r; skipped", post.post_id, post.parent_id)
            continue
        if parent.has_images or post.has_images:
            continue
        if len(post.revisions) < 2:
            continue
        first = post.revisions[0].body
        last = post.revisions[-1].body
        if _normalized(first) == _normalized(last):
            continue
        pairs.append(
            PreferencePair(
                instruction=f"{parent.subject}\n{parent.body}",
                output1=first,
                output2=last,
                answer_provenance="instructor" if post.kind == "i_answer" else "student",
            )
        )
    return pairs


def export_sft_dataset(pairs: list[QAPair], path) -> int:
    """Write instruction/output JSON-lines for supervised fine-tuning."""
    if not pairs:
        raise ValueError("empty dataset")
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "instruction": f"{p.question_subject}\n{p.question_body}",
                "output": p.answer_body,
            }, ensure_ascii=False) + "\n")
    return len(pairs)


def export_dpo_dataset(prefs: list[PreferencePair], path) -> int:
    """Write the four-field DPO JSON-lines records."""
    if not prefs:
        raise ValueError("empty dataset")
    with open(path, "w", encoding="utf-8") as fh:
        for p in prefs:
            fh.write(json.dumps({
                "instruction": p.instruction,
                "output1": p.output1,
                "output2": p.output2,
                "preference": p.preference,
            }, ensure_ascii=False) + "\n")
    return len(prefs)


def export_dpo_provenance(prefs: list[PreferencePair], path) -> int:
    """Sidecar metadata, line-aligned with the DPO dataset."""
    if not prefs:
        raise ValueError("empty dataset")
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(prefs):
            fh.write(json.dumps({"record": i, "answer_provenance": p.answer_provenance}) + "\n")
    return len(prefs)
