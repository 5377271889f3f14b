"""Byte-exact prompt assembly: chat prompt, RAG context block, judge prompt.

The rendered strings are pinned by golden files under tests/fixtures/golden;
any change here must update those fixtures deliberately.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .retrieval import RetrievedContext

DEFAULT_SYSTEM_PROMPT = (
    "You are a helpful, respectful, and honest teaching assistant for an introductory "
    "programming course in Matlab and C. Your current task is to answer student queries "
    "on Piazza. Always answer as helpfully as possible, while being safe. Your answers "
    "should not include any harmful, unethical, racist, sexist, toxic, dangerous, or "
    "illegal content. Please ensure that your responses are socially unbiased and "
    "positive in nature. If a question does not make any sense, or is not factually "
    "coherent, explain why instead of answering something not correct. If you don't "
    "know the answer to a question, please don't share false information."
)

RAG_LEAD = (
    "Here are some snippets from the course material & other uploaded content "
    "which might be helpful to generate the response."
)
RAG_CLOSE = "Above were the snippets. Now, here is the query to be answered:"

# Invisible separator breaks up literal ``` inside user text so the fenced
# query stays parseable; extraction reverses it.
_FENCE = "```"
_FENCE_ESCAPED = "`⁣`⁣`"

EVAL_PROMPT_TEMPLATE = """
You will be given one answer to a question written by a student on a Question-Answer platform for a Computer Science undergraduate course. You will also have access to the ground truth answer given by a human teaching assistant. Your task is to rate the answer on one metric. Please make sure you read and understand these instructions very carefully. Please keep the ground truth answer given by the teaching assistant in mind while reviewing, and refer to it as needed.

Evaluation Criteria:

{criteria}

Evaluation Steps:

{steps}

Example:

Question:

{question}

Ground Truth Answer:

{ground_truth}

Answer:

{answer}

Evaluation Form (scores ONLY):

- {metric_name}
"""

USEFULNESS_CRITERIA = """
Usefulness (0-2) -  judge whether a response would be useful to a Teaching Assistant in answering a student's question.

Here is the scale:
0 - A score of 0 means that the response is not useful at all. A Teaching Assistant would simply reject this answerbecause it is not a natural response, is irrelevant to the question, or is too verbose.
1 - A score of 1 means that the response is partially useful. A Teaching Assistant needs to edit this answer, but it still sounds natural and relevant so editing will not take long.
2 - A score of 2 means that the response is useful as is. A Teaching Assistant can use this response as is.
"""

USEFULNESS_STEPS = """
1. Read the question carefully.
2. Read the response carefully.
2. Read the ground truth answer carefully.
3. Consider whether the response would be useful to a Teaching Assistant in answering a student's question.
4. Assign a usefulness score from 0 to 2.
"""

ACCURACY_CRITERIA = """
Accuracy (0-2) - determine whether this response provides a factually correct answer to the question.

Here is the scale:
0 - A score of 0 means that the response is completely inaccurate. The answer is entirely incorrect or provides false information.
1 - A score of 1 means that the response is partially accurate. The answer lacks some correct information or contains incorrect or unnecessary information.
2 - A score of 2 means that the response is accurate. The answer is completely accurate, providing correct information and a valid solution.
"""

ACCURACY_STEPS = """
1. Read the question carefully.
2. Read the response carefully.
3. Read the ground truth answer carefully.
4. Consider whether this response provides a factually correct answer to the question.
5. Assign an accuracy score from 0 to 2.
"""

EVAL_METRICS = {
    "usefulness": {"name": "Usefulness", "criteria": USEFULNESS_CRITERIA, "steps": USEFULNESS_STEPS},
    "accuracy": {"name": "Accuracy", "criteria": ACCURACY_CRITERIA, "steps": ACCURACY_STEPS},
}


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    rag_block: str | None
    query_subject: str
    query_body: str
    rendered: str


def escape_fences(text: str) -> str:
    return text.replace(_FENCE, _FENCE_ESCAPED)


def unescape_fences(text: str) -> str:
    return text.replace(_FENCE_ESCAPED, _FENCE)


def render_rag_block(chunks: RetrievedContext | list[str]) -> str:
    """Context block: lead sentence, numbered snippets, closing sentence."""
    texts = chunks.texts() if isinstance(chunks, RetrievedContext) else list(chunks)
    if not texts:
        raise ValueError("cannot render a RAG block with no chunks")
    snippets = "\n\n".join(
        f"### Below is snippet {i}:\n{text}" for i, text in enumerate(texts, start=1)
    )
    return f"{RAG_LEAD}\n\n{snippets}\n\n{RAG_CLOSE}"


def render_chat_prompt(system: str = DEFAULT_SYSTEM_PROMPT, rag: str | None = None,
                       subject: str = "", body: str = "",
                       include_bos: bool = True) -> PromptBundle:
    """Assemble the chat prompt around the fenced query.

    Some serving stacks prepend the BOS token themselves; pass
    include_bos=False to leave out the leading "<s>".
    """
    if not subject or not body:
        raise ValueError("subject and body must be non-empty")
    rendered = (
        ("<s>" if include_bos else "")
        + "[INST] <<SYS>>\n"
        + system
        + " <</SYS>>\n"
        + (rag + "\n" if rag else "")
        + "Query subject: ```" + escape_fences(subject) + "```\n"
        + "Query body: ```" + escape_fences(body) + "```\n"
        + "Please answer the query. [/INST]"
    )
    return PromptBundle(
        system_text=system,
        rag_block=rag,
        query_subject=subject,
        query_body=body,
        rendered=rendered,
    )


_QUERY_RE = re.compile(
    r"Query subject: ```(.*?)```\nQuery body: ```(.*?)```\nPlease answer the query\. \[/INST\]",
    re.DOTALL,
)


def extract_query(rendered: str) -> tuple[str, str]:
    """Recover (subject, body) from a rendered chat prompt."""
    match = _QUERY_RE.search(rendered)
    if match is None:
        raise ValueError("rendered text does not contain a query block")
    return unescape_fences(match.group(1)), unescape_fences(match.group(2))


def render_eval_prompt(metric: str, question: str, ground_truth: str, answer: str) -> str:
    """Instantiate the judge prompt for one metric on one answer."""
    if metric not in EVAL_METRICS:
        raise ValueError(f"unknown metric '{metric}' (expected one of {sorted(EVAL_METRICS)})")
    if not question or not ground_truth or not answer:
        raise ValueError("question, ground_truth, and answer must be non-empty")
    metric_def = EVAL_METRICS[metric]
    return EVAL_PROMPT_TEMPLATE.format(
        criteria=metric_def["criteria"],
        steps=metric_def["steps"],
        question=question,
        ground_truth=ground_truth,
        answer=answer,
        metric_name=metric_def["name"],
    )
