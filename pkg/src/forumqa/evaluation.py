"""Rubric score handling, aggregation, correlation statistics, and BERTScore.

Human and LLM rubric scores live on the 3-level scale {0, 0.5, 1}; the judge
prompt asks for 0-2, so raw judge scores are halved. Correlations are plain
sample statistics written out from their defining formulas.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LEVELS = (0.0, 0.5, 1.0)
_LEVEL_INDEX = {0.0: 0, 0.5: 1, 1.0: 2}


class ScoreParseError(ValueError):
    def __init__(self, message: str, response: str):
        super().__init__(message)
        self.response = response


@dataclass(frozen=True)
class RubricScore:
    usefulness: float
    accuracy: float

    def __post_init__(self):
        for value in (self.usefulness, self.accuracy):
            if value not in _LEVEL_INDEX:
                raise ValueError(f"rubric scores must be one of {LEVELS}, got {value}")

    @property
    def average(self) -> float:
        return (self.usefulness + self.accuracy) / 2


@dataclass
class EvalRecord:
    question_id: str
    model_id: str
    answer: str
    human: RubricScore | None = None
    llm: RubricScore | None = None
    bertscore_f1: float | None = None

    def __post_init__(self):
        if self.human is None and self.llm is None and self.bertscore_f1 is None:
            raise ValueError("eval record carries no score at all")


@dataclass(frozen=True)
class CorrelationReport:
    metric_pair: str
    pearson_r: float
    spearman_rho: float
    kendall_tau: float
    n: int


@dataclass(frozen=True)
class ConfusionMatrix3:
    """3x3 fractions over human rating (rows) x LLM rating (cols) on {0, 0.5, 1}."""
    cells: tuple[tuple[float, float, float], ...]
    n: int

    def total(self) -> float:
        return sum(sum(row) for row in self.cells)

    def diagonal_sum(self) -> float:
        return sum(self.cells[i][i] for i in range(3))


def parse_llm_score(response: str, metric_name: str) -> int:
    """First integer 0-2 following the metric name, or a bare leading integer."""
    if not response:
        raise ScoreParseError("empty judge response", response)
    named = re.search(
        re.escape(metric_name) + r"\s*[:\-]?\s*([0-2])\b", response, re.IGNORECASE
    )
    if named:
        return int(named.group(1))
    bare = re.match(r"\s*([0-2])\b", response)
    if bare:
        return int(bare.group(1))
    raise ScoreParseError(
        f"no {metric_name} score in 0-2 found in judge response", response
    )


def normalize_score(raw: int) -> float:
    """Map the judge's 0-2 scale onto the rubric's {0, 0.5, 1}."""
    if raw not in (0, 1, 2):
        raise ValueError(f"raw score must be 0, 1, or 2, got {raw}")
    return raw / 2


_METRIC_GETTERS = {
    "human_usefulness": lambda r: r.human.usefulness if r.human else None,
    "human_accuracy": lambda r: r.human.accuracy if r.human else None,
    "llm_usefulness": lambda r: r.llm.usefulness if r.llm else None,
    "llm_accuracy": lambda r: r.llm.accuracy if r.llm else None,
    "bertscore_f1": lambda r: r.bertscore_f1,
}


def aggregate(records: Sequence[EvalRecord]) -> list[dict]:
    """Per-model mean and sample stdev for each metric, rows sorted by model.

    Single-observation groups report stdev 0 and are flagged.
    """
    if not records:
        raise ValueError("no records to aggregate")
    rows = []
    for model_id in sorted({r.model_id for r in records}):
        group = [r for r in records if r.model_id == model_id]
        metrics = {}
        for name, getter in _METRIC_GETTERS.items():
            values = [getter(r) for r in group if getter(r) is not None]
            if not values:
                continue
            n = len(values)
            mean = sum(values) / n
            stdev = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
            metrics[name] = {"mean": mean, "stdev": stdev, "n": n, "single": n == 1}
        rows.append({"model_id": model_id, "metrics": metrics})
    return rows


def _require_valid(xs: Sequence[float], ys: Sequence[float]) -> None:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least 2 observations")
    if min(xs) == max(xs) or min(ys) == max(ys):
        raise ValueError("undefined correlation: constant sequence")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample covariance over the product of sample standard deviations."""
    _require_valid(xs, ys)
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / (n - 1)
    sx = math.sqrt(sum((x - mx) ** 2 for x in xs) / (n - 1))
    sy = math.sqrt(sum((y - my) ** 2 for y in ys) / (n - 1))
    return cov / (sx * sy)


def average_ranks(xs: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their rank positions."""
    n = len(xs)
    order = sorted(range(n), key=lambda i: xs[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of the average-ranked sequences."""
    _require_valid(xs, ys)
    return pearson(average_ranks(xs), average_ranks(ys))


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tau-b: (C - D) / sqrt((C + D + Tx)(C + D + Ty)) over all pairs."""
    _require_valid(xs, ys)
    n = len(xs)
    concordant = discordant = tied_x_only = tied_y_only = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (xs[i] > xs[j]) - (xs[i] < xs[j])
            dy = (ys[i] > ys[j]) - (ys[i] < ys[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tied_x_only += 1
            elif dy == 0:
                tied_y_only += 1
            elif dx == dy:
                concordant += 1
            else:
                discordant += 1
    pairs = concordant + discordant
    denom = math.sqrt((pairs + tied_x_only) * (pairs + tied_y_only))
    if denom == 0:
        raise ValueError("undefined correlation: all pairs tied")
    return (concordant - discordant) / denom


def correlation_report(name: str, xs: Sequence[float], ys: Sequence[float]) -> CorrelationReport:
    return CorrelationReport(
        metric_pair=name,
        pearson_r=pearson(xs, ys),
        spearman_rho=spearman(xs, ys),
        kendall_tau=kendall_tau(xs, ys),
        n=len(xs),
    )


def confusion_matrix(records: Sequence[EvalRecord], metric: str) -> ConfusionMatrix3:
    """Fractions of dual-scored records per (human level, LLM level) cell."""
    if metric not in ("usefulness", "accuracy"):
        raise ValueError(f"metric must be 'usefulness' or 'accuracy', got '{metric}'")
    dual = [r for r in records if r.human is not None and r.llm is not None]
    if not dual:
        raise ValueError("no records scored by both human and LLM")
    counts = [[0, 0, 0] for _ in range(3)]
    for r in dual:
        i = _LEVEL_INDEX[getattr(r.human, metric)]
        j = _LEVEL_INDEX[getattr(r.llm, metric)]
        counts[i][j] += 1
    n = len(dual)
    cells = tuple(tuple(c / n for c in row) for row in counts)
    return ConfusionMatrix3(cells=cells, n=n)


def bertscore_f1(candidate_vecs: Sequence[Sequence[float]],
                 reference_vecs: Sequence[Sequence[float]]) -> float:
    """Greedy max-cosine token matching F1.

    Precision averages, over candidate tokens, the best cosine similarity to
    any reference token; recall is symmetric; F1 is their harmonic mean, with
    F1 = 0 when P + R = 0.
    """
    if not len(candidate_vecs) or not len(reference_vecs):
        raise ValueError("token vector lists must be non-empty")
    cand = np.asarray(candidate_vecs, dtype=float)
    ref = np.asarray(reference_vecs, dtype=float)
    if cand.ndim != 2 or ref.ndim != 2 or cand.shape[1] != ref.shape[1]:
        raise ValueError("token vectors must be 2-D with a shared dimension")
    cn = np.linalg.norm(cand, axis=1)
    rn = np.linalg.norm(ref, axis=1)
    if np.any(cn == 0.0) or np.any(rn == 0.0):
        raise ValueError("cosine similarity undefined for zero vector")
    sims = (cand / cn[:, None]) @ (ref / rn[:, None]).T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def bertscore_for_texts(embedder, candidate: str, reference: str) -> float | None:
    """Whitespace-token BERTScore via the embedding provider; None if either
    side has no tokens."""
    cand_tokens = candidate.lower().split()
    ref_tokens = reference.lower().split()
    if not cand_tokens or not ref_tokens:
        return None
    cand_vecs = embedder.embed(cand_tokens)
    ref_vecs = embedder.embed(ref_tokens)
    return bertscore_f1(cand_vecs, ref_vecs)


def read_human_scores(path) -> dict[tuple[str, str], RubricScore]:
    """CSV columns question_id, model_id, usefulness, accuracy on {0, 0.5, 1}."""
    scores = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"question_id", "model_id", "usefulness", "accuracy"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"human scores CSV must have columns {sorted(required)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                score = RubricScore(
                    usefulness=float(row["usefulness"]),
                    accuracy=float(row["accuracy"]),
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"bad rubric value at CSV line {row_no}: {exc}") from exc
            scores[(row["question_id"], row["model_id"])] = score
    return scores


def _fmt_cell(entry: dict | None) -> str:
    if entry is None:
        return "-"
    return f"{entry['mean']:.2f} (± {entry['stdev']:.2f})"


def render_score_table(rows: list[dict]) -> str:
    """Plain-text table: model rows, usefulness/accuracy/avg per evaluator,
    BertScore column."""
    header = [
        "Model",
        "Human Usefulness", "Human Accuracy", "Human Avg",
        "LLM Usefulness", "LLM Accuracy", "LLM Avg",
        "BertScore F1",
    ]
    table = [header]
    for row in rows:
        m = row["metrics"]

        def avg_of(u_key: str, a_key: str) -> str:
            u, a = m.get(u_key), m.get(a_key)
            if u is None or a is None:
                return "-"
            return f"{(u['mean'] + a['mean']) / 2:.2f}"

        bert = m.get("bertscore_f1")
        table.append([
            row["model_id"],
            _fmt_cell(m.get("human_usefulness")),
            _fmt_cell(m.get("human_accuracy")),
            avg_of("human_usefulness", "human_accuracy"),
            _fmt_cell(m.get("llm_usefulness")),
            _fmt_cell(m.get("llm_accuracy")),
            avg_of("llm_usefulness", "llm_accuracy"),
            f"{bert['mean']:.3f}" if bert else "-",
        ])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(table):
        lines.append(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
