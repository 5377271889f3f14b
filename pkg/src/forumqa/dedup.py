"""Near-duplicate query removal via embeddings and agglomerative clustering.

Queries are embedded (subject + newline + body), clustered bottom-up with
average linkage on cosine distance until the smallest inter-cluster distance
exceeds the threshold, and one representative per cluster is retained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ingest import QAPair


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_id: int
    member_pair_ids: tuple[str, ...]
    representative: str  # lowest member pair_id


def embedding_text(pair: QAPair) -> str:
    """Text embedded for dedup: the query only, answers are not embedded."""
    return f"{pair.question_subject}\n{pair.question_body}"


def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """1 - cos(a, b), in [0, 2]. Rejects zero vectors and dim mismatches."""
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance undefined for zero vector")
    return 1.0 - float(np.dot(va, vb)) / (na * nb)


def agglomerative_cluster(
    vectors: Mapping[str, Sequence[float]], threshold: float
) -> list[ClusterAssignment]:
    """Average-linkage agglomerative clustering on cosine distance.

    Merging continues while the smallest inter-cluster linkage distance is
    <= threshold. Ties are broken towards the pair of clusters with the
    lowest member pair_ids, which makes the result deterministic.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if not vectors:
        raise ValueError("no vectors to cluster")

    ids = sorted(vectors)
    mat = np.asarray([vectors[i] for i in ids], dtype=float)
    if mat.ndim != 2:
        raise ValueError("vectors must share one dimension")
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine distance undefined for zero vector")
    unit = mat / norms[:, None]
    dist = 1.0 - unit @ unit.T
    np.fill_diagonal(dist, np.inf)

    n = len(ids)
    # cluster occupying slot i is keyed by ids[i], its smallest member
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = np.ones(n, dtype=bool)

    while active.sum() > 1:
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        d_min = masked.min()
        if not math.isfinite(d_min) or d_min > threshold:
            break
        cand = np.argwhere(masked == d_min)
        i, j = min((min(a, b), max(a, b)) for a, b in cand)
        ni, nj = len(members[i]), len(members[j])
        # Lance-Williams update for average linkage
        merged_row = (ni * dist[i] + nj * dist[j]) / (ni + nj)
        dist[i, :] = merged_row
        dist[:, i] = merged_row
        dist[i, i] = np.inf
        members[i].extend(members.pop(j))
        active[j] = False

    clusters = []
    for slot in sorted(members):
        ms = sorted(ids[k] for k in members[slot])
        clusters.append(ClusterAssignment(
            cluster_id=len(clusters),
            member_pair_ids=tuple(ms),
            representative=ms[0],
        ))
    return clusters


def deduplicate(pairs: list[QAPair], clusters: list[ClusterAssignment]) -> list[QAPair]:
    """Keep one representative per cluster, preserving input order.

    The representative is the first member by (semester, pair_id) order.
    Raises if the clusters do not exactly partition the pairs.
    """
    by_id = {p.pair_id: p for p in pairs}
    seen: set[str] = set()
    keep: set[str] = set()
    for cluster in clusters:
        for pid in cluster.member_pair_ids:
            if pid in seen:
                raise ValueError(f"pair '{pid}' appears in more than one cluster")
            if pid not in by_id:
                raise ValueError(f"cluster member '{pid}' not among the input pairs")
            seen.add(pid)
        rep = min(cluster.member_pair_ids, key=lambda pid: (by_id[pid].semester, pid))
        keep.add(rep)
    missing = set(by_id) - seen
    if missing:
        raise ValueError(f"pairs missing from clusters: {sorted(missing)[:5]}")
    return [p for p in pairs if p.pair_id in keep]


def write_cluster_report(clusters: list[ClusterAssignment], threshold: float, path,
                         extra: dict | None = None) -> None:
    report = dict(extra or {})
    report["threshold"] = threshold
    report["clusters"] = [
        {
            "cluster_id": c.cluster_id,
            "members": list(c.member_pair_ids),
            "representative": c.representative,
        }
        for c in clusters
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
