"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
"""

import inspect
import json
import math
import random
import string
import time
from contextlib import contextmanager

import pytest

from forumqa import cli
from forumqa.chunker import ChunkerConfig, SourceDocument, split_document
from forumqa.dedup import agglomerative_cluster, deduplicate, embedding_text
from forumqa.evaluation import bertscore_f1, kendall_tau, pearson, spearman
from forumqa.generation import StubEmbeddingClient
from forumqa.ingest import ForumPost, Revision, extract_qa_pairs, parse_forum_export
from forumqa.preference import build_preference_pairs, export_dpo_dataset
from forumqa.prompt import render_chat_prompt, render_eval_prompt, render_rag_block
from forumqa.retrieval import (
    Bm25Index,
    DenseIndex,
    bm25_score,
    bm25_top_k,
    dense_top_k,
    hybrid_retrieve,
)
from oracles import (
    bertscore_oracle,
    bm25_rank_oracle,
    bm25_score_oracle,
    kendall_pair_counts,
    kendall_tau_oracle,
    pearson_oracle,
    reconstruct_from_chunks,
    spearman_oracle,
)


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:02d} FAIL - {description}")
        raise
    else:
        print(f"ACCEPTANCE {number:02d} PASS - {description}")


def test_criterion_1_bm25_oracle_equivalence():
    with criterion(1, "BM25 matches brute-force Okapi scorer on 200 random corpora"):
        rng = random.Random(101)
        vocab = ["loop", "matlab", "exam", "vector", "printf", "cat", "lab",
                 "array", "while", "mod", "plot", "file"]
        started = time.perf_counter()
        for _ in range(200):
            n_chunks = rng.randrange(1, 21)
            tokens = {
                f"c{i:02d}": [rng.choice(vocab) for _ in range(rng.randrange(1, 15))]
                for i in range(n_chunks)
            }
            if rng.random() < 0.3 and n_chunks >= 2:
                tokens["c00"] = list(tokens["c01"])  # force score ties
            texts = {key: " ".join(toks) for key, toks in tokens.items()}
            index = Bm25Index.build(texts)
            query_terms = [rng.choice(vocab) for _ in range(rng.randrange(1, 9))]
            expected_scores = bm25_score_oracle(tokens, query_terms)
            for key in tokens:
                got = bm25_score(index, query_terms, key)
                assert abs(got - expected_scores[key]) <= 1e-9
            k = rng.randrange(1, n_chunks + 2)
            expected_rank = [key for key, _ in bm25_rank_oracle(tokens, query_terms, k)]
            got_rank = [key for key, _ in bm25_top_k(index, " ".join(query_terms), k)]
            assert got_rank == expected_rank
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_criterion_2_hybrid_union_policy():
    with criterion(2, "hybrid union covers both top lists in 500 random trials"):
        signature = inspect.signature(hybrid_retrieve)
        assert signature.parameters["dense_k"].default == 3
        assert signature.parameters["bm25_k"].default == 2
        rng = random.Random(202)
        vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
        for _ in range(500):
            n = rng.randrange(1, 12)
            keys = [f"c{i:02d}" for i in range(n)]
            texts = {
                k: " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 8)))
                for k in keys
            }
            vectors = {
                k: [rng.uniform(-1, 1) or 0.5 for _ in range(4)] for k in keys
            }
            dense = DenseIndex(vectors)
            bm25 = Bm25Index.build(texts)
            query = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 4)))
            query_vec = [rng.uniform(-1, 1) or 0.5 for _ in range(4)]
            ctx = hybrid_retrieve(dense, bm25, query, query_vec)
            got_keys = [item.chunk_key for item in ctx]
            assert len(got_keys) == len(set(got_keys))
            assert len(got_keys) <= 3 + 2
            dense_top = {k for k, _ in dense_top_k(dense, query_vec, 3)}
            bm25_top = {k for k, _ in bm25_top_k(bm25, query, 2)}
            assert set(got_keys) >= dense_top | bm25_top


def test_criterion_3_chunker_cap_and_coverage():
    with criterion(3, "1000 random docs: cap 1000 chars and byte-exact coverage"):
        rng = random.Random(303)
        cfg = ChunkerConfig()  # 1000 / 100
        alphabet = string.ascii_lowercase + "  \n"
        started = time.perf_counter()
        for i in range(1000):
            style = i % 4
            n = rng.randrange(1, 4000)
            if style == 0:
                text = "a" * n  # separator-free
            elif style == 1:
                text = "".join(rng.choice(" \n") for _ in range(n))  # whitespace only
            elif style == 2:
                paragraphs = [
                    "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 400)))
                    for _ in range(rng.randrange(1, 8))
                ]
                text = "\n\n".join(paragraphs)
            else:
                text = "".join(rng.choice(alphabet + "\n") for _ in range(n))
            doc = SourceDocument(doc_id=f"d{i}", title="", text=text)
            chunks = split_document(doc, cfg)
            for c in chunks:
                assert len(c.text) <= cfg.max_chars
            assert reconstruct_from_chunks(chunks, cfg.overlap_chars) == text.replace("\r\n", "\n")
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"took {elapsed:.2f}s"


def test_criterion_4_prompt_golden_files(golden_dir):
    with criterion(4, "prompt renderings byte-identical to golden fixtures"):
        subject, body = "Lab 3", "How do loops work?"
        chunk = ("Loops in Matlab repeat a block of statements. A for loop runs a fixed "
                 "number of times; a while loop runs until its condition becomes false.")
        question = "Lab 3\nHow do loops work?"
        ground_truth = ("Use a for loop when the iteration count is known in advance; "
                        "use a while loop otherwise.")
        answer = "A for loop repeats code a fixed number of times."

        no_rag = render_chat_prompt(subject=subject, body=body).rendered
        assert no_rag.encode() == (golden_dir / "chat_prompt_norag.txt").read_bytes()

        with_rag = render_chat_prompt(
            rag=render_rag_block([chunk]), subject=subject, body=body
        ).rendered
        assert with_rag.encode() == (golden_dir / "chat_prompt_rag.txt").read_bytes()

        useful = render_eval_prompt("usefulness", question, ground_truth, answer)
        assert useful.encode() == (golden_dir / "eval_prompt_usefulness.txt").read_bytes()

        accurate = render_eval_prompt("accuracy", question, ground_truth, answer)
        assert accurate.encode() == (golden_dir / "eval_prompt_accuracy.txt").read_bytes()


def test_criterion_5_correlation_statistics():
    with criterion(5, "correlations match formula oracles within 1e-12 on 500 sequences"):
        rng = random.Random(505)
        trials = 0
        while trials < 500:
            n = rng.randrange(2, 25)
            if rng.random() < 0.6:  # tie-heavy integer sequences
                xs = [float(rng.randrange(0, 6)) for _ in range(n)]
                ys = [float(rng.randrange(0, 6)) for _ in range(n)]
            else:
                xs = [rng.uniform(-100, 100) for _ in range(n)]
                ys = [rng.uniform(-100, 100) for _ in range(n)]
            if min(xs) == max(xs) or min(ys) == max(ys):
                continue
            trials += 1
            r = pearson(xs, ys)
            rho = spearman(xs, ys)
            tau = kendall_tau(xs, ys)
            assert abs(r - pearson_oracle(xs, ys)) <= 1e-12
            assert abs(rho - spearman_oracle(xs, ys)) <= 1e-12
            assert abs(tau - kendall_tau_oracle(xs, ys)) <= 1e-12
            for value in (r, rho, tau):
                assert -1 - 1e-12 <= value <= 1 + 1e-12
            # monotone-transform invariance of spearman
            scaled = [2 * x + 7 for x in xs]
            assert abs(spearman(scaled, ys) - rho) <= 1e-12
            if max(xs) < 500:
                warped = [math.exp(x / 50) for x in xs]
                assert abs(spearman(warped, ys) - rho) <= 1e-12
            # tie-free tau equals the plain pair-count formula exactly
            if len(set(xs)) == n and len(set(ys)) == n:
                c, d = kendall_pair_counts(xs, ys)
                assert tau == (c - d) / (n * (n - 1) / 2)


def test_criterion_6_dedup_merging_and_monotonicity(mini_dir):
    with criterion(6, "exact duplicates merge; threshold sweep monotone; idempotent"):
        stub = StubEmbeddingClient()
        posts = parse_forum_export(mini_dir / "forum_export.jsonl")
        pairs = extract_qa_pairs(posts)

        def vectors_for(ps):
            vecs = stub.embed([embedding_text(p) for p in ps])
            return dict(zip((p.pair_id for p in ps), vecs))

        # identical-text queries (q01 / q05) merge for any threshold > 0
        for threshold in (1e-12, 1e-6, 0.05, 0.2, 0.5, 1.0):
            clusters = agglomerative_cluster(vectors_for(pairs), threshold)
            by_member = {pid: c.cluster_id for c in clusters for pid in c.member_pair_ids}
            assert by_member["2022s1-q01"] == by_member["2022s1-q05"]

        # monotonicity across the sweep on a synthetic corpus with structure
        rng = random.Random(606)
        synth = {}
        for g in range(6):
            base = [rng.uniform(0.1, 1.0) for _ in range(8)]
            for m in range(4):
                jittered = [x + rng.uniform(-0.02 * g, 0.02 * g) for x in base]
                synth[f"g{g}m{m}"] = jittered
        sweep = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
        counts = [len(agglomerative_cluster(synth, t)) for t in sweep]
        assert counts == sorted(counts, reverse=True)

        # idempotence on the mini fixture
        once = deduplicate(pairs, agglomerative_cluster(vectors_for(pairs), 0.2))
        twice = deduplicate(once, agglomerative_cluster(vectors_for(once), 0.2))
        assert twice == once


def test_criterion_7_ground_truth_rules(mini_dir):
    with criterion(7, "12-post fixture extracts exactly the hand-derived pairs"):
        posts = parse_forum_export(mini_dir / "forum_export.jsonl")
        assert len(posts) == 12
        pairs = extract_qa_pairs(posts)
        by_id = {p.pair_id: p for p in pairs}
        assert sorted(by_id) == ["2022s1-q01", "2022s1-q02", "2022s1-q05"]
        # instructor answer beats the student answer, final revision body used
        q01 = by_id["2022s1-q01"]
        assert q01.answer_provenance == "instructor"
        assert q01.answer_body.startswith("A for loop repeats statements")
        assert "for i = 1:10" in q01.answer_body
        # student-only question takes the latest student answer
        q02 = by_id["2022s1-q02"]
        assert q02.answer_provenance == "student"
        assert q02.answer_body.startswith("Make sure you update the loop variable")
        # image-bearing q04 and unanswered q03 are absent, followup never pairs
        assert "2022s1-q03" not in by_id and "2022s1-q04" not in by_id


def test_criterion_8_preference_pairs(tmp_path):
    with criterion(8, "preference pairs match hand-derived fields; DPO export exact"):
        def post(pid, kind, parent, bodies, has_images=False):
            ts = [f"2022-03-01T{9 + i:02d}:00:00" for i in range(len(bodies))]
            return ForumPost(
                post_id=pid, semester="2022s1", kind=kind, subject="Subj",
                folders=(), has_images=has_images,
                author_role="instructor" if kind == "i_answer" else "student",
                parent_id=parent,
                revisions=tuple(Revision(ts=t, body=b) for t, b in zip(ts, bodies)),
            )

        question = post("q1", "question", None, ["What does % do?"])
        posts = [
            question,
            post("a0", "i_answer", "q1", []),                      # 0 revisions
            post("a1", "i_answer", "q1", ["short answer"]),        # 1 revision
            post("a2", "i_answer", "q1", ["v1", "v1 plus detail"]),  # 2 revisions
            post("a3", "s_answer", "q1", ["w1", "w2", "w3 final"]),  # 3 revisions
        ]
        pairs = build_preference_pairs(posts)
        assert len(pairs) == 2
        by_first = {p.output1: p for p in pairs}
        assert by_first["v1"].output2 == "v1 plus detail"
        assert by_first["w1"].output2 == "w3 final"  # intermediate w2 skipped
        for p in pairs:
            assert p.preference == 2
            assert p.output1 != p.output2
            assert p.instruction == "Subj\nWhat does % do?"

        path = tmp_path / "dpo.jsonl"
        export_dpo_dataset(pairs, path)
        for line in path.read_text().splitlines():
            record = json.loads(line)
            assert list(record) == ["instruction", "output1", "output2", "preference"]
            assert record["preference"] == 2


def test_criterion_9_bertscore_formula():
    with criterion(9, "BERTScore exact endpoints and oracle agreement on 50 fixtures"):
        # exactly-representable unit vectors keep the endpoint checks exact
        x = [(0.5, 0.5, 0.5, 0.5), (1.0, 0.0, 0.0, 0.0), (0.5, -0.5, -0.5, 0.5)]
        assert bertscore_f1(x, x) == 1.0
        cand = [(1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0)]
        ref = [(0.0, 0.0, 1.0, 0.0), (0.0, 0.0, 0.0, 1.0)]
        assert bertscore_f1(cand, ref) == 0.0

        rng = random.Random(909)
        for _ in range(50):
            dim = rng.randrange(2, 8)
            cand = [[rng.uniform(-1, 1) or 0.3 for _ in range(dim)]
                    for _ in range(rng.randrange(1, 7))]
            ref = [[rng.uniform(-1, 1) or 0.3 for _ in range(dim)]
                   for _ in range(rng.randrange(1, 7))]
            got = bertscore_f1(cand, ref)
            assert abs(got - bertscore_oracle(cand, ref)) <= 1e-9


def test_criterion_10_end_to_end_offline_smoke(pipeline_env):
    with criterion(10, "six offline commands complete under 30s with a valid report"):
        started = time.perf_counter()
        base = ["--config", str(pipeline_env["config"]), "--offline"]
        assert cli.main([*base, "ingest"]) == 0
        assert cli.main([*base, "dedup"]) == 0
        assert cli.main([*base, "prefs"]) == 0
        assert cli.main([*base, "index"]) == 0
        assert cli.main([*base, "ask", "--subject", "fgetl usage",
                         "--body", "How does fgetl work when reading a file?"]) == 0
        assert cli.main([*base, "eval",
                         "--answers", str(pipeline_env["answers"]),
                         "--human-scores", str(pipeline_env["human_scores"])]) == 0
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"took {elapsed:.2f}s"

        report = json.loads((pipeline_env["out"] / "eval_report.json").read_text())
        table = report["table"]
        assert "(±" in table  # mean ± stdev columns
        for column in ("Human Usefulness", "Human Accuracy", "Human Avg",
                       "LLM Usefulness", "LLM Accuracy", "LLM Avg", "BertScore F1"):
            assert column in table
        assert set(report["confusion_matrices"]) == {"usefulness", "accuracy"}
        for matrix in report["confusion_matrices"].values():
            cells = matrix["cells"]
            assert len(cells) == 3 and all(len(row) == 3 for row in cells)
            assert all(v >= 0 for row in cells for v in row)
            assert abs(sum(sum(row) for row in cells) - 1.0) <= 1e-9
