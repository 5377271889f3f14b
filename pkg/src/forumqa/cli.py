"""Pipeline CLI: ingest | dedup | prefs | index | ask | eval.

Each command reads the shared config, takes an exclusive lock on the
directory it writes, and stamps its artifacts with the config hash and seed
(JSON artifacts embed them; JSON-lines datasets get a .meta.json sidecar so
their record format stays exactly as specified).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import chunker, dedup, evaluation, generation, ingest, preference, prompt, retrieval
from .config import PipelineConfig, load_config


class MissingArtifactError(FileNotFoundError):
    pass


@contextmanager
def _directory_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / ".forumqa.lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"output directory {directory} is locked by another run "
            f"(remove {lock_path} if that run is gone)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _write_meta(artifact: Path, config: PipelineConfig, command: str) -> None:
    meta = {"config_hash": config.config_hash, "seed": config.seed, "command": command}
    artifact.with_suffix(artifact.suffix + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run 'forumqa {producer}' first")
    return path


def _stamp(config: PipelineConfig) -> dict:
    return {"config_hash": config.config_hash, "seed": config.seed}


def cmd_ingest(config: PipelineConfig, args) -> int:
    export = config.path("forum_export")
    if not export.exists():
        raise FileNotFoundError(f"forum export {export} does not exist")
    out_dir = config.path("output_dir")
    with _directory_lock(out_dir):
        posts = ingest.parse_forum_export(export)
        pairs = ingest.extract_qa_pairs(posts)
        stats = ingest.corpus_stats(posts)

        pairs_path = out_dir / "qa_pairs.jsonl"
        ingest.write_qa_pairs(pairs, pairs_path)
        _write_meta(pairs_path, config, "ingest")

        stats_doc = _stamp(config)
        stats_doc["total_posts"] = stats.total_posts
        stats_doc["per_kind"] = {
            kind: {
                "post_count": ks.post_count,
                "mean_words": ks.mean_words,
                "stdev_words": ks.stdev_words,
                "total_words": ks.total_words,
            }
            for kind, ks in stats.per_kind.items()
        }
        (out_dir / "corpus_stats.json").write_text(
            json.dumps(stats_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    print(f"ingest: {len(posts)} posts -> {len(pairs)} qa pairs ({pairs_path})")
    return 0


def cmd_dedup(config: PipelineConfig, args) -> int:
    out_dir = config.path("output_dir")
    pairs_path = _require(out_dir / "qa_pairs.jsonl", "ingest")
    with _directory_lock(out_dir):
        pairs = ingest.read_qa_pairs(pairs_path)
        if not pairs:
            raise ValueError("no qa pairs to deduplicate")
        embedder = config.provider("embeddings")
        vectors = generation.embed_texts(embedder, [dedup.embedding_text(p) for p in pairs])
        by_id = {p.pair_id: v for p, v in zip(pairs, vectors)}
        clusters = dedup.agglomerative_cluster(by_id, threshold=config.dedup_threshold)
        kept = dedup.deduplicate(pairs, clusters)

        deduped_path = out_dir / "qa_pairs_deduped.jsonl"
        ingest.write_qa_pairs(kept, deduped_path)
        _write_meta(deduped_path, config, "dedup")
        dedup.write_cluster_report(
            clusters, config.dedup_threshold, out_dir / "cluster_report.json",
            extra=_stamp(config),
        )
    print(f"dedup: {len(pairs)} -> {len(kept)} pairs across {len(clusters)} clusters")
    return 0


def cmd_prefs(config: PipelineConfig, args) -> int:
    export = config.path("forum_export")
    if not export.exists():
        raise FileNotFoundError(f"forum export {export} does not exist")
    out_dir = config.path("output_dir")
    deduped_path = _require(out_dir / "qa_pairs_deduped.jsonl", "dedup")
    with _directory_lock(out_dir):
        posts = ingest.parse_forum_export(export)
        prefs = preference.build_preference_pairs(posts)
        pairs = ingest.read_qa_pairs(deduped_path)

        sft_path = out_dir / "sft_pairs.jsonl"
        n_sft = preference.export_sft_dataset(pairs, sft_path)
        _write_meta(sft_path, config, "prefs")

        dpo_path = out_dir / "dpo_pairs.jsonl"
        n_dpo = preference.export_dpo_dataset(prefs, dpo_path)
        _write_meta(dpo_path, config, "prefs")
        preference.export_dpo_provenance(prefs, out_dir / "dpo_provenance.jsonl")
    print(f"prefs: {n_sft} sft records, {n_dpo} dpo records")
    return 0


def cmd_index(config: PipelineConfig, args) -> int:
    docs_dir = config.path("docs_dir")
    if not docs_dir.is_dir():
        raise FileNotFoundError(f"course documents directory {docs_dir} does not exist")
    index_dir = config.path("index_dir")
    with _directory_lock(index_dir):
        chunks: list[chunker.DocumentChunk] = []
        for doc_path in sorted(docs_dir.iterdir()):
            if not doc_path.is_file():
                continue
            doc = chunker.SourceDocument(
                doc_id=doc_path.stem,
                title=doc_path.stem,
                text=doc_path.read_text(encoding="utf-8"),
            )
            chunks.extend(chunker.split_document(doc, config.chunker))
        if not chunks:
            raise ValueError(f"no chunks produced from {docs_dir}")

        chunks_path = index_dir / "chunks.jsonl"
        chunker.write_chunks(chunks, chunks_path)
        _write_meta(chunks_path, config, "index")

        texts = {chunker.chunk_key(c): c.text for c in chunks}
        bm25 = retrieval.Bm25Index.build(texts)
        retrieval.save_bm25(bm25, index_dir / "bm25_index.jsonl")
        _write_meta(index_dir / "bm25_index.jsonl", config, "index")

        embedder = config.provider("embeddings")
        keys = sorted(texts)
        vectors = generation.embed_texts(embedder, [texts[k] for k in keys])
        dense = retrieval.DenseIndex(dict(zip(keys, vectors)))
        retrieval.save_dense(dense, index_dir / "dense_index.jsonl")
        _write_meta(index_dir / "dense_index.jsonl", config, "index")
    print(f"index: {len(chunks)} chunks from {docs_dir} -> {index_dir}")
    return 0


def cmd_ask(config: PipelineConfig, args) -> int:
    index_dir = config.path("index_dir")
    bm25_path = _require(index_dir / "bm25_index.jsonl", "index")
    dense_path = _require(index_dir / "dense_index.jsonl", "index")
    out_dir = config.path("output_dir")

    bm25 = retrieval.load_bm25(bm25_path)
    dense = retrieval.load_dense(dense_path)
    embedder = config.provider("embeddings")
    chat = config.provider("chat")
    params = config.generation_params

    rag_text = None
    used = []
    if not args.no_rag:
        query_vec = generation.embed_texts(embedder, [f"{args.subject}\n{args.body}"])[0]
        context = retrieval.hybrid_retrieve(
            dense, bm25, f"{args.subject}\n{args.body}", query_vec,
            dense_k=config.dense_k, bm25_k=config.bm25_k,
        )
        rag_text = prompt.render_rag_block(context)
        used = [
            {"chunk_key": item.chunk_key, "score": item.score, "source": item.source}
            for item in context
        ]

    bundle = prompt.render_chat_prompt(rag=rag_text, subject=args.subject, body=args.body)
    if args.show_prompt:
        print(bundle.rendered)
    answer = generation.generate_answer(chat, bundle, params)

    provenance = {
        "chunks": used,
        "prompt_sha256": hashlib.sha256(bundle.rendered.encode("utf-8")).hexdigest(),
        "config_hash": config.config_hash,
        "seed": config.seed,
    }
    with _directory_lock(out_dir):
        with open(out_dir / "audit_log.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "subject": args.subject,
                "body": args.body,
                "answer": answer,
                **provenance,
            }, ensure_ascii=False) + "\n")
    print(answer)
    print(json.dumps(provenance, indent=2))
    return 0


def _judge_scores(config: PipelineConfig, records: list[dict],
                  ground_truth: dict) -> list[evaluation.RubricScore]:
    judge = config.provider("judge")
    params = config.generation_params
    prompts = []
    for rec in records:
        question, gt_answer = ground_truth[rec["question_id"]]
        for metric in ("usefulness", "accuracy"):
            prompts.append(prompt.render_eval_prompt(metric, question, gt_answer, rec["answer"]))
    responses = generation.generate_many(judge, prompts, params)
    scores = []
    for i in range(len(records)):
        useful = evaluation.parse_llm_score(responses[2 * i], "Usefulness")
        accurate = evaluation.parse_llm_score(responses[2 * i + 1], "Accuracy")
        scores.append(evaluation.RubricScore(
            usefulness=evaluation.normalize_score(useful),
            accuracy=evaluation.normalize_score(accurate),
        ))
    return scores


def cmd_eval(config: PipelineConfig, args) -> int:
    out_dir = config.path("output_dir")
    deduped_path = _require(out_dir / "qa_pairs_deduped.jsonl", "dedup")
    answers_path = Path(args.answers)
    if not answers_path.exists():
        raise FileNotFoundError(f"answers file {answers_path} does not exist")

    pairs = ingest.read_qa_pairs(deduped_path)
    ground_truth = {
        p.pair_id: (f"{p.question_subject}\n{p.question_body}", p.answer_body)
        for p in pairs
    }

    records = []
    with open(answers_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["question_id"] not in ground_truth:
                raise ValueError(
                    f"answers line {line_no}: question_id '{rec['question_id']}' "
                    f"is not in the deduplicated qa pairs"
                )
            records.append(rec)
    if not records:
        raise ValueError("answers file is empty")

    human_scores = evaluation.read_human_scores(args.human_scores) if args.human_scores else {}

    llm_scores = _judge_scores(config, records, ground_truth)
    embedder = config.provider("embeddings")

    eval_records = []
    for rec, llm in zip(records, llm_scores):
        _, gt_answer = ground_truth[rec["question_id"]]
        eval_records.append(evaluation.EvalRecord(
            question_id=rec["question_id"],
            model_id=rec["model_id"],
            answer=rec["answer"],
            human=human_scores.get((rec["question_id"], rec["model_id"])),
            llm=llm,
            bertscore_f1=evaluation.bertscore_for_texts(embedder, rec["answer"], gt_answer),
        ))

    rows = evaluation.aggregate(eval_records)
    table = evaluation.render_score_table(rows)

    dual = [r for r in eval_records if r.human is not None and r.llm is not None]
    correlations = []
    skipped = []
    pairs_to_check = [
        ("human_usefulness/llm_usefulness",
         [r.human.usefulness for r in dual], [r.llm.usefulness for r in dual]),
        ("human_accuracy/llm_accuracy",
         [r.human.accuracy for r in dual], [r.llm.accuracy for r in dual]),
        ("human_overall/llm_overall",
         [r.human.average for r in dual], [r.llm.average for r in dual]),
    ]
    scored_bert = [r for r in eval_records if r.bertscore_f1 is not None and r.llm is not None]
    pairs_to_check.append((
        "bertscore_f1/llm_overall",
        [r.bertscore_f1 for r in scored_bert],
        [r.llm.average for r in scored_bert],
    ))
    for name, xs, ys in pairs_to_check:
        try:
            report = evaluation.correlation_report(name, xs, ys)
        except ValueError as exc:
            skipped.append({"metric_pair": name, "reason": str(exc)})
            continue
        correlations.append({
            "metric_pair": report.metric_pair,
            "pearson_r": report.pearson_r,
            "spearman_rho": report.spearman_rho,
            "kendall_tau": report.kendall_tau,
            "n": report.n,
        })

    matrices = {}
    for metric in ("usefulness", "accuracy"):
        try:
            matrix = evaluation.confusion_matrix(eval_records, metric)
        except ValueError as exc:
            skipped.append({"metric_pair": f"confusion/{metric}", "reason": str(exc)})
            continue
        matrices[metric] = {"cells": [list(row) for row in matrix.cells], "n": matrix.n}

    report_doc = _stamp(config)
    report_doc.update({
        "models": rows,
        "table": table,
        "correlations": correlations,
        "skipped": skipped,
        "confusion_matrices": matrices,
        "record_count": len(eval_records),
    })
    with _directory_lock(out_dir):
        (out_dir / "eval_report.json").write_text(
            json.dumps(report_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        text_lines = [table]
        for metric, m in matrices.items():
            text_lines.append(f"\nConfusion matrix ({metric}), human rows x LLM cols on (0, 0.5, 1), n={m['n']}:")
            for row in m["cells"]:
                text_lines.append("  " + "  ".join(f"{v:.3f}" for v in row))
        (out_dir / "eval_report.txt").write_text("\n".join(text_lines) + "\n", encoding="utf-8")
    print(table)
    print(f"eval: {len(eval_records)} records -> {out_dir / 'eval_report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forumqa",
        description="Forum QA pipeline: ingest, dedup, prefs, index, ask, eval",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--offline", action="store_true", help="force stub providers")
    parser.add_argument("--seed", type=int, default=None, help="run seed recorded in artifacts")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY.PATH=VALUE", help="override a config value (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="parse the forum export into qa pairs + stats")
    sub.add_parser("dedup", help="remove near-duplicate queries")
    sub.add_parser("prefs", help="export SFT and DPO datasets")
    sub.add_parser("index", help="chunk course documents and build retrieval indices")

    ask = sub.add_parser("ask", help="answer one query with optional RAG context")
    ask.add_argument("--subject", required=True)
    ask.add_argument("--body", required=True)
    ask.add_argument("--no-rag", action="store_true", help="skip the retrieval context block")
    ask.add_argument("--show-prompt", action="store_true", help="print the rendered prompt")

    ev = sub.add_parser("eval", help="score model answers with the judge + rubric stats")
    ev.add_argument("--answers", required=True, help="JSONL of question_id/model_id/answer")
    ev.add_argument("--human-scores", help="CSV of question_id,model_id,usefulness,accuracy")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "dedup": cmd_dedup,
    "prefs": cmd_prefs,
    "index": cmd_index,
    "ask": cmd_ask,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = load_config(
            path=args.config, overrides=args.overrides,
            offline=args.offline, seed=args.seed,
        )
        return COMMANDS[args.command](config, args)
    except Exception as exc:  # surface a machine-readable error and fail nonzero
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
