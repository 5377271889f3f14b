import shutil
from pathlib import Path

import pytest
import yaml

FIXTURES = Path(__file__).parent / "fixtures"
MINI = FIXTURES / "mini"
GOLDEN = FIXTURES / "golden"


@pytest.fixture
def mini_dir():
    return MINI


@pytest.fixture
def golden_dir():
    return GOLDEN


@pytest.fixture
def pipeline_env(tmp_path):
    """Copy of the mini fixture plus a config pointing all paths into tmp."""
    workdir = tmp_path / "run"
    workdir.mkdir()
    shutil.copy(MINI / "forum_export.jsonl", workdir / "forum_export.jsonl")
    shutil.copytree(MINI / "docs", workdir / "docs")
    shutil.copy(MINI / "answers.jsonl", workdir / "answers.jsonl")
    shutil.copy(MINI / "human_scores.csv", workdir / "human_scores.csv")
    config = {
        "paths": {
            "forum_export": str(workdir / "forum_export.jsonl"),
            "docs_dir": str(workdir / "docs"),
            "index_dir": str(workdir / "out" / "index"),
            "output_dir": str(workdir / "out"),
        },
        # keep a full 5-chunk RAG prompt inside the generation token budget
        "chunker": {"max_chars": 500, "overlap_chars": 50},
        "providers": {
            "chat": {"kind": "stub", "mode": "echo"},
            "embeddings": {"kind": "stub"},
            "judge": {"kind": "stub", "mode": "judge"},
        },
    }
    config_path = workdir / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return {
        "workdir": workdir,
        "config": config_path,
        "out": workdir / "out",
        "index": workdir / "out" / "index",
        "answers": workdir / "answers.jsonl",
        "human_scores": workdir / "human_scores.csv",
    }
