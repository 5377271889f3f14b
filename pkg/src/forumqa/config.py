"""Pipeline configuration: YAML file, dotted-key overrides, provider wiring."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .chunker import ChunkerConfig
from .generation import (
    GenerationParams,
    HttpChatClient,
    HttpEmbeddingClient,
    ProviderConfig,
    StubChatClient,
    StubEmbeddingClient,
)

DEFAULTS = {
    "paths": {
        "forum_export": "forum_export.jsonl",
        "docs_dir": "docs",
        "index_dir": "out/index",
        "output_dir": "out",
    },
    "chunker": {
        "max_chars": 1000,
        "overlap_chars": 100,
    },
    "retrieval": {
        "dense_k": 3,
        "bm25_k": 2,
    },
    "dedup": {
        "threshold": 0.2,
    },
    "providers": {
        "chat": {"kind": "stub", "mode": "echo"},
        "embeddings": {"kind": "stub"},
        "judge": {"kind": "stub", "mode": "judge"},
    },
    "generation": {
        "max_length": 2048,
        "max_new_tokens": 1024,
        "top_p": 1.0,
        "top_k": 50,
        "temperature": 0.3,
    },
    "seed": 0,
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _apply_override(data: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise ValueError(f"override must look like key.path=value, got '{dotted}'")
    key_path, raw_value = dotted.split("=", 1)
    keys = key_path.strip().split(".")
    target = data
    for key in keys[:-1]:
        target = target.setdefault(key, {})
        if not isinstance(target, dict):
            raise ValueError(f"cannot override through non-mapping key '{key}'")
    target[keys[-1]] = yaml.safe_load(raw_value)


@dataclass(frozen=True)
class PipelineConfig:
    data: dict
    config_hash: str

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def path(self, name: str) -> Path:
        return Path(self.data["paths"][name])

    @property
    def chunker(self) -> ChunkerConfig:
        c = self.data["chunker"]
        return ChunkerConfig(max_chars=int(c["max_chars"]), overlap_chars=int(c["overlap_chars"]))

    @property
    def dense_k(self) -> int:
        return int(self.data["retrieval"]["dense_k"])

    @property
    def bm25_k(self) -> int:
        return int(self.data["retrieval"]["bm25_k"])

    @property
    def dedup_threshold(self) -> float:
        return float(self.data["dedup"]["threshold"])

    @property
    def generation_params(self) -> GenerationParams:
        g = self.data["generation"]
        return GenerationParams(
            max_length=int(g["max_length"]),
            max_new_tokens=int(g["max_new_tokens"]),
            top_p=float(g["top_p"]),
            top_k=int(g["top_k"]),
            temperature=float(g["temperature"]),
        )

    def provider(self, role: str):
        """Instantiate the chat/embeddings/judge provider for a config role."""
        entry = self.data["providers"][role]
        kind = entry.get("kind", "stub")
        if kind == "stub":
            if role == "embeddings":
                return StubEmbeddingClient()
            return StubChatClient(mode=entry.get("mode", "judge" if role == "judge" else "echo"))
        if kind == "http":
            pconf = ProviderConfig(
                base_url=entry["base_url"],
                model=entry["model"],
                api_key_env=entry.get("api_key_env", ""),
                timeout=float(entry.get("timeout", 30.0)),
                max_attempts=int(entry.get("max_attempts", 3)),
                backoff_seconds=float(entry.get("backoff_seconds", 0.5)),
                send_top_k=bool(entry.get("send_top_k", True)),
                trusted_hosts=tuple(entry.get("trusted_hosts", ())),
            )
            if role == "embeddings":
                return HttpEmbeddingClient(pconf)
            return HttpChatClient(pconf)
        raise ValueError(f"unknown provider kind '{kind}' for role '{role}'")


def load_config(path=None, overrides: list[str] | None = None,
                offline: bool = False, seed: int | None = None) -> PipelineConfig:
    """Resolve defaults <- file <- --set overrides <- --offline/--seed flags."""
    data = json.loads(json.dumps(DEFAULTS))  # deep copy
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            file_data = yaml.safe_load(fh) or {}
        if not isinstance(file_data, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        data = _deep_merge(data, file_data)
    for dotted in overrides or []:
        _apply_override(data, dotted)
    if offline:
        for role in data["providers"]:
            mode = "judge" if role == "judge" else "echo"
            data["providers"][role] = {"kind": "stub", "mode": mode}
    if seed is not None:
        data["seed"] = seed
    digest = hashlib.sha256(
        json.dumps(data, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()[:12]
    return PipelineConfig(data=data, config_hash=digest)
