"""One JSON config file drives the CLI and the service.

Shape (all sections optional):

    {
      "backend":    {"kind": "http", "base_url": "...", "api_key_env": "TUTOR_API_KEY",
                     "timeout_s": 120, "max_retries": 3, "max_inflight": 4}
                  | {"kind": "scripted", "script": [{"reply": "...", "match": "...",
                     "fail": false, "repeat": true}, ...]},
      "embeddings": {"kind": "http", "base_url": "...", "model": "...", "batch_size": 64}
                  | {"kind": "stub", "dim": 32, "model": "stub-embed"},
      "runner":     {"interpreter_command": ["python3"], "timeout_s": 30,
                     "max_output_bytes": 1048576},
      "mas":        {"manager_model": "...", "solver_model": "...", "reviewer_model": "...",
                     "max_turns": 12, "max_code_execs": 8},
      "concept":    {"model_id": "...", "temperature": 0.6, "k": 10}
    }

The scripted backend and the stub embedder make every command runnable
offline, which is also how the test suite drives the CLI.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .code_runner import RunnerLimits
from .errors import ConfigError
from .llm_gateway import HttpBackend, HttpBackendConfig, ScriptedBackend, ScriptEntry
from .mas_engine import MasConfig
from .retrieval import EmbeddingEndpointConfig, HttpEmbeddingBackend, StubEmbeddingBackend


@dataclass
class TutorConfig:
    backend: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    runner: dict = field(default_factory=dict)
    mas: dict = field(default_factory=dict)
    concept: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "TutorConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            backend=raw.get("backend", {}),
            embeddings=raw.get("embeddings", {}),
            runner=raw.get("runner", {}),
            mas=raw.get("mas", {}),
            concept=raw.get("concept", {}),
        )

    def build_backend(self):
        kind = self.backend.get("kind", "http")
        if kind == "scripted":
            entries = [
                ScriptEntry(
                    reply=e.get("reply", ""),
                    match=e.get("match"),
                    fail=bool(e.get("fail", False)),
                    repeat=bool(e.get("repeat", False)),
                )
                for e in self.backend.get("script", [])
            ]
            if not entries:
                raise ConfigError("scripted backend needs a non-empty script")
            return ScriptedBackend(entries)
        if kind == "http":
            base_url = self.backend.get("base_url")
            if not base_url:
                raise ConfigError("http backend needs base_url")
            return HttpBackend(
                HttpBackendConfig(
                    base_url=base_url,
                    api_key=self.backend.get("api_key"),
                    api_key_env=self.backend.get("api_key_env", "TUTOR_API_KEY"),
                    timeout_s=float(self.backend.get("timeout_s", 120.0)),
                    max_retries=int(self.backend.get("max_retries", 3)),
                    retry_base_s=float(self.backend.get("retry_base_s", 0.5)),
                    max_inflight=int(self.backend.get("max_inflight", 4)),
                )
            )
        raise ConfigError(f"unknown backend kind {kind!r}")

    def build_embed_backend(self):
        kind = self.embeddings.get("kind", "stub")
        if kind == "stub":
            return StubEmbeddingBackend(
                dim=int(self.embeddings.get("dim", 32)),
                model=self.embeddings.get("model", "stub-embed"),
            )
        if kind == "http":
            base_url = self.embeddings.get("base_url")
            if not base_url:
                raise ConfigError("http embeddings need base_url")
            return HttpEmbeddingBackend(
                EmbeddingEndpointConfig(
                    base_url=base_url,
                    model=self.embeddings.get("model", "mxbai-embed-large-v1"),
                    batch_size=int(self.embeddings.get("batch_size", 64)),
                    api_key=self.embeddings.get("api_key"),
                )
            )
        raise ConfigError(f"unknown embeddings kind {kind!r}")

    def runner_limits(self) -> RunnerLimits:
        return RunnerLimits(
            timeout_s=float(self.runner.get("timeout_s", 30.0)),
            max_output_bytes=int(self.runner.get("max_output_bytes", 1 << 20)),
            interpreter_command=tuple(self.runner.get("interpreter_command", (sys.executable,))),
        )

    def mas_config(self) -> MasConfig:
        if not self.mas:
            raise ConfigError("config has no 'mas' section")
        return MasConfig.from_dict(self.mas)

    def concept_model(self) -> str:
        model = self.concept.get("model_id")
        if not model:
            raise ConfigError("config has no concept.model_id")
        return model
