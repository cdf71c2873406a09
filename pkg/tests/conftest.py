from __future__ import annotations

import json
from pathlib import Path

import pytest

from biotutor.llm_gateway import Gateway, ScriptedBackend, ScriptEntry

REPO_ROOT = Path(__file__).resolve().parent.parent

VALID_TRUE_REPLY = '{"answer": true, "context": "by definition", "confidence": 0.8}'
VALID_FALSE_REPLY = '{"answer": false, "context": "counterexample exists", "confidence": 0.7}'


def write_config(path: Path, script: list[dict], extra: dict | None = None) -> Path:
    """A scripted offline config file for CLI-level tests."""
    config = {
        "backend": {"kind": "scripted", "script": script},
        "embeddings": {"kind": "stub", "dim": 8},
        "runner": {"timeout_s": 10},
        "mas": {"manager_model": "m", "solver_model": "m", "reviewer_model": "m"},
        "concept": {"model_id": "concept-model"},
    }
    config.update(extra or {})
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def sample_concepts_path() -> Path:
    return REPO_ROOT / "sample_data" / "concepts.jsonl"


@pytest.fixture
def sample_calc_dir() -> Path:
    return REPO_ROOT / "sample_data" / "calc_problems"


def make_gateway(script: list[ScriptEntry | str | tuple[str, str]], **kwargs) -> tuple[Gateway, ScriptedBackend]:
    entries = []
    for item in script:
        if isinstance(item, ScriptEntry):
            entries.append(item)
        elif isinstance(item, str):
            entries.append(ScriptEntry(reply=item))
        else:
            entries.append(ScriptEntry(reply=item[1], match=item[0]))
    backend = ScriptedBackend(entries)
    return Gateway(backend, **kwargs), backend


def constant_gateway(reply: str, **kwargs) -> tuple[Gateway, ScriptedBackend]:
    backend = ScriptedBackend([ScriptEntry(reply=reply, repeat=True)])
    return Gateway(backend, **kwargs), backend
