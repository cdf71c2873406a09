"""HTTP service exposing tutoring sessions over the QA and agent pipelines.

Answers stream as newline-delimited JSON trace events so a client can show
retrieval evidence, agent turns, and code executions as they happen. Every
stream terminates with exactly one ``done`` event, even when the backend
fails mid-exchange, and the stored transcript carries the very same events
that were streamed.
"""

from __future__ import annotations

import json
import queue
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .concept_qa import AskConfig, answer_question, prompt_level
from .mas_engine import MasConfig, ProblemInput, solve_problem
from .retrieval import search

MODES = ("concept", "calculation")
NDJSON = "application/x-ndjson"


class CreateSessionBody(BaseModel):
    mode: str


class AskBody(BaseModel):
    question: str
    options: dict = {}


@dataclass
class Session:
    session_id: str
    mode: str
    messages: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class ServiceState:
    """Everything the endpoints need: the gateway, optional index and
    embedding backend for RAG, the runner and agent config for calculation
    mode, and the in-memory session store."""

    gateway: object
    concept_model: str
    index: object | None = None
    embed_backend: object | None = None
    runner: object | None = None
    mas_config: MasConfig | None = None
    journal_path: Path | None = None
    sessions: dict[str, Session] = field(default_factory=dict)
    _journal_lock: threading.Lock = field(default_factory=threading.Lock)

    def journal(self, record: dict) -> None:
        if self.journal_path is None:
            return
        with self._journal_lock:
            with open(self.journal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="biotutor")

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        if body.mode not in MODES:
            raise HTTPException(status_code=400, detail=f"mode must be one of {MODES}")
        session = Session(session_id=secrets.token_urlsafe(12), mode=body.mode)
        state.sessions[session.session_id] = session
        return JSONResponse(status_code=201, content={"session_id": session.session_id, "mode": session.mode})

    @app.get("/api/sessions/{session_id}")
    def get_transcript(session_id: str):
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return {"session_id": session.session_id, "mode": session.mode, "messages": session.messages}

    @app.post("/api/sessions/{session_id}/ask")
    def ask(session_id: str, body: AskBody):
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if not body.question.strip():
            raise HTTPException(status_code=400, detail="question must be non-empty")
        return StreamingResponse(_exchange_stream(state, session, body), media_type=NDJSON)

    return app


def _exchange_stream(state: ServiceState, session: Session, body: AskBody):
    """Generator yielding NDJSON lines. A worker thread runs the pipeline
    and pushes events; whatever happens, the stream ends with one done
    event and the exchange lands in the session transcript."""
    session.lock.acquire()  # requests within a session stay strictly sequential
    events: list[dict] = []
    feed: queue.Queue = queue.Queue()

    def emit(event_type: str, payload: dict) -> None:
        feed.put((event_type, payload))

    def work() -> None:
        try:
            if session.mode == "concept":
                _concept_exchange(state, body, emit)
            else:
                _calculation_exchange(state, session, body, emit)
        except Exception as exc:  # noqa: BLE001 - stream must stay well-terminated
            emit("error", {"message": f"{type(exc).__name__}: {exc}"})
        finally:
            feed.put(None)

    threading.Thread(target=work, daemon=True).start()

    try:
        seq = 0
        while True:
            item = feed.get()
            if item is None:
                break
            event = {"event_type": item[0], "payload": item[1], "seq": seq}
            seq += 1
            events.append(event)
            yield json.dumps(event, ensure_ascii=False) + "\n"
        done = {"event_type": "done", "payload": {}, "seq": seq}
        events.append(done)
        yield json.dumps(done, ensure_ascii=False) + "\n"
    finally:
        session.messages.append({"question": body.question, "events": events})
        state.journal({"session_id": session.session_id, "question": body.question, "events": events})
        session.lock.release()


def _concept_exchange(state: ServiceState, body: AskBody, emit) -> None:
    options = body.options or {}
    rag = bool(options.get("rag", state.index is not None))
    level = prompt_level(options.get("prompt_level", 2))
    temperature = float(options.get("temperature", 0.6))
    k = int(options.get("k", 10))

    retrieved = []
    if rag:
        if state.index is None or state.embed_backend is None:
            raise RuntimeError("RAG requested but the service has no index loaded")
        retrieved = search(state.index, body.question, state.embed_backend, k=k)
        emit(
            "retrieval",
            {
                "chunks": [
                    {"chunk_id": r.chunk_id, "text": r.text, "similarity": r.query_similarity, "rank": r.rank}
                    for r in retrieved
                ]
            },
        )

    question = SimpleNamespace(id="interactive", question=body.question)
    cfg = AskConfig(
        model_id=options.get("model_id", state.concept_model),
        prompt_level=level,
        temperature=temperature,
        rag_enabled=rag,
        rounds=1,
        k=k,
    )
    outcome = answer_question(question, cfg, state.gateway, retrieved=retrieved if rag else None)
    answer = outcome.answers[0]
    emit(
        "answer",
        {
            "answer": answer.answer,
            "context": answer.context,
            "confidence": answer.confidence,
            "parse_ok": answer.parse_ok,
            "raw_text": answer.raw_text,
        },
    )


def _calculation_exchange(state: ServiceState, session: Session, body: AskBody, emit) -> None:
    if state.mas_config is None or state.runner is None:
        raise RuntimeError("service is not configured for calculation mode")
    options = body.options or {}
    problem = ProblemInput(
        problem_id=f"{session.session_id}-{len(session.messages)}",
        prompt_text=body.question,
        ground_truth=options.get("ground_truth"),
    )
    transcript = solve_problem(
        problem,
        state.mas_config,
        state.gateway,
        runner=state.runner,
        observer=emit,
    )
    if transcript.error:
        emit("error", {"message": transcript.error})
