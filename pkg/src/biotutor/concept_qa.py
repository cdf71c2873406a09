"""True/false concept answering with optional retrieval augmentation.

Three prompt levels of increasing domain specificity wrap each question; the
model is asked for a JSON object {answer, context, confidence}. Parsing is
total: structured output from real models arrives in many shapes (strict
JSON, single-quoted pairs, curly typographic quotes, string booleans), so
the parser degrades gracefully and records failures as values instead of
raising.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .errors import TransportError
from .llm_gateway import ChatMessage, Gateway, GenerationRequest, text_message
from .retrieval import RetrievalResult, VectorIndex, search


@dataclass(frozen=True)
class PromptLevel:
    name: str
    template_text: str


L1_GENERIC = PromptLevel("L1_generic", "This is a question, help me answer it.")
L2_DOMAIN = PromptLevel("L2_domain", "This is a biomechanics question, help me answer it.")
L3_PROFESSIONAL = PromptLevel(
    "L3_professional",
    "Please think carefully about this biomechanics question and give a professional answer.",
)

PROMPT_LEVELS = (L1_GENERIC, L2_DOMAIN, L3_PROFESSIONAL)


def prompt_level(selector: int | str | PromptLevel) -> PromptLevel:
    """Accepts 1/2/3, 'L1'..'L3', or a full level name."""
    if isinstance(selector, PromptLevel):
        return selector
    if isinstance(selector, int):
        if not 1 <= selector <= 3:
            raise ValueError(f"prompt level must be 1..3, got {selector}")
        return PROMPT_LEVELS[selector - 1]
    for level in PROMPT_LEVELS:
        if selector in (level.name, level.name.split("_")[0]):
            return level
    raise ValueError(f"unknown prompt level {selector!r}")


SYSTEM_INSTRUCTION = (
    "You answer true/false questions. Reply ONLY with a JSON object with exactly these keys: "
    '"answer" (true or false), "context" (a short justification), and "confidence" '
    "(a number between 0 and 1). Output nothing outside the JSON object."
)


def build_prompt(
    question: str,
    level: PromptLevel,
    retrieved: list[RetrievalResult] | None = None,
) -> list[ChatMessage]:
    """System instruction plus a user message of: level template, optional
    reference-passages block (rank order, ids shown), then the question."""
    if not question:
        raise ValueError("question must be non-empty")
    blocks = [level.template_text]
    if retrieved:
        lines = ["Reference passages:"]
        for item in retrieved:
            lines.append(f"[{item.chunk_id}] {item.text}")
        lines.append("(end of reference passages)")
        blocks.append("\n".join(lines))
    blocks.append(question)
    return [text_message("system", SYSTEM_INSTRUCTION), text_message("user", "\n\n".join(blocks))]


# --- structured answer parsing ------------------------------------------------

@dataclass(frozen=True)
class StructuredAnswer:
    answer: bool | None  # None records an Invalid answer (parse failed)
    context: str
    confidence: float | None
    raw_text: str
    parse_ok: bool


_CURLY_QUOTES = str.maketrans({"‘": "'", "’": "'", "“": '"', "”": '"'})

_ANSWER_RE = re.compile(r"""["']?answer["']?\s*[:=]\s*["']?(true|false)["']?""", re.IGNORECASE)
_CONF_RE = re.compile(r"""["']?confidence["']?\s*[:=]\s*["']?\s*([0-9]*\.?[0-9]+)""", re.IGNORECASE)
_CONTEXT_BEFORE_CONF_RE = re.compile(
    r"""["']?context["']?\s*[:=]\s*["'](.*?)["']\s*,\s*["']?confidence""",
    re.IGNORECASE | re.DOTALL,
)
_CONTEXT_TAIL_RE = re.compile(
    r"""["']?context["']?\s*[:=]\s*["'](.*?)["']\s*[,}]?\s*$""",
    re.IGNORECASE | re.DOTALL,
)


def parse_structured_answer(text: str) -> StructuredAnswer:
    """Best-effort extraction of {answer, context, confidence} from model
    output. Never raises; an unusable reply comes back with parse_ok=False
    and the raw text preserved for the audit log."""
    raw = text if isinstance(text, str) else str(text)

    for candidate in _json_candidates(raw):
        answer = _coerce_bool(candidate.get("answer"))
        if answer is not None:
            return StructuredAnswer(
                answer=answer,
                context=str(candidate.get("context", "") or ""),
                confidence=_coerce_confidence(candidate.get("confidence")),
                raw_text=raw,
                parse_ok=True,
            )

    normalized = raw.translate(_CURLY_QUOTES)
    answer_match = _ANSWER_RE.search(normalized)
    if answer_match:
        context = ""
        ctx_match = _CONTEXT_BEFORE_CONF_RE.search(normalized) or _CONTEXT_TAIL_RE.search(normalized)
        if ctx_match:
            context = ctx_match.group(1).strip()
        conf_match = _CONF_RE.search(normalized)
        confidence = _coerce_confidence(conf_match.group(1)) if conf_match else None
        return StructuredAnswer(
            answer=answer_match.group(1).lower() == "true",
            context=context,
            confidence=confidence,
            raw_text=raw,
            parse_ok=True,
        )

    return StructuredAnswer(answer=None, context="", confidence=None, raw_text=raw, parse_ok=False)


def _json_candidates(raw: str):
    try:
        parsed = json.loads(raw)
        if isinstance(parsed, dict):
            yield parsed
    except ValueError:
        pass
    brace = re.search(r"\{.*\}", raw, re.DOTALL)
    if brace:
        try:
            parsed = json.loads(brace.group(0))
            if isinstance(parsed, dict):
                yield parsed
        except ValueError:
            pass


def _coerce_bool(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "yes"):
            return True
        if lowered in ("false", "no"):
            return False
    return None


def _coerce_confidence(value) -> float | None:
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (int, float)):
        return _clamp_unit(float(value))
    if isinstance(value, str):
        try:
            return _clamp_unit(float(value.strip().strip("'\"")))
        except ValueError:
            return None
    return None


def _clamp_unit(value: float) -> float | None:
    # json.loads happily yields NaN/Infinity; only finite values clamp sanely
    if not math.isfinite(value):
        return None
    return min(1.0, max(0.0, value))


# --- multi-round asking ---------------------------------------------------------

@dataclass
class AskConfig:
    model_id: str
    prompt_level: PromptLevel = L2_DOMAIN
    temperature: float = 0.6
    rag_enabled: bool = False
    rounds: int = 3
    k: int = 10
    max_tokens: int = 512
    reask_budget: int = 2  # extra completions allowed per malformed round
    retrieval_per_round: bool = False  # diagnosis mode: re-retrieve each round

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")


@dataclass
class AskOutcome:
    question_id: str
    answers: list[StructuredAnswer]
    retrieved_chunk_ids: list[str] = field(default_factory=list)

    def audit_record(self) -> dict:
        return {
            "question_id": self.question_id,
            "retrieved_chunk_ids": self.retrieved_chunk_ids,
            "rounds": [
                {
                    "raw_text": a.raw_text,
                    "answer": a.answer,
                    "confidence": a.confidence,
                    "parse_ok": a.parse_ok,
                }
                for a in self.answers
            ],
        }


def answer_question(
    question,
    cfg: AskConfig,
    gateway: Gateway,
    index: VectorIndex | None = None,
    embed_backend=None,
    retrieved: list[RetrievalResult] | None = None,
) -> AskOutcome:
    """Ask one question ``cfg.rounds`` times and parse each reply.

    ``question`` is any record with ``id`` and ``question`` attributes.
    Retrieval runs once per question (all rounds see the same context) so
    round-to-round variation isolates model stochasticity; set
    ``retrieval_per_round`` to diagnose retrieval-induced instability.
    Callers that already retrieved (to show evidence first) pass the
    results in. A malformed reply is re-asked up to ``reask_budget`` times,
    then the round is recorded as Invalid rather than dropped.
    """
    qid = question.id
    qtext = question.question

    if cfg.rag_enabled and retrieved is None:
        if index is None or embed_backend is None:
            raise ValueError("rag_enabled requires an index and an embedding backend")
        retrieved = search(index, qtext, embed_backend, k=cfg.k)
    retrieved = retrieved or []

    answers: list[StructuredAnswer] = []
    retrieved_ids = [r.chunk_id for r in retrieved]
    for round_no in range(cfg.rounds):
        if cfg.rag_enabled and cfg.retrieval_per_round and round_no > 0:
            retrieved = search(index, qtext, embed_backend, k=cfg.k)
        messages = build_prompt(qtext, cfg.prompt_level, retrieved if cfg.rag_enabled else None)
        answers.append(_ask_round(qid, round_no, messages, cfg, gateway))

    return AskOutcome(question_id=qid, answers=answers, retrieved_chunk_ids=retrieved_ids)


def _ask_round(qid: str, round_no: int, messages: list[ChatMessage], cfg: AskConfig, gateway: Gateway) -> StructuredAnswer:
    parsed = None
    for attempt in range(1 + cfg.reask_budget):
        request = GenerationRequest(
            model_id=cfg.model_id,
            messages=messages,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            request_tag=f"{qid}:round{round_no}:try{attempt}",
        )
        try:
            result = gateway.complete(request)
        except TransportError as exc:
            raise type(exc)(f"question {qid!r} round {round_no}: {exc}") from exc
        parsed = parse_structured_answer(result.text)
        if parsed.parse_ok:
            return parsed
    return parsed
