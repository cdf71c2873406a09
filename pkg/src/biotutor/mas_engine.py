"""Manager/solver/reviewer state machine for calculation problems.

One state object travels through the phases: the manager restates the
problem (and routes grade-only inputs straight to review), the solver plans
and works step by step with fenced code executed by the runner and fed back
as tool messages, and the reviewer grades the final answer against the
ground truth with a binary verdict and a score out of 100.

The loop has hard guards (max solver turns, max code executions, the END
terminator token) so a wandering model can never run away; hitting a guard
marks the transcript truncated rather than failing silently. A fully
scripted run is bit-reproducible: transcripts carry no timing fields.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .code_runner import CodeExecution, execute
from .errors import ManagerError, ProviderError, ReviewParseError, ScriptExhaustedError, TransportError
from .llm_gateway import ChatMessage, Gateway, GenerationRequest, ImageRef, Text, text_message

END_TOKEN = "END"
AGENTS = frozenset({"manager", "solver", "reviewer"})
PHASES = ("managing", "solving", "reviewing", "done")

_ALLOWED_TRANSITIONS = {
    ("managing", "solving"),
    ("solving", "managing"),
    ("managing", "reviewing"),
    ("managing", "done"),
    ("reviewing", "done"),
}

Observer = Callable[[str, dict], None]


# --- domain types ----------------------------------------------------------------

@dataclass(frozen=True)
class ProblemInput:
    problem_id: str
    prompt_text: str
    image_paths: tuple[str, ...] = ()
    ground_truth: str | None = None
    reference_steps: str | None = None
    grade_only: bool = False
    candidate_solution: str | None = None

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")


@dataclass
class MasConfig:
    manager_model: str
    solver_model: str
    reviewer_model: str
    max_turns: int = 12
    max_code_execs: int = 8
    temperature: float = 0.2
    max_tokens: int = 4096

    @classmethod
    def from_dict(cls, raw: dict) -> "MasConfig":
        return cls(
            manager_model=raw["manager_model"],
            solver_model=raw["solver_model"],
            reviewer_model=raw["reviewer_model"],
            max_turns=int(raw.get("max_turns", 12)),
            max_code_execs=int(raw.get("max_code_execs", 8)),
            temperature=float(raw.get("temperature", 0.2)),
            max_tokens=int(raw.get("max_tokens", 4096)),
        )

    def to_dict(self) -> dict:
        return {
            "manager_model": self.manager_model,
            "solver_model": self.solver_model,
            "reviewer_model": self.reviewer_model,
            "max_turns": self.max_turns,
            "max_code_execs": self.max_code_execs,
        }


@dataclass
class AgentTurn:
    agent: str
    content: str
    code_executions: list[CodeExecution] = field(default_factory=list)

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.code_executions and self.agent != "solver":
            raise ValueError("only solver turns may carry code executions")


@dataclass(frozen=True)
class ManagerDecision:
    restated_problem: str
    route: str  # "to_solver" | "to_reviewer"


@dataclass(frozen=True)
class Review:
    correct: bool | None  # None: model reported no explicit binary verdict
    score: int | None     # clamped to [0, 100]; None: no score reported
    feedback: str
    out_of_range: bool = False  # model emitted a score outside [0, 100]


@dataclass
class MasState:
    problem: ProblemInput
    history: list[AgentTurn] = field(default_factory=list)
    phase: str = "managing"
    restated_problem: str | None = None
    code_exec_count: int = 0
    turn_count: int = 0  # solver turns inside the loop
    review: Review | None = None
    truncated: bool = False
    error: str | None = None
    phase_trace: list[str] = field(default_factory=lambda: ["managing"])

    def transition(self, new_phase: str) -> None:
        if (self.phase, new_phase) not in _ALLOWED_TRANSITIONS:
            raise ValueError(f"illegal phase transition {self.phase} -> {new_phase}")
        self.phase = new_phase
        self.phase_trace.append(new_phase)


# --- code block extraction ----------------------------------------------------------

def extract_code_blocks(markdown: str) -> list[str]:
    """Contents of fenced code blocks, in document order. Any language tag
    (or none) opens a block; a bare ``` closes it. Inline backticks inside
    a block pass through untouched; an unclosed fence is not a block."""
    blocks: list[str] = []
    current: list[str] | None = None
    for line in markdown.splitlines():
        stripped = line.strip()
        if current is None:
            if stripped.startswith("```"):
                current = []
        elif stripped == "```":
            blocks.append("\n".join(current))
            current = None
        else:
            current.append(line)
    return blocks


# --- prompts -------------------------------------------------------------------------

MANAGER_SYSTEM = (
    "You are the manager of a problem-solving team working on mechanics problems. "
    "Restate the problem you are given as a well-structured, clear natural language description: "
    "list the known quantities with units, the objective, the governing formulas, and the "
    "assumptions you make. Interpret any figures that are attached. "
    "Finish by stating that the problem is ready for the solver."
)

SOLVER_SYSTEM = (
    "You are the solver on a problem-solving team. Work on the restated problem you receive.\n"
    "Respond in structured Markdown. In your first reply, give only a numbered plan of the steps "
    "you will take. Then carry out the plan step by step. Whenever a computation is needed, write "
    "a fenced Python code block; print every result you need to see, because the execution record "
    "(stdout, stderr, return code) is sent back to you as a tool message before your next turn. "
    f"When the problem is fully solved, state the final answers with units and end your message "
    f"with a line containing only {END_TOKEN}."
)

REVIEWER_SYSTEM = (
    "You are the reviewer on a problem-solving team. Compare the solver's answer with the ground "
    "truth. Give detailed feedback on any missing steps, miscalculations, or logical flaws, and "
    "comment on the clarity of the reasoning. Then give a binary judgment of correctness and an "
    "overall score out of 100. End your reply with two lines exactly in this form:\n"
    "Correct: yes|no\n"
    "Final Score: <number>/100"
)


# --- agent operations ----------------------------------------------------------------

def run_manager(state: MasState, gateway: Gateway, manager_model: str, cfg: MasConfig) -> ManagerDecision:
    """Restate the problem and route it. Grade-only inputs (an explicit
    input flag, never text sniffing) go straight to the reviewer."""
    if state.phase != "managing":
        raise ValueError(f"run_manager called in phase {state.phase}")
    problem = state.problem

    parts: list[Text | ImageRef] = [Text(problem.prompt_text)]
    parts.extend(ImageRef(p) for p in problem.image_paths)
    request = GenerationRequest(
        model_id=manager_model,
        messages=[text_message("system", MANAGER_SYSTEM), ChatMessage(role="user", parts=tuple(parts))],
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        request_tag=f"{problem.problem_id}:manager",
    )
    result = gateway.complete(request)
    if not result.text.strip():
        raise ManagerError(f"{problem.problem_id}: manager returned empty output")

    state.history.append(AgentTurn(agent="manager", content=result.text))
    state.restated_problem = result.text
    route = "to_reviewer" if problem.grade_only else "to_solver"
    return ManagerDecision(restated_problem=result.text, route=route)


def run_solver_loop(
    state: MasState,
    gateway: Gateway,
    solver_model: str,
    runner: Callable[[str], CodeExecution],
    cfg: MasConfig,
    observer: Observer | None = None,
) -> MasState:
    """Drive the plan/execute loop until the solver emits the END line or a
    guard fires. Runner failures are not errors: stderr and the return code
    go back to the solver as a tool message. On truncation the final turn
    may carry fewer executions than code blocks (the cap is absolute)."""
    if state.phase != "solving":
        raise ValueError(f"run_solver_loop called in phase {state.phase}")
    if not state.restated_problem:
        raise ValueError("solver loop requires a restated problem")

    problem = state.problem
    conversation: list[ChatMessage] = [
        text_message("system", SOLVER_SYSTEM),
        text_message("user", state.restated_problem),
    ]

    while True:
        if state.turn_count >= cfg.max_turns:
            state.truncated = True
            break
        request = GenerationRequest(
            model_id=solver_model,
            messages=list(conversation),
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            request_tag=f"{problem.problem_id}:solver{state.turn_count}",
        )
        result = gateway.complete(request)
        text = result.text
        conversation.append(text_message("assistant", text))

        turn = AgentTurn(agent="solver", content=text)
        state.history.append(turn)
        state.turn_count += 1
        if observer:
            observer("solver_turn", {"content": text})

        hit_exec_cap = False
        for code in extract_code_blocks(text):
            if state.code_exec_count >= cfg.max_code_execs:
                hit_exec_cap = True
                break
            execution = runner(code)
            state.code_exec_count += 1
            turn.code_executions.append(execution)
            conversation.append(text_message("tool", json.dumps(execution.to_record(), ensure_ascii=False)))
            if observer:
                observer("code_execution", execution.to_record())

        if hit_exec_cap:
            state.truncated = True  # some blocks were skipped; never silent
        if hit_exec_cap or any(line.strip() == END_TOKEN for line in text.splitlines()):
            break

    state.transition("managing")
    return state


_SCORE_RE = re.compile(
    r"(?:final|total|overall)\s+score\s*[:\-]?[\s\*]*(\d+(?:\.\d+)?)\s*(?:/\s*(\d+(?:\.\d+)?))?",
    re.IGNORECASE,
)
_PERCENT_RE = re.compile(r"^\s*\(\s*(\d+(?:\.\d+)?)\s*%\s*\)")
_CORRECT_RE = re.compile(r"\bcorrect(?:ness)?\s*[:\-][\s\*]*(yes|no|true|false)\b", re.IGNORECASE)


def parse_review_text(text: str) -> tuple[bool | None, int | None, bool]:
    """(correct, score, out_of_range) from reviewer prose. Last occurrences
    win; accepts 'Final Score: 84/100', 'Total Score: 50/50 (100%)' (percent
    form wins), bare 'Final Score:\\n65', and denominators other than 100
    (scaled to percent). Out-of-range scores are clamped and flagged."""
    correct: bool | None = None
    matches = list(_CORRECT_RE.finditer(text))
    if matches:
        correct = matches[-1].group(1).lower() in ("yes", "true")

    score: int | None = None
    out_of_range = False
    score_matches = list(_SCORE_RE.finditer(text))
    if score_matches:
        m = score_matches[-1]
        value = float(m.group(1))
        denom = float(m.group(2)) if m.group(2) else None
        percent = _PERCENT_RE.match(text[m.end():])
        if percent:
            value = float(percent.group(1))
        elif denom and denom > 0 and denom != 100:
            value = value / denom * 100.0
        rounded = int(round(value))
        if rounded < 0 or rounded > 100:
            out_of_range = True
        score = min(100, max(0, rounded))
    return correct, score, out_of_range


def run_reviewer(state: MasState, gateway: Gateway, reviewer_model: str, cfg: MasConfig) -> Review:
    """Grade the solver's answer against the ground truth. One re-ask is
    allowed when no verdict or score can be parsed; after that the caller
    gets ReviewParseError and the transcript records the review as
    unavailable."""
    if state.phase != "reviewing":
        raise ValueError(f"run_reviewer called in phase {state.phase}")
    problem = state.problem
    if problem.ground_truth is None:
        raise ValueError("run_reviewer requires a ground truth")

    if problem.grade_only and problem.candidate_solution is not None:
        solver_answer = problem.candidate_solution
    else:
        solver_answer = "\n\n".join(t.content for t in state.history if t.agent == "solver")

    sections = [
        "Problem:\n" + (state.restated_problem or problem.prompt_text),
        "Solver's answer:\n" + solver_answer,
        "Ground truth:\n" + problem.ground_truth,
    ]
    if problem.reference_steps:
        sections.append("Reference solution steps:\n" + problem.reference_steps)
    messages = [text_message("system", REVIEWER_SYSTEM), text_message("user", "\n\n".join(sections))]

    last_text = ""
    for attempt in range(2):  # one re-ask on an unparseable verdict
        request = GenerationRequest(
            model_id=reviewer_model,
            messages=messages,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            request_tag=f"{problem.problem_id}:reviewer:try{attempt}",
        )
        last_text = gateway.complete(request).text
        correct, score, out_of_range = parse_review_text(last_text)
        if correct is not None or score is not None:
            state.history.append(AgentTurn(agent="reviewer", content=last_text))
            return Review(correct=correct, score=score, feedback=last_text, out_of_range=out_of_range)

    state.history.append(AgentTurn(agent="reviewer", content=last_text))
    raise ReviewParseError(f"{problem.problem_id}: no recognizable verdict in reviewer output")


# --- whole-problem orchestration -------------------------------------------------------

@dataclass
class MasTranscript:
    problem: ProblemInput
    config: MasConfig
    turns: list[AgentTurn]
    review: Review | None
    truncated: bool
    error: str | None
    phases: list[str]

    def to_dict(self) -> dict:
        return {
            "problem": {
                "problem_id": self.problem.problem_id,
                "prompt_text": self.problem.prompt_text,
                "image_paths": list(self.problem.image_paths),
                "ground_truth": self.problem.ground_truth,
                "reference_steps": self.problem.reference_steps,
                "grade_only": self.problem.grade_only,
                "candidate_solution": self.problem.candidate_solution,
            },
            "config": self.config.to_dict(),
            "turns": [
                {
                    "agent": t.agent,
                    "content": t.content,
                    "code_executions": [e.to_record() for e in t.code_executions],
                }
                for t in self.turns
            ],
            "review": None
            if self.review is None
            else {
                "correct": self.review.correct,
                "score": self.review.score,
                "feedback": self.review.feedback,
                "out_of_range": self.review.out_of_range,
            },
            "truncated": self.truncated,
            "error": self.error,
            "phases": list(self.phases),
        }


def solve_problem(
    problem: ProblemInput,
    cfg: MasConfig,
    gateway: Gateway,
    runner: Callable[[str], CodeExecution] = execute,
    transcript_dir: str | Path | None = None,
    observer: Observer | None = None,
) -> MasTranscript:
    """Run managing -> solving -> managing -> reviewing -> done over one
    problem. Review is skipped when no ground truth is attached. Aborting
    errors still produce a complete transcript with an error record; the
    transcript file is written atomically."""
    state = MasState(problem=problem)
    try:
        decision = run_manager(state, gateway, cfg.manager_model, cfg)
        if observer:
            observer("manager_turn", {"content": decision.restated_problem, "route": decision.route})

        if decision.route == "to_solver":
            state.transition("solving")
            run_solver_loop(state, gateway, cfg.solver_model, runner, cfg, observer=observer)
            # The post-solve manager step is a pure routing decision; no
            # second manager call or turn is made.

        if problem.ground_truth is not None:
            state.transition("reviewing")
            try:
                state.review = run_reviewer(state, gateway, cfg.reviewer_model, cfg)
                if observer:
                    observer(
                        "reviewer_turn",
                        {
                            "content": state.review.feedback,
                            "correct": state.review.correct,
                            "score": state.review.score,
                        },
                    )
            except ReviewParseError as exc:
                state.error = f"ReviewParseError: {exc}"
            state.transition("done")
        else:
            state.transition("done")
    except (TransportError, ProviderError, ManagerError, ScriptExhaustedError) as exc:
        state.error = f"{type(exc).__name__}: {exc}"
        state.phase = "done"
        state.phase_trace.append("done")

    transcript = MasTranscript(
        problem=problem,
        config=cfg,
        turns=state.history,
        review=state.review,
        truncated=state.truncated,
        error=state.error,
        phases=state.phase_trace,
    )
    if transcript_dir is not None:
        write_transcript(transcript, transcript_dir)
    return transcript


def write_transcript(transcript: MasTranscript, directory: str | Path) -> Path:
    """Atomic write (temp file + rename): a crash never leaves a partial
    transcript behind."""
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    final = out_dir / f"{transcript.problem.problem_id}.transcript.json"
    payload = json.dumps(transcript.to_dict(), ensure_ascii=False, indent=2) + "\n"
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, final)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return final
