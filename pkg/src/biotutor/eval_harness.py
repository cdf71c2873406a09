"""Datasets, the experiment grid, answer metrics, and report emission.

The concept experiment enumerates the full Cartesian grid (models x prompt
levels x temperatures x RAG on/off), asks every question ``rounds`` times
per cell, and summarizes each cell with accuracy mean/std, stability (all
rounds identical), mean per-question confidence variance, and the invalid
rate. Long hosted-model runs are resumable: finished cells are fingerprinted
in a manifest and their per-cell CSVs are reloaded instead of re-executed.

Malformed model output is a first-class tri-state: an Invalid answer counts
as incorrect and breaks stability, so denominators always match the dataset.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .concept_qa import AskConfig, PromptLevel, answer_question, prompt_level
from .errors import DatasetError, HarnessError, ProviderError, ScriptExhaustedError, TransportError
from .llm_gateway import Gateway
from .mas_engine import MasConfig, ProblemInput, solve_problem
from .retrieval import VectorIndex

TOPICS = ("statics", "dynamics", "biomaterials")

AGGREGATE_COLUMNS = "model,prompt_level,temperature,rag,accuracy_mean,accuracy_std,stability,confidence_variance,invalid_rate"
CELL_COLUMNS = "model,prompt_level,temperature,rag,round,question_id,answer,correct,confidence,parse_ok"
PLOT_COLUMNS = "model,prompt_level,temperature,rag,metric,value"
PLOT_METRICS = ("accuracy_mean", "accuracy_std", "stability", "confidence_variance")


# --- datasets --------------------------------------------------------------------

@dataclass(frozen=True)
class QuestionRecord:
    id: str
    question: str
    answer: bool
    topic: str


def load_concept_dataset(path: str | Path) -> list[QuestionRecord]:
    """JSONL of {"id","question","answer":bool,"topic"}; duplicate ids and
    schema violations are rejected with the offending location."""
    src = Path(path)
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    with open(src, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{src}:{lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON: {exc}") from exc
            for key in ("id", "question", "answer", "topic"):
                if key not in raw:
                    raise DatasetError(f"{where}: missing key {key!r}")
            if not isinstance(raw["answer"], bool):
                raise DatasetError(f"{where}: answer must be a boolean, got {raw['answer']!r}")
            if raw["topic"] not in TOPICS:
                raise DatasetError(f"{where}: topic must be one of {TOPICS}, got {raw['topic']!r}")
            if not raw["question"]:
                raise DatasetError(f"{where}: question must be non-empty")
            qid = str(raw["id"])
            if qid in seen:
                raise DatasetError(f"{where}: duplicate question id {qid!r}")
            seen.add(qid)
            records.append(QuestionRecord(id=qid, question=raw["question"], answer=raw["answer"], topic=raw["topic"]))
    if not records:
        raise DatasetError(f"{src}: dataset is empty")
    return records


def load_problem_dir(problem_dir: str | Path) -> ProblemInput:
    """One problem directory: prompt.md (required), optional figure images,
    ground_truth.md, reference_steps.md. A problem without a ground truth
    loads fine; its review phase is skipped later."""
    sub = Path(problem_dir)
    prompt_file = sub / "prompt.md"
    if not prompt_file.is_file():
        raise DatasetError(f"{sub}: missing prompt.md")
    images = tuple(
        str(p) for p in sorted(sub.iterdir()) if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".gif", ".webp")
    )
    gt = sub / "ground_truth.md"
    steps = sub / "reference_steps.md"
    return ProblemInput(
        problem_id=sub.name,
        prompt_text=prompt_file.read_text(encoding="utf-8").strip(),
        image_paths=images,
        ground_truth=gt.read_text(encoding="utf-8").strip() if gt.is_file() else None,
        reference_steps=steps.read_text(encoding="utf-8").strip() if steps.is_file() else None,
    )


def load_calc_dataset(directory: str | Path) -> list[ProblemInput]:
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"calc dataset directory not found: {directory}")
    problems = [load_problem_dir(sub) for sub in sorted(p for p in root.iterdir() if p.is_dir())]
    if not problems:
        raise DatasetError(f"{directory}: no problem directories found")
    return problems


# --- metrics ----------------------------------------------------------------------

def accuracy(round_answers: list[bool | None], labels: list[bool]) -> float:
    """Fraction of answers matching labels; an Invalid (None) never matches."""
    if len(round_answers) != len(labels):
        raise HarnessError(f"length mismatch: {len(round_answers)} answers vs {len(labels)} labels")
    if not labels:
        raise HarnessError("accuracy undefined for an empty dataset")
    hits = sum(1 for a, label in zip(round_answers, labels) if a is not None and a == label)
    return hits / len(labels)


def stability(per_question_rounds: dict[str, list[bool | None]]) -> float:
    """Fraction of questions whose rounds are pairwise identical. Any
    Invalid round makes a question unstable, including all-Invalid."""
    if not per_question_rounds:
        raise HarnessError("stability undefined for zero questions")
    lengths = {len(v) for v in per_question_rounds.values()}
    if len(lengths) != 1:
        raise HarnessError(f"ragged round lists: lengths {sorted(lengths)}")
    if lengths.pop() < 2:
        raise HarnessError("stability requires at least 2 rounds")
    stable = 0
    for rounds in per_question_rounds.values():
        first = rounds[0]
        if first is not None and all(r == first for r in rounds):
            stable += 1
    return stable / len(per_question_rounds)


def confidence_variance(per_question_rounds: dict[str, list[float | None]]) -> float:
    """Population variance of each question's confidences, averaged over
    questions. Missing confidences are excluded pairwise; a question with
    fewer than two usable values contributes 0."""
    if not per_question_rounds:
        raise HarnessError("confidence variance undefined for zero questions")
    lengths = {len(v) for v in per_question_rounds.values()}
    if len(lengths) != 1:
        raise HarnessError(f"ragged confidence lists: lengths {sorted(lengths)}")
    total = 0.0
    for values in per_question_rounds.values():
        usable = [v for v in values if v is not None]
        if len(usable) >= 2:
            mean = sum(usable) / len(usable)
            total += sum((v - mean) ** 2 for v in usable) / len(usable)
    return total / len(per_question_rounds)


def _population_std(values: list[float]) -> float:
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


# --- experiment grid -----------------------------------------------------------------

@dataclass(frozen=True)
class CellConfig:
    model: str
    prompt_level: PromptLevel
    temperature: float
    rag: bool
    rounds: int

    def fingerprint(self) -> str:
        key = json.dumps(
            {
                "model": self.model,
                "prompt_level": self.prompt_level.name,
                "temperature": self.temperature,
                "rag": self.rag,
                "rounds": self.rounds,
            },
            sort_keys=True,
        )
        return hashlib.sha256(key.encode("utf-8")).hexdigest()


@dataclass
class ExperimentGrid:
    models: list[str]
    prompt_levels: list[PromptLevel]
    temperatures: list[float]
    rag: list[bool]
    rounds: int = 3

    def __post_init__(self):
        if not (self.models and self.prompt_levels and self.temperatures and self.rag):
            raise HarnessError("every grid dimension must be non-empty")
        if self.rounds < 1:
            raise HarnessError(f"rounds must be >= 1, got {self.rounds}")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentGrid":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            models=list(raw["models"]),
            prompt_levels=[prompt_level(p) for p in raw.get("prompt_levels", [1, 2, 3])],
            temperatures=[float(t) for t in raw.get("temperatures", [0.6, 0.8])],
            rag=[bool(r) for r in raw.get("rag", [False, True])],
            rounds=int(raw.get("rounds", 3)),
        )

    def cells(self) -> list[CellConfig]:
        """Exhaustive, duplicate-free enumeration in models x levels x
        temperatures x rag order."""
        out = []
        for model in self.models:
            for level in self.prompt_levels:
                for temp in self.temperatures:
                    for rag in self.rag:
                        out.append(CellConfig(model=model, prompt_level=level, temperature=temp, rag=rag, rounds=self.rounds))
        return out


@dataclass(frozen=True)
class RoundOutcome:
    answer: bool | None
    confidence: float | None
    correct: bool
    parse_ok: bool


@dataclass
class CellResult:
    config: CellConfig
    per_question: dict[str, list[RoundOutcome]] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsSummary:
    accuracy_per_round: tuple[float, ...]
    accuracy_mean: float
    accuracy_std: float
    stability: float
    confidence_variance: float
    invalid_rate: float


def summarize_cell(result: CellResult, dataset: list[QuestionRecord]) -> MetricsSummary:
    labels = [q.answer for q in dataset]
    rounds = result.config.rounds
    per_round = []
    for r in range(rounds):
        answers = [result.per_question[q.id][r].answer for q in dataset]
        per_round.append(accuracy(answers, labels))
    answer_map = {q.id: [o.answer for o in result.per_question[q.id]] for q in dataset}
    conf_map = {q.id: [o.confidence for o in result.per_question[q.id]] for q in dataset}
    invalid = sum(1 for q in dataset for o in result.per_question[q.id] if o.answer is None)
    return MetricsSummary(
        accuracy_per_round=tuple(per_round),
        accuracy_mean=sum(per_round) / len(per_round),
        accuracy_std=_population_std(per_round),
        stability=stability(answer_map) if rounds >= 2 else 1.0,
        confidence_variance=confidence_variance(conf_map),
        invalid_rate=invalid / (len(dataset) * rounds),
    )


# --- concept experiment ----------------------------------------------------------------

def run_concept_experiment(
    grid: ExperimentGrid,
    dataset: list[QuestionRecord],
    gateway: Gateway,
    out_dir: str | Path,
    index: VectorIndex | None = None,
    embed_backend=None,
) -> list[tuple[CellResult, MetricsSummary]]:
    """Run every grid cell over the dataset and write report files.

    Writes one CSV and one audit JSONL per cell, plus aggregate.csv and
    plot_data.csv over all completed cells. A manifest keyed by the cell
    fingerprint makes reruns skip finished cells; failed cells are recorded
    and the run continues.
    """
    if any(cell.rag for cell in grid.cells()) and index is None:
        raise HarnessError("grid requests RAG cells but no index was provided")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = _load_manifest(manifest_path)

    results: list[tuple[CellResult, MetricsSummary]] = []
    for cell in grid.cells():
        fp = cell.fingerprint()
        csv_path = out / f"cell-{fp[:12]}.csv"
        entry = manifest.get(fp)
        if entry and entry.get("status") == "done" and csv_path.is_file():
            result = _read_cell_csv(csv_path, cell, dataset)
            results.append((result, summarize_cell(result, dataset)))
            continue

        try:
            result = _run_cell(cell, dataset, gateway, index, embed_backend, out / f"audit-{fp[:12]}.jsonl")
        except (TransportError, ProviderError, ScriptExhaustedError) as exc:
            manifest[fp] = {"status": "failed", "cell": _cell_key(cell), "error": f"{type(exc).__name__}: {exc}"}
            _save_manifest(manifest_path, manifest)
            continue

        _write_cell_csv(csv_path, cell, dataset, result)
        manifest[fp] = {"status": "done", "cell": _cell_key(cell), "csv": csv_path.name}
        _save_manifest(manifest_path, manifest)
        results.append((result, summarize_cell(result, dataset)))

    _write_aggregate_csv(out / "aggregate.csv", results)
    if results:
        emit_plot_data(results, out)
    return results


def _cell_key(cell: CellConfig) -> dict:
    return {
        "model": cell.model,
        "prompt_level": cell.prompt_level.name,
        "temperature": cell.temperature,
        "rag": cell.rag,
        "rounds": cell.rounds,
    }


def _run_cell(
    cell: CellConfig,
    dataset: list[QuestionRecord],
    gateway: Gateway,
    index: VectorIndex | None,
    embed_backend,
    audit_path: Path,
) -> CellResult:
    if cell.rag and index is None:
        raise HarnessError("grid requests RAG cells but no index was provided")
    cfg = AskConfig(
        model_id=cell.model,
        prompt_level=cell.prompt_level,
        temperature=cell.temperature,
        rag_enabled=cell.rag,
        rounds=cell.rounds,
    )
    result = CellResult(config=cell)
    with open(audit_path, "w", encoding="utf-8") as audit:
        for question in dataset:
            outcome = answer_question(question, cfg, gateway, index=index, embed_backend=embed_backend)
            audit.write(json.dumps(outcome.audit_record(), ensure_ascii=False) + "\n")
            result.per_question[question.id] = [
                RoundOutcome(
                    answer=a.answer,
                    confidence=a.confidence,
                    correct=a.answer is not None and a.answer == question.answer,
                    parse_ok=a.parse_ok,
                )
                for a in outcome.answers
            ]
    return result


# --- CSV + manifest IO -------------------------------------------------------------------

def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def _fmt_answer(answer: bool | None) -> str:
    return "invalid" if answer is None else _fmt_bool(answer)


def _open_csv_writer(path: Path, header: str):
    fh = open(path, "w", encoding="utf-8", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header.split(","))
    return fh, writer


def _write_cell_csv(path: Path, cell: CellConfig, dataset: list[QuestionRecord], result: CellResult) -> None:
    fh, writer = _open_csv_writer(path, CELL_COLUMNS)
    with fh:
        for r in range(cell.rounds):
            for q in dataset:
                o = result.per_question[q.id][r]
                writer.writerow(
                    [
                        cell.model,
                        cell.prompt_level.name,
                        repr(cell.temperature),
                        _fmt_bool(cell.rag),
                        str(r),
                        q.id,
                        _fmt_answer(o.answer),
                        _fmt_bool(o.correct),
                        "" if o.confidence is None else repr(o.confidence),
                        _fmt_bool(o.parse_ok),
                    ]
                )


def _read_cell_csv(path: Path, cell: CellConfig, dataset: list[QuestionRecord]) -> CellResult:
    result = CellResult(config=cell)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CELL_COLUMNS.split(","):
            raise HarnessError(f"{path}: unexpected cell CSV header")
        for parts in reader:
            if len(parts) != len(header):
                raise HarnessError(f"{path}: malformed row {parts!r}")
            _, _, _, _, _round, qid, answer, correct, conf, parse_ok = parts
            outcome = RoundOutcome(
                answer=None if answer == "invalid" else answer == "true",
                confidence=None if conf == "" else float(conf),
                correct=correct == "true",
                parse_ok=parse_ok == "true",
            )
            result.per_question.setdefault(qid, []).append(outcome)
    missing = [q.id for q in dataset if q.id not in result.per_question]
    if missing:
        raise HarnessError(f"{path}: cell CSV misses questions {missing[:3]}")
    return result


def _write_aggregate_csv(path: Path, results: list[tuple[CellResult, MetricsSummary]]) -> None:
    fh, writer = _open_csv_writer(path, AGGREGATE_COLUMNS)
    with fh:
        for result, summary in results:
            cell = result.config
            writer.writerow(
                [
                    cell.model,
                    cell.prompt_level.name,
                    repr(cell.temperature),
                    _fmt_bool(cell.rag),
                    repr(summary.accuracy_mean),
                    repr(summary.accuracy_std),
                    repr(summary.stability),
                    repr(summary.confidence_variance),
                    repr(summary.invalid_rate),
                ]
            )


def emit_plot_data(results: list[tuple[CellResult, MetricsSummary]], out_dir: str | Path) -> Path:
    """Tidy CSV, one row per cell per metric, for any plotting tool."""
    if not results:
        raise HarnessError("no summaries to emit")
    path = Path(out_dir) / "plot_data.csv"
    fh, writer = _open_csv_writer(path, PLOT_COLUMNS)
    with fh:
        for result, summary in results:
            cell = result.config
            for metric in PLOT_METRICS:
                writer.writerow(
                    [
                        cell.model,
                        cell.prompt_level.name,
                        repr(cell.temperature),
                        _fmt_bool(cell.rag),
                        metric,
                        repr(getattr(summary, metric)),
                    ]
                )
    return path


def _load_manifest(path: Path) -> dict:
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}


def _save_manifest(path: Path, manifest: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# --- MAS experiment --------------------------------------------------------------------------

@dataclass
class MasRunResult:
    repetition: int
    accuracy: float
    per_problem: dict[str, dict]


@dataclass
class MasReport:
    runs: list[MasRunResult]
    accuracy_mean: float
    accuracy_std: float

    def to_dict(self) -> dict:
        return {
            "runs": [
                {"repetition": r.repetition, "accuracy": r.accuracy, "per_problem": r.per_problem}
                for r in self.runs
            ],
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
        }


def run_mas_experiment(
    problems: list[ProblemInput],
    cfg: MasConfig,
    gateway: Gateway,
    runner,
    repetitions: int = 5,
    out_dir: str | Path | None = None,
) -> MasReport:
    """Solve every problem ``repetitions`` times; per-run accuracy is the
    fraction of problems the reviewer judged correct. Mean and standard
    deviation across repetitions are the error-bar statistic. Per-problem
    failures are recorded on their transcripts and the run continues."""
    if not problems:
        raise HarnessError("no problems to run")
    if repetitions < 1:
        raise HarnessError(f"repetitions must be >= 1, got {repetitions}")

    out = Path(out_dir) if out_dir is not None else None
    runs: list[MasRunResult] = []
    for rep in range(repetitions):
        transcript_dir = out / f"rep{rep}" if out else None
        per_problem: dict[str, dict] = {}
        correct = 0
        for problem in problems:
            transcript = solve_problem(problem, cfg, gateway, runner=runner, transcript_dir=transcript_dir)
            review = transcript.review
            is_correct = bool(review and review.correct)
            correct += int(is_correct)
            per_problem[problem.problem_id] = {
                "correct": None if review is None else review.correct,
                "score": None if review is None else review.score,
                "truncated": transcript.truncated,
                "error": transcript.error,
            }
        runs.append(MasRunResult(repetition=rep, accuracy=correct / len(problems), per_problem=per_problem))

    accuracies = [r.accuracy for r in runs]
    report = MasReport(
        runs=runs,
        accuracy_mean=sum(accuracies) / len(accuracies),
        accuracy_std=_population_std(accuracies),
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "mas_report.json").write_text(
            json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return report
