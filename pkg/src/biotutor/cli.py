"""Command-line entry points: ingest, ask, eval, solve, serve."""

from __future__ import annotations

import functools
import json
from pathlib import Path
from types import SimpleNamespace

import click

from .code_runner import execute
from .concept_qa import AskConfig, answer_question, prompt_level
from .config import TutorConfig
from .corpus import CleaningRules, ingest_corpus
from .eval_harness import (
    ExperimentGrid,
    load_calc_dataset,
    load_concept_dataset,
    load_problem_dir,
    run_concept_experiment,
    run_mas_experiment,
)
from .llm_gateway import Gateway
from .mas_engine import solve_problem, write_transcript
from .retrieval import build_index, index_load, index_save


def _config(path: str | None) -> TutorConfig:
    return TutorConfig.load(path) if path else TutorConfig()


@click.group()
def main():
    """Biomechanics tutoring pipelines: ingest a corpus, ask questions,
    run the evaluation grids, solve calculation problems, serve the API."""


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--rules", type=click.Path(exists=True), help="cleaning rules JSON")
@click.option("--chunk-size", default=1000, show_default=True)
@click.option("--overlap", default=200, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), help="embeddings backend config")
def ingest(corpus_dir, index_dir, rules, chunk_size, overlap, config_path):
    """Clean and chunk a corpus, embed it, and persist the vector index."""
    cfg = _config(config_path)
    cleaning = CleaningRules.from_json(rules) if rules else CleaningRules()
    chunks = ingest_corpus(corpus_dir, cleaning, chunk_size=chunk_size, overlap=overlap)
    backend = cfg.build_embed_backend()
    index = build_index(chunks, backend)
    index_save(index, index_dir)
    click.echo(f"indexed {len(chunks)} chunks (dim {index.dim}, model {index.embedding_model}) -> {index_dir}")


@main.command()
@click.option("--index", "index_dir", type=click.Path(exists=True))
@click.option("--question", required=True)
@click.option("--no-rag", is_flag=True, default=False)
@click.option("--prompt-level", "level", default=2, type=click.IntRange(1, 3), show_default=True)
@click.option("--temperature", default=0.6, show_default=True)
@click.option("--rounds", default=3, show_default=True)
@click.option("--model", "model_id", help="override concept.model_id from the config")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def ask(index_dir, question, no_rag, level, temperature, rounds, model_id, config_path):
    """Answer one true/false question, printing each round's parse."""
    cfg = _config(config_path)
    rag = not no_rag
    if rag and not index_dir:
        raise click.UsageError("--index is required unless --no-rag is given")
    index = index_load(index_dir) if rag else None
    embed_backend = cfg.build_embed_backend() if rag else None
    gateway = Gateway(cfg.build_backend())

    ask_cfg = AskConfig(
        model_id=model_id or cfg.concept_model(),
        prompt_level=prompt_level(level),
        temperature=temperature,
        rag_enabled=rag,
        rounds=rounds,
    )
    record = SimpleNamespace(id="cli", question=question)
    outcome = answer_question(record, ask_cfg, gateway, index=index, embed_backend=embed_backend)
    click.echo(json.dumps(outcome.audit_record(), ensure_ascii=False, indent=2))


@main.group(name="eval")
def eval_group():
    """Evaluation runs over the concept and calculation datasets."""


@eval_group.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--index", "index_dir", type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def concepts(dataset, grid_path, out_dir, index_dir, config_path):
    """Run the full experiment grid and write per-cell and aggregate CSVs."""
    cfg = _config(config_path)
    grid = ExperimentGrid.from_json(grid_path)
    records = load_concept_dataset(dataset)
    index = index_load(index_dir) if index_dir else None
    embed_backend = cfg.build_embed_backend() if index_dir else None
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    gateway = Gateway(cfg.build_backend(), call_log_path=Path(out_dir) / "calls.jsonl")
    results = run_concept_experiment(grid, records, gateway, out_dir, index=index, embed_backend=embed_backend)
    click.echo(f"completed {len(results)}/{len(grid.cells())} cells -> {out_dir}/aggregate.csv")


@eval_group.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--runs", default=5, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def mas(dataset_dir, config_path, runs, out_dir):
    """Solve every calculation problem repeatedly and report accuracy."""
    cfg = _config(config_path)
    problems = load_calc_dataset(dataset_dir)
    gateway = Gateway(cfg.build_backend(), call_log_path=Path(out_dir) / "calls.jsonl")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    runner = functools.partial(execute, limits=cfg.runner_limits())
    report = run_mas_experiment(problems, cfg.mas_config(), gateway, runner, repetitions=runs, out_dir=out_dir)
    click.echo(
        f"accuracy mean {report.accuracy_mean:.3f} std {report.accuracy_std:.3f} "
        f"over {runs} runs x {len(problems)} problems -> {out_dir}/mas_report.json"
    )


@main.command()
@click.option("--problem", "problem_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="transcripts", show_default=True, type=click.Path())
def solve(problem_dir, config_path, out_dir):
    """Solve one calculation problem and write its transcript."""
    cfg = _config(config_path)
    problem = load_problem_dir(problem_dir)
    gateway = Gateway(cfg.build_backend())
    runner = functools.partial(execute, limits=cfg.runner_limits())
    transcript = solve_problem(problem, cfg.mas_config(), gateway, runner=runner)
    path = write_transcript(transcript, out_dir)
    review = transcript.review
    verdict = "no review" if review is None else f"correct={review.correct} score={review.score}"
    click.echo(f"{problem.problem_id}: {verdict} (truncated={transcript.truncated}) -> {path}")


@main.command()
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--index", "index_dir", type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--journal", "journal_path", type=click.Path())
@click.option("--ui", "ui_dir", type=click.Path(exists=True), help="static frontend build to serve at /")
def serve(port, host, index_dir, config_path, journal_path, ui_dir):
    """Run the tutoring HTTP service."""
    import uvicorn

    from .service import ServiceState, create_app

    cfg = _config(config_path)
    state = ServiceState(
        gateway=Gateway(cfg.build_backend()),
        concept_model=cfg.concept.get("model_id", "unset-model"),
        index=index_load(index_dir) if index_dir else None,
        embed_backend=cfg.build_embed_backend() if index_dir else None,
        runner=functools.partial(execute, limits=cfg.runner_limits()),
        mas_config=cfg.mas_config() if cfg.mas else None,
        journal_path=Path(journal_path) if journal_path else None,
    )
    app = create_app(state)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
