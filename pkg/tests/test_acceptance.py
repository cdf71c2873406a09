"""Acceptance suite: one test per acceptance criterion.

Each test enforces the criterion's runtime budget and prints a pass line
(run with ``pytest tests/test_acceptance.py -v -s`` to see them). All
criteria run fully offline against the scripted backend and the stub
embedder.
"""

from __future__ import annotations

import json
import random
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from biotutor.code_runner import RunnerLimits, execute
from biotutor.concept_qa import parse_structured_answer, prompt_level
from biotutor.corpus import Document, split_chunks
from biotutor.errors import CorruptIndexError
from biotutor.eval_harness import (
    ExperimentGrid,
    QuestionRecord,
    accuracy,
    confidence_variance,
    run_concept_experiment,
    stability,
)
from biotutor.llm_gateway import Gateway, ScriptedBackend, ScriptEntry
from biotutor.mas_engine import MasConfig, ProblemInput, extract_code_blocks, solve_problem
from biotutor.retrieval import StubEmbeddingBackend, build_index, index_load, index_save, mmr_select
from biotutor.service import ServiceState, create_app
from biotutor.corpus import Chunk

import mas_fixtures as fx
from conftest import make_gateway, write_config
from oracles import (
    brute_force_accuracy,
    brute_force_confidence_variance,
    brute_force_mmr,
    brute_force_stability,
    brute_force_top_k,
)


@contextmanager
def criterion(name: str, budget_s: float):
    started = time.perf_counter()
    yield
    elapsed = time.perf_counter() - started
    assert elapsed < budget_s, f"{name}: took {elapsed:.1f}s, budget {budget_s}s"
    print(f"[PASS] {name} ({elapsed:.2f}s, budget {budget_s:g}s)")


def _random_text(rng: random.Random, size: int) -> str:
    atoms = ["alpha", "beta", "x", "muscle", " ", " ", "\n", "\n\n", ".", "é", "force"]
    out: list[str] = []
    total = 0
    while total < size:
        piece = rng.choice(atoms)
        out.append(piece)
        total += len(piece)
    return "".join(out)[:size] or "a"


def test_chunker_soundness():
    with criterion("chunker soundness (1000 random cases + 1000/200 defaults)", 10.0):
        rng = random.Random(1234)
        for case in range(1000):
            if case % 10 == 0:
                chunk_size, overlap = 1000, 200  # the configured defaults
                text = _random_text(rng, rng.randint(1, 6000))
            else:
                chunk_size = rng.randint(1, 500)
                overlap = rng.randint(0, chunk_size - 1)
                text = _random_text(rng, rng.randint(1, 2500))
            doc = Document(doc_id="d", source_path="mem", cleaned_text=text)
            chunks = split_chunks(doc, chunk_size=chunk_size, overlap=overlap)

            rebuilt = ""
            prev_end = None
            for c in chunks:
                assert len(c.text) <= chunk_size
                assert c.text == text[c.start : c.end]
                if prev_end is None:
                    assert c.start == 0
                    rebuilt = c.text
                else:
                    shared = prev_end - c.start
                    assert 0 <= shared <= overlap
                    rebuilt += c.text[shared:]
                prev_end = c.end
            assert rebuilt == text


def test_mmr_oracle_equivalence():
    with criterion("MMR oracle equivalence (500 pools) and lambda=1 top-k", 5.0):
        rng = random.Random(77)
        for _ in range(500):
            n = rng.randint(1, 12)
            pool = [(f"c{i:03d}", [rng.gauss(0, 1) for _ in range(8)]) for i in range(n)]
            query = [rng.gauss(0, 1) for _ in range(8)]
            k = rng.randint(1, 6)
            lam = rng.random()
            got = mmr_select(query, [(cid, vec) for cid, vec in pool], k=k, lambda_mult=lam)
            assert got == brute_force_mmr(query, pool, k, lam)

            top = mmr_select(query, [(cid, vec) for cid, vec in pool], k=k, lambda_mult=1.0)
            assert top == brute_force_top_k(query, pool, min(k, n))


def test_metric_oracle_equivalence():
    with criterion("metric oracle equivalence (1000 random logs + hand fixtures)", 5.0):
        assert stability({"q1": [True, True, True], "q2": [True, False, True]}) == 0.5
        assert confidence_variance({"q": [0.6, 0.8, 1.0]}) == pytest.approx(0.0267, abs=1e-4)

        rng = random.Random(2025)
        for _ in range(1000):
            n_q = rng.randint(1, 10)
            rounds = rng.randint(2, 4)
            labels = [rng.random() < 0.5 for _ in range(n_q)]
            answers = {f"q{i}": [rng.choice([True, False, None]) for _ in range(rounds)] for i in range(n_q)}
            confs = {
                qid: [None if a is None or rng.random() < 0.15 else round(rng.random(), 3) for a in row]
                for qid, row in answers.items()
            }
            for r in range(rounds):
                col = [answers[f"q{i}"][r] for i in range(n_q)]
                assert accuracy(col, labels) == pytest.approx(brute_force_accuracy(col, labels), abs=1e-9)
            assert stability(answers) == pytest.approx(brute_force_stability(answers), abs=1e-9)
            assert confidence_variance(confs) == pytest.approx(
                brute_force_confidence_variance(confs), abs=1e-9
            )


def synthetic_questions(n: int) -> list[QuestionRecord]:
    topics = ("statics", "dynamics", "biomaterials")
    return [
        QuestionRecord(id=f"q{i:03d}", question=f"Synthetic statement {i} holds?", answer=i % 2 == 0, topic=topics[i % 3])
        for i in range(n)
    ]


def test_grid_exhaustiveness(tmp_path):
    with criterion("grid exhaustiveness: 24 cells, 7200 scheduled calls", 60.0):
        grid = ExperimentGrid(
            models=["model-a", "model-b"],
            prompt_levels=[prompt_level(1), prompt_level(2), prompt_level(3)],
            temperatures=[0.6, 0.8],
            rag=[False, True],
            rounds=3,
        )
        cells = grid.cells()
        assert len(cells) == 24
        assert len({c.fingerprint() for c in cells}) == 24

        dataset = synthetic_questions(100)
        embed = StubEmbeddingBackend(dim=8)
        chunks = [
            Chunk(chunk_id=f"d0:{i:04d}", doc_id="d0", text=f"background passage {i}", start=0, end=10)
            for i in range(40)
        ]
        index = build_index(chunks, embed)

        backend = ScriptedBackend([ScriptEntry(reply='{"answer": true, "context": "c", "confidence": 0.8}', repeat=True)])
        gateway = Gateway(backend)
        results = run_concept_experiment(grid, dataset, gateway, tmp_path, index=index, embed_backend=embed)
        assert len(results) == 24
        assert len(backend.requests) == 24 * 100 * 3  # 7200 scheduled calls


def test_structured_answer_parsing():
    with criterion("structured-answer parsing: fixtures + 200 corruptions", 2.0):
        single_quoted_true = (
            "‘answer’: True, ‘context’: ‘Averaged loads can look static when "
            "changes aren’t too abrupt over a stride’, ‘confidence’: ‘0.8’."
        )
        json_false = '{"answer": false, "context": "Running involves dynamic movements", "confidence": 0.9}'
        single_quoted_false = (
            "'answer': False, 'context': 'Net forces are not zero during running', 'confidence': '0.8'"
        )
        for text, expected in [
            (single_quoted_true, (True, 0.8)),
            (json_false, (False, 0.9)),
            (single_quoted_false, (False, 0.8)),
        ]:
            parsed = parse_structured_answer(text)
            assert parsed.parse_ok, text
            assert parsed.answer is expected[0]
            assert parsed.confidence == pytest.approx(expected[1])

        rng = random.Random(55)
        base = json_false
        for _ in range(200):
            corrupted = list(base)
            for _ in range(rng.randint(1, 12)):
                op = rng.randrange(3)
                pos = rng.randrange(max(1, len(corrupted)))
                if op == 0 and corrupted:
                    del corrupted[pos % len(corrupted)]
                elif op == 1:
                    corrupted.insert(pos, rng.choice('{}[]",:x7‘’ '))
                else:
                    span = rng.randint(1, 10)
                    del corrupted[pos : pos + span]
            text = "".join(corrupted)
            parsed = parse_structured_answer(text)  # must never raise
            assert parsed.raw_text == text
            if "answer" not in text.lower():
                assert parsed.parse_ok is False


def assert_replay_invariants(transcript) -> None:
    trace = ",".join(transcript.phases)
    import re as _re

    assert _re.match(r"^managing(,solving,managing)*(,reviewing)?,done$", trace), trace
    for turn in transcript.turns:
        if turn.agent == "solver":
            blocks = extract_code_blocks(turn.content)
            assert len(blocks) == len(turn.code_executions)
            for block, ex in zip(blocks, turn.code_executions):
                assert ex.code == block
        else:
            assert turn.code_executions == []


def test_mas_replay(tmp_path):
    with criterion("MAS replay: score 95, hybrid 84 and 100, invariants", 10.0):
        problem = ProblemInput(problem_id="cg", prompt_text=fx.PROBLEM_TEXT, ground_truth=fx.GROUND_TRUTH)

        uniform = MasConfig(manager_model="multi-modal", solver_model="multi-modal", reviewer_model="multi-modal")
        gateway, _ = make_gateway(fx.replay_script(fx.REVIEWER_SCORE_95))
        transcript = solve_problem(problem, uniform, gateway, runner=execute, transcript_dir=tmp_path)
        assert transcript.phases == ["managing", "solving", "managing", "reviewing", "done"]
        assert transcript.review.score == 95
        assert_replay_invariants(transcript)

        hybrid = MasConfig(manager_model="vision-model", solver_model="text-model", reviewer_model="text-model")
        gateway84, _ = make_gateway(fx.replay_script(fx.REVIEWER_SCORE_84))
        t84 = solve_problem(problem, hybrid, gateway84, runner=execute)
        assert t84.review.score == 84
        assert_replay_invariants(t84)

        gateway100, _ = make_gateway(fx.replay_script(fx.REVIEWER_SCORE_PERCENT))
        t100 = solve_problem(problem, hybrid, gateway100, runner=execute)
        assert t100.review.score == 100
        assert_replay_invariants(t100)


def test_code_runner_fixtures():
    with criterion("code-runner fixtures: CG arithmetic, ball mass, timeout kill", 15.0):
        cg = execute("print((3.75*-0.600 + 3.75*0.258 + 67.5*0)/75)")
        assert cg.returncode == 0
        assert float(cg.stdout) == pytest.approx(-0.0171, abs=1e-4)

        ball = execute("print(75*0.0171/2)")
        assert ball.returncode == 0
        assert float(ball.stdout) == pytest.approx(0.64125, abs=1e-5)

        loop = execute("while True: pass", RunnerLimits(timeout_s=1.0))
        assert loop.timed_out is True
        assert loop.returncode == -1
        assert 0.5 <= loop.duration_s <= 1.5


def _scripted_concept_script() -> list[dict]:
    # Deterministic but non-constant: per-question matchers give mixed
    # answers, one question always parses invalid.
    return [
        {"reply": '{"answer": true, "context": "couple", "confidence": 0.9}', "match": "force couple", "repeat": True},
        {"reply": '{"answer": true, "context": "gravity", "confidence": 0.7}', "match": "center of gravity", "repeat": True},
        {"reply": "no structure here at all", "match": "moments is zero", "repeat": True},
        {"reply": '{"answer": false, "context": "lever", "confidence": 0.6}', "match": "first-class lever", "repeat": True},
        {"reply": '{"answer": false, "context": "running", "confidence": 0.8}', "match": "running", "repeat": True},
        {"reply": '{"answer": true, "context": "default", "confidence": 0.75}', "repeat": True},
    ]


def _run_cli_pipeline(workdir: Path) -> dict[str, bytes]:
    """ingest -> eval concepts -> eval mas, entirely scripted; returns the
    bytes of every comparable artifact."""
    from click.testing import CliRunner

    from biotutor.cli import main

    workdir.mkdir(parents=True, exist_ok=True)
    corpus = workdir / "corpus"
    corpus.mkdir()
    (corpus / "notes.txt").write_text(
        "Page 1\nStatics notes. " + "torque balance lever arm " * 120 + "\n\nPage 2\n" + "bone stiffness strain " * 120,
        encoding="utf-8",
    )

    concept_script = _scripted_concept_script()
    mas_script = [
        {"reply": fx.SOLVER_FINAL, "match": "You are the solver", "repeat": True},
        {"reply": fx.REVIEWER_SCORE_95, "match": "You are the reviewer", "repeat": True},
        {"reply": fx.MANAGER_RESTATEMENT, "match": "manager", "repeat": True},
    ]

    concept_config = write_config(workdir / "concept_config.json", concept_script)
    mas_config = write_config(workdir / "mas_config.json", mas_script)

    grid = workdir / "grid.json"
    grid.write_text(
        json.dumps(
            {"models": ["offline-model"], "prompt_levels": [1, 2], "temperatures": [0.6], "rag": [False, True], "rounds": 3}
        ),
        encoding="utf-8",
    )

    sample = Path(__file__).resolve().parent.parent / "sample_data"
    runner = CliRunner()
    index_dir = workdir / "index"
    out_concepts = workdir / "concepts-out"
    out_mas = workdir / "mas-out"

    steps = [
        ["ingest", "--corpus", str(corpus), "--index", str(index_dir), "--config", str(concept_config)],
        [
            "eval", "concepts",
            "--dataset", str(sample / "concepts.jsonl"),
            "--grid", str(grid),
            "--out", str(out_concepts),
            "--index", str(index_dir),
            "--config", str(concept_config),
        ],
        [
            "eval", "mas",
            "--dataset", str(sample / "calc_problems"),
            "--config", str(mas_config),
            "--runs", "2",
            "--out", str(out_mas),
        ],
    ]
    for step in steps:
        result = runner.invoke(main, step)
        assert result.exit_code == 0, f"{step}: {result.output}"

    artifacts: dict[str, bytes] = {}
    for path in sorted(out_concepts.glob("*.csv")):
        artifacts[f"concepts/{path.name}"] = path.read_bytes()
    artifacts["index/vectors"] = (index_dir / "vectors.f32").read_bytes()
    artifacts["mas/report"] = (out_mas / "mas_report.json").read_bytes()
    for path in sorted(out_mas.rglob("*.transcript.json")):
        artifacts[f"mas/{path.parent.name}/{path.name}"] = path.read_bytes()
    return artifacts


def test_end_to_end_determinism(tmp_path):
    with criterion("determinism: two scripted end-to-end runs, bit-identical artifacts", 120.0):
        first = _run_cli_pipeline(tmp_path / "run1")
        second = _run_cli_pipeline(tmp_path / "run2")
        assert first.keys() == second.keys()
        assert "concepts/aggregate.csv" in first
        assert any(name.startswith("mas/rep") for name in first)
        for name in first:
            assert first[name] == second[name], f"artifact differs between runs: {name}"


def test_index_round_trip(tmp_path):
    with criterion("index round-trip: bitwise vectors, truncation rejected", 2.0):
        embed = StubEmbeddingBackend(dim=16)
        chunks = [
            Chunk(chunk_id=f"d0:{i:04d}", doc_id="d0", text=f"chunk text {i}", start=0, end=12) for i in range(9)
        ]
        index = build_index(chunks, embed)
        index_save(index, tmp_path)
        loaded = index_load(tmp_path)
        assert loaded.vectors.tobytes() == index.vectors.tobytes()
        assert loaded.chunk_ids == index.chunk_ids

        blob = (tmp_path / "vectors.f32").read_bytes()
        (tmp_path / "vectors.f32").write_bytes(blob[:-4])
        with pytest.raises(CorruptIndexError):
            index_load(tmp_path)


def test_service_protocol():
    with criterion("service protocol: done-terminated streams, stored == streamed", 10.0):
        def client_for(script):
            backend = ScriptedBackend(script)
            embed = StubEmbeddingBackend(dim=8)
            chunks = [Chunk(chunk_id=f"d0:{i:04d}", doc_id="d0", text=f"p{i}", start=0, end=2) for i in range(3)]
            state = ServiceState(
                gateway=Gateway(backend),
                concept_model="m",
                index=build_index(chunks, embed),
                embed_backend=embed,
                runner=execute,
                mas_config=MasConfig(manager_model="m", solver_model="m", reviewer_model="m"),
            )
            return TestClient(create_app(state))

        def ask(client, mode, question, options=None):
            sid = client.post("/api/sessions", json={"mode": mode}).json()["session_id"]
            with client.stream(
                "POST", f"/api/sessions/{sid}/ask", json={"question": question, "options": options or {}}
            ) as response:
                lines = [l for l in response.read().decode("utf-8").splitlines() if l]
            return sid, [json.loads(l) for l in lines]

        # healthy concept exchange
        client = client_for([ScriptEntry(reply='{"answer": true, "context": "c", "confidence": 0.9}', repeat=True)])
        sid, events = ask(client, "concept", "Is bone viscoelastic?")
        kinds = [e["event_type"] for e in events]
        assert kinds == ["retrieval", "answer", "done"]
        stored = client.get(f"/api/sessions/{sid}").json()["messages"][0]["events"]
        assert [json.dumps(e, sort_keys=True) for e in stored] == [json.dumps(e, sort_keys=True) for e in events]

        # healthy calculation exchange
        client = client_for(fx.replay_script())
        sid, events = ask(client, "calculation", fx.PROBLEM_TEXT, {"ground_truth": fx.GROUND_TRUTH})
        kinds = [e["event_type"] for e in events]
        assert kinds[-1] == "done" and kinds.count("done") == 1
        assert kinds.count("code_execution") == 1

        # injected mid-stream failure: the solver call finds no entry
        client = client_for([ScriptEntry(reply=fx.MANAGER_RESTATEMENT)])
        sid, events = ask(client, "calculation", fx.PROBLEM_TEXT, {"ground_truth": fx.GROUND_TRUTH})
        kinds = [e["event_type"] for e in events]
        assert "error" in kinds
        assert kinds[-1] == "done" and kinds.count("done") == 1
        assert [e["seq"] for e in events] == list(range(len(events)))

        # hard transport failure in concept mode
        client = client_for([ScriptEntry(fail=True, repeat=True)])
        sid, events = ask(client, "concept", "q?")
        kinds = [e["event_type"] for e in events]
        assert "error" in kinds and kinds[-1] == "done"
