"""Independent reference implementations used as oracles by the tests.

These are deliberately naive (recursive splitting, O(n^2) greedy scans,
plain-Python arithmetic) and share no code with the package paths they
check. Keep them that way: if an oracle ever imports the implementation it
verifies, the test stops meaning anything.
"""

from __future__ import annotations

import math

DEFAULT_SEPARATORS = ("\n\n", "\n", " ", "")


# --- chunker reference ------------------------------------------------------

def reference_split_spans(
    text: str,
    chunk_size: int,
    overlap: int,
    separators: tuple[str, ...] = DEFAULT_SEPARATORS,
) -> list[tuple[int, int]]:
    """Spans (start, end) of the chunks the stated algorithm produces:
    recursive separator split, greedy merge to chunk_size, then an overlap
    tail cut at the nearest separator boundary at or before the budget."""

    def atomize(segment: str, seps: tuple[str, ...]) -> list[str]:
        if len(segment) <= chunk_size:
            return [segment]
        if not seps or seps[0] == "":
            return [segment[i : i + chunk_size] for i in range(0, len(segment), chunk_size)]
        sep, rest = seps[0], seps[1:]
        parts = segment.split(sep)
        if len(parts) == 1:
            return atomize(segment, rest)
        pieces = [p + sep for p in parts[:-1]]
        if parts[-1]:
            pieces.append(parts[-1])
        out: list[str] = []
        for piece in pieces:
            if len(piece) <= chunk_size:
                out.append(piece)
            else:
                out.extend(atomize(piece, rest))
        return out

    pieces = atomize(text, separators)

    cores: list[tuple[int, int]] = []
    start = 0
    acc = 0
    for piece in pieces:
        if acc and acc + len(piece) > chunk_size:
            cores.append((start, start + acc))
            start += acc
            acc = 0
        acc += len(piece)
    cores.append((start, start + acc))

    spans = [cores[0]]
    for core_start, core_end in cores[1:]:
        budget = min(overlap, chunk_size - (core_end - core_start))
        tail = 0
        for t in range(budget, 0, -1):
            cut = core_start - t
            if cut == 0 or text[cut - 1] in (" ", "\n"):
                tail = t
                break
        spans.append((core_start - tail, core_end))
    return spans


# --- vector math reference ----------------------------------------------------

def python_cosine(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def brute_force_mmr(query, pool: list[tuple[str, list[float]]], k: int, lam: float) -> list[str]:
    """Greedy MMR evaluated candidate by candidate each step; ties resolved
    by iterating ids in sorted order with a strict improvement test."""
    by_id = {cid: vec for cid, vec in pool}
    selected: list[str] = []
    while len(selected) < min(k, len(pool)):
        best_id = None
        best_score = None
        for cid in sorted(by_id):
            if cid in selected:
                continue
            relevance = python_cosine(query, by_id[cid])
            redundancy = max((python_cosine(by_id[cid], by_id[s]) for s in selected), default=0.0)
            score = lam * relevance - (1.0 - lam) * redundancy
            if best_score is None or score > best_score:
                best_id, best_score = cid, score
        selected.append(best_id)
    return selected


def brute_force_top_k(query, pool: list[tuple[str, list[float]]], k: int) -> list[str]:
    scored = [(-python_cosine(query, vec), cid) for cid, vec in pool]
    return [cid for _, cid in sorted(scored)[:k]]


# --- metric references -----------------------------------------------------------

def brute_force_accuracy(answers: list, labels: list[bool]) -> float:
    hits = 0
    for a, label in zip(answers, labels):
        if a is not None and a == label:
            hits += 1
    return hits / len(labels)


def brute_force_stability(per_question: dict[str, list]) -> float:
    stable = 0
    for rounds in per_question.values():
        if any(r is None for r in rounds):
            continue
        if len(set(rounds)) == 1:
            stable += 1
    return stable / len(per_question)


def brute_force_confidence_variance(per_question: dict[str, list]) -> float:
    total = 0.0
    for values in per_question.values():
        usable = [v for v in values if v is not None]
        if len(usable) < 2:
            continue
        mean = sum(usable) / len(usable)
        total += sum((v - mean) ** 2 for v in usable) / len(usable)
    return total / len(per_question)
