"""Document ingestion: boilerplate cleaning and overlap-aware chunking.

Cleaning is an explicit rule list (page-number lines, lines repeated across
pages, dotted TOC leader lines) so the pipeline stays deterministic and
testable. Chunking splits on a separator hierarchy (paragraph break, line
break, space, hard cut), greedily merges pieces up to ``chunk_size``, and
prefixes each chunk after the first with a tail of the previous one, cut at
a separator boundary so overlaps never start mid-word.

All offsets are Unicode code-point counts into ``cleaned_text``.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, EmptyDocument

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 200
DEFAULT_SEPARATORS: tuple[str, ...] = ("\n\n", "\n", " ", "")

_PAGE_NUMBER_RE = re.compile(r"^\s*(?:page\s+)?\d+(?:\s*(?:of|/)\s*\d+)?\s*$", re.IGNORECASE)
_TOC_LEADER_RE = re.compile(r"(?:\.\s*){3,}\d+\s*$")


@dataclass(frozen=True)
class CleaningRules:
    """Which line-level rules are active when cleaning a document.

    ``repeated_line_pages`` is the header/footer threshold: a line whose
    stripped text occurs on at least that many form-feed-separated pages is
    removed everywhere. Texts without form feeds count occurrences instead,
    so a header repeated through a plain-text file is still caught.
    """

    drop_page_numbers: bool = True
    drop_toc_leaders: bool = True
    repeated_line_pages: int = 3
    extra_line_patterns: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, path: str | Path) -> "CleaningRules":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            drop_page_numbers=bool(raw.get("drop_page_numbers", True)),
            drop_toc_leaders=bool(raw.get("drop_toc_leaders", True)),
            repeated_line_pages=int(raw.get("repeated_line_pages", 3)),
            extra_line_patterns=tuple(raw.get("extra_line_patterns", ())),
        )


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_path: str
    cleaned_text: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    start: int
    end: int


def doc_id_for(source_path: str) -> str:
    return hashlib.sha256(source_path.encode("utf-8")).hexdigest()[:12]


def clean_document(
    raw_text: str,
    rules: CleaningRules = CleaningRules(),
    source_path: str = "<memory>",
) -> Document:
    """Remove rule-matched lines from ``raw_text``, preserving line order.

    Raises EmptyDocument when the input is empty or nothing survives
    cleaning; downstream code never has to handle zero-chunk documents.
    """
    if not raw_text or not raw_text.strip():
        raise EmptyDocument(f"{source_path}: document is empty")

    text = raw_text.replace("\r\n", "\n").replace("\r", "\n")
    pages = text.split("\f")

    repeated = _repeated_lines(pages, rules.repeated_line_pages)
    extra = [re.compile(p) for p in rules.extra_line_patterns]

    kept_pages = []
    for page in pages:
        kept = [line for line in page.split("\n") if not _line_matches(line, rules, repeated, extra)]
        kept_pages.append("\n".join(kept))
    cleaned = "\n".join(kept_pages)

    if not cleaned.strip():
        raise EmptyDocument(f"{source_path}: nothing left after cleaning")
    return Document(doc_id=doc_id_for(source_path), source_path=source_path, cleaned_text=cleaned)


def _repeated_lines(pages: list[str], threshold: int) -> set[str]:
    if threshold < 1:
        return set()
    counts: Counter[str] = Counter()
    if len(pages) > 1:
        for page in pages:
            seen = {line.strip() for line in page.split("\n") if line.strip()}
            counts.update(seen)
    else:
        counts.update(line.strip() for line in pages[0].split("\n") if line.strip())
    return {line for line, n in counts.items() if n >= threshold}


def _line_matches(
    line: str,
    rules: CleaningRules,
    repeated: set[str],
    extra: list[re.Pattern[str]],
) -> bool:
    stripped = line.strip()
    if not stripped:
        return False
    if rules.drop_page_numbers and _PAGE_NUMBER_RE.match(stripped):
        return True
    if rules.drop_toc_leaders and _TOC_LEADER_RE.search(stripped):
        return True
    if stripped in repeated:
        return True
    return any(p.search(line) for p in extra)


def split_chunks(
    doc: Document,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    separators: tuple[str, ...] = DEFAULT_SEPARATORS,
) -> list[Chunk]:
    """Split ``doc.cleaned_text`` into overlapping chunks.

    Guarantees: every chunk text is ``cleaned_text[start:end]`` with length
    at most ``chunk_size``; consecutive chunks overlap by 0..``overlap``
    characters; stripping each pairwise overlap and concatenating the
    chunks reproduces the cleaned text exactly.
    """
    if chunk_size < 1:
        raise ConfigError(f"chunk_size must be >= 1, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise ConfigError(f"overlap must be in [0, chunk_size), got {overlap}")
    text = doc.cleaned_text
    if not text:
        raise EmptyDocument(f"{doc.source_path}: empty document")

    pieces = _atomic_pieces(text, chunk_size, separators)

    # Greedy merge of contiguous pieces into core spans of <= chunk_size.
    cores: list[tuple[int, int]] = []
    start = 0
    length = 0
    for piece in pieces:
        if length and length + len(piece) > chunk_size:
            cores.append((start, start + length))
            start += length
            length = 0
        length += len(piece)
    cores.append((start, start + length))

    chunks = []
    for i, (core_start, core_end) in enumerate(cores):
        tail = 0
        if i:
            budget = min(overlap, chunk_size - (core_end - core_start))
            tail = _tail_length(text, core_start, budget)
        s = core_start - tail
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}:{i:04d}",
                doc_id=doc.doc_id,
                text=text[s:core_end],
                start=s,
                end=core_end,
            )
        )
    return chunks


def _atomic_pieces(text: str, chunk_size: int, separators: tuple[str, ...]) -> list[str]:
    """Break text into pieces of <= chunk_size chars, losing nothing.

    Each separator stage only splits pieces that are still oversized, so
    coarse structure survives wherever it already fits.
    """
    pieces = [text]
    for sep in separators:
        if all(len(p) <= chunk_size for p in pieces):
            return pieces
        staged: list[str] = []
        for piece in pieces:
            if len(piece) <= chunk_size:
                staged.append(piece)
            elif sep == "":
                staged.extend(_hard_cut(piece, chunk_size))
            else:
                staged.extend(_split_keep_sep(piece, sep))
        pieces = staged
    # Separator list may omit the hard-cut stage; force-fit what remains.
    out: list[str] = []
    for piece in pieces:
        out.extend(_hard_cut(piece, chunk_size) if len(piece) > chunk_size else [piece])
    return out


def _split_keep_sep(text: str, sep: str) -> list[str]:
    parts = text.split(sep)
    pieces = [part + sep for part in parts[:-1]]
    if parts[-1]:
        pieces.append(parts[-1])
    return pieces


def _hard_cut(text: str, chunk_size: int) -> list[str]:
    return [text[i : i + chunk_size] for i in range(0, len(text), chunk_size)]


def _tail_length(text: str, pos: int, budget: int) -> int:
    """Longest tail <= budget ending at pos that starts at a separator
    boundary; 0 when no boundary is in range (no mid-word prefixes)."""
    for t in range(budget, 0, -1):
        cut = pos - t
        if cut == 0 or text[cut - 1] in (" ", "\n"):
            return t
    return 0


# --- corpus-level helpers ---------------------------------------------------

TEXT_SUFFIXES = (".txt", ".md", ".text")


def load_corpus_dir(corpus_dir: str | Path) -> list[tuple[str, str]]:
    """All text files under a directory tree as (source_path, raw_text)."""
    root = Path(corpus_dir)
    if root.is_file():
        return [(str(root), root.read_text(encoding="utf-8"))]
    if not root.is_dir():
        raise FileNotFoundError(f"corpus path not found: {corpus_dir}")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in TEXT_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no text files under {corpus_dir}")
    return [(str(p), p.read_text(encoding="utf-8")) for p in files]


def ingest_corpus(
    corpus_dir: str | Path,
    rules: CleaningRules = CleaningRules(),
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
) -> list[Chunk]:
    chunks: list[Chunk] = []
    for source_path, raw in load_corpus_dir(corpus_dir):
        doc = clean_document(raw, rules, source_path=source_path)
        chunks.extend(split_chunks(doc, chunk_size=chunk_size, overlap=overlap))
    return chunks


def write_chunks_jsonl(chunks: list[Chunk], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            record = {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "start": c.start, "end": c.end, "text": c.text}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_chunks_jsonl(path: str | Path) -> list[Chunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            chunks.append(Chunk(chunk_id=r["chunk_id"], doc_id=r["doc_id"], text=r["text"], start=r["start"], end=r["end"]))
    return chunks
