"""Data layer: questions, hypotheses, the fact bank, and embedding files.

File formats (all UTF-8):

* Corpus: JSONL, one question per line with keys
  ``{"id", "stem", "candidates": [{"label", "text"}, ...], "answer",
  "explanation_ids": [...]}``.
* Fact bank: JSONL with keys ``{"id", "text", "kind"}`` where kind is
  ``"abstract"`` or ``"grounding"``.
* Embeddings: a header line ``ids=<count> dim=<d>`` followed by one line
  per sentence, ``<id>\\t<f1> <f2> ... <fd>``. Floats are printed in
  shortest round-trip form, so write(load(p)) is byte-identical.

Every structure here is immutable after construction and safe to share
across concurrent readers.

A hypothesis is keyed in embedding files as ``<question_id>::<label>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .scoring import DEFAULT_NORMALIZER, TermNormalizer


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def hypothesis_sentence_id(question_id: str, label: str) -> str:
    return f"{question_id}::{label}"


@dataclass(frozen=True)
class Question:
    id: str
    stem: str
    candidates: tuple[tuple[str, str], ...]
    gold_answer: str
    gold_explanation_ids: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValidationError(f"question {self.id!r} needs >= 2 candidates")
        labels = [label for label, _ in self.candidates]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"question {self.id!r} has duplicate candidate labels")
        if self.gold_answer not in set(labels):
            raise ValidationError(
                f"question {self.id!r}: answer {self.gold_answer!r} is not a candidate label"
            )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.candidates)


@dataclass(frozen=True)
class Hypothesis:
    """A question stem concatenated with one candidate answer."""

    question_id: str
    candidate_label: str
    text: str
    term_set: frozenset[str]
    embedding: np.ndarray | None = None

    @property
    def sentence_id(self) -> str:
        return hypothesis_sentence_id(self.question_id, self.candidate_label)


class FactKind(Enum):
    ABSTRACT = "abstract"
    GROUNDING = "grounding"


@dataclass(frozen=True)
class Fact:
    id: str
    text: str
    kind: FactKind
    term_set: frozenset[str]
    embedding: np.ndarray | None = None

    @property
    def is_abstract(self) -> bool:
        return self.kind is FactKind.ABSTRACT


class FactBank:
    """Id-indexed fact collection preserving file order."""

    def __init__(self, facts: Sequence[Fact]):
        self._facts = list(facts)
        self._by_id: dict[str, Fact] = {}
        for f in self._facts:
            if f.id in self._by_id:
                raise ValidationError(f"duplicate fact id {f.id!r}")
            self._by_id[f.id] = f

    def __len__(self) -> int:
        return len(self._facts)

    def __iter__(self) -> Iterator[Fact]:
        return iter(self._facts)

    def __contains__(self, fact_id: str) -> bool:
        return fact_id in self._by_id

    def __getitem__(self, fact_id: str) -> Fact:
        try:
            return self._by_id[fact_id]
        except KeyError:
            raise ValidationError(f"unknown fact id {fact_id!r}") from None

    @property
    def num_grounding(self) -> int:
        return sum(1 for f in self._facts if f.kind is FactKind.GROUNDING)

    @property
    def num_abstract(self) -> int:
        return sum(1 for f in self._facts if f.kind is FactKind.ABSTRACT)


class EmbeddingStore:
    """Fixed-dimension sentence vectors keyed by sentence id.

    Stored vectors are finite, nonzero, and read-only.
    """

    def __init__(self, dimension: int, vectors: Mapping[str, np.ndarray]):
        if dimension < 1:
            raise ValidationError(f"embedding dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}
        for sid, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dimension,):
                raise ValidationError(
                    f"vector for {sid!r} has {arr.shape[0] if arr.ndim == 1 else arr.shape} "
                    f"components, expected {dimension}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"vector for {sid!r} has non-finite components")
            if not np.any(arr):
                raise ValidationError(f"vector for {sid!r} is all zeros (cosine undefined)")
            arr = arr.copy()
            arr.flags.writeable = False
            self._vectors[sid] = arr

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self._vectors

    def ids(self) -> Iterator[str]:
        return iter(self._vectors)

    def get(self, sentence_id: str) -> np.ndarray:
        try:
            return self._vectors[sentence_id]
        except KeyError:
            raise ValidationError(f"no embedding stored for sentence id {sentence_id!r}") from None


def build_hypotheses(q: Question, normalizer: TermNormalizer | None = None) -> list[Hypothesis]:
    """One hypothesis per candidate, in candidate order.

    The text is the whitespace-normalized concatenation of stem and
    candidate text; an empty candidate degrades to the stem alone.
    """
    norm = normalizer or DEFAULT_NORMALIZER
    out = []
    for label, cand_text in q.candidates:
        text = normalize_whitespace(f"{q.stem} {cand_text}")
        out.append(
            Hypothesis(
                question_id=q.id,
                candidate_label=label,
                text=text,
                term_set=norm.terms(text),
            )
        )
    return out


def _read_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc


def load_corpus(path: str | Path, normalizer: TermNormalizer | None = None) -> list[Question]:
    """Read a corpus JSONL file, preserving question order."""
    questions: list[Question] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        try:
            q = Question(
                id=str(rec["id"]),
                stem=str(rec["stem"]),
                candidates=tuple((str(c["label"]), str(c["text"])) for c in rec["candidates"]),
                gold_answer=str(rec["answer"]),
                gold_explanation_ids=frozenset(str(x) for x in rec.get("explanation_ids", [])),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(str(path), lineno, f"missing or malformed field: {exc}") from exc
        if q.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate question id {q.id!r}")
        seen.add(q.id)
        questions.append(q)
    return questions


def write_corpus(questions: Sequence[Question], path: str | Path) -> None:
    """Write questions in canonical form (fixed key order, sorted ids)."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            rec = {
                "id": q.id,
                "stem": q.stem,
                "candidates": [{"label": l, "text": t} for l, t in q.candidates],
                "answer": q.gold_answer,
                "explanation_ids": sorted(q.gold_explanation_ids),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_fact_bank(path: str | Path, normalizer: TermNormalizer | None = None) -> FactBank:
    """Read a fact-bank JSONL file."""
    norm = normalizer or DEFAULT_NORMALIZER
    facts: list[Fact] = []
    for lineno, rec in _read_jsonl(path):
        try:
            fid, text, kind_str = str(rec["id"]), str(rec["text"]), str(rec["kind"])
        except (KeyError, TypeError) as exc:
            raise ParseError(str(path), lineno, f"missing or malformed field: {exc}") from exc
        try:
            kind = FactKind(kind_str)
        except ValueError:
            raise ValidationError(
                f"{path}:{lineno}: unknown fact kind {kind_str!r} "
                f"(expected 'abstract' or 'grounding')"
            ) from None
        facts.append(Fact(id=fid, text=text, kind=kind, term_set=norm.terms(text)))
    return FactBank(facts)


def write_fact_bank(bank: FactBank, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in bank:
            rec = {"id": f.id, "text": f.text, "kind": f.kind.value}
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_embeddings(path: str | Path) -> EmbeddingStore:
    """Read an embedding file, enforcing header consistency and vector invariants."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        try:
            count = int(parts[0].removeprefix("ids="))
            dim = int(parts[1].removeprefix("dim="))
            if len(parts) != 2 or not parts[0].startswith("ids=") or not parts[1].startswith("dim="):
                raise ValueError
        except (IndexError, ValueError):
            raise ParseError(str(path), 1, f"bad header {header!r}, expected 'ids=<count> dim=<d>'") from None
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            sid, _, payload = line.partition("\t")
            if not payload:
                raise ParseError(str(path), lineno, "expected '<id>\\t<floats>'")
            if sid in vectors:
                raise ValidationError(f"{path}:{lineno}: duplicate sentence id {sid!r}")
            comps = payload.split()
            if len(comps) != dim:
                raise ValidationError(
                    f"{path}:{lineno}: vector for {sid!r} has {len(comps)} components, expected {dim}"
                )
            try:
                vec = np.array([float(c) for c in comps], dtype=np.float64)
            except ValueError:
                raise ParseError(str(path), lineno, f"non-numeric component for {sid!r}") from None
            vectors[sid] = vec
    if len(vectors) != count:
        raise ValidationError(f"{path}: header declares {count} ids but body has {len(vectors)}")
    return EmbeddingStore(dim, vectors)


def write_embeddings(vectors: Mapping[str, Sequence[float] | np.ndarray], path: str | Path) -> None:
    """Write vectors in the embedding file format (shortest-repr floats)."""
    items = list(vectors.items())
    if not items:
        raise ValidationError("refusing to write an empty embedding file")
    dim = len(np.atleast_1d(items[0][1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ids={len(items)} dim={dim}\n")
        for sid, vec in items:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ValidationError(f"vector for {sid!r} has shape {arr.shape}, expected ({dim},)")
            fh.write(sid + "\t" + " ".join(repr(float(x)) for x in arr) + "\n")
