"""Term normalization and relevance scoring between hypotheses and facts.

Lexical relevance is the overlap ratio between normalized term sets;
semantic relevance is the cosine similarity between sentence embeddings.
All functions here are pure and safe to call from parallel workers.
"""

from __future__ import annotations

import re
import weakref
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .corpus import EmbeddingStore, Fact, FactBank, Hypothesis

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")

# "es" is stripped only after sibilant-like endings so that e.g. "cases"
# falls through to plain "s"-stripping and keeps its final "e".
_ES_ENDINGS = ("xes", "zes", "sses", "ches", "shes")


class TermNormalizer:
    """Deterministic, dependency-free stand-in for a lemmatizer.

    Pipeline per token: lowercase, alphanumeric split, optional
    lemma-dictionary lookup, plural suffix stripping, stopword filter.
    Stopwords are matched against the fully normalized form, which keeps
    the output a fixed point of the normalizer.
    """

    def __init__(
        self,
        stopwords: Iterable[str] = (),
        lemma_overrides: dict[str, str] | None = None,
    ):
        self.stopwords = frozenset(w.strip().lower() for w in stopwords if w.strip())
        self.lemma_overrides = dict(lemma_overrides or {})

    def normalize_token(self, token: str) -> str:
        t = self.lemma_overrides.get(token, token)
        if len(t) >= 4:
            if t.endswith(_ES_ENDINGS):
                t = t[:-2]
            elif t.endswith("s") and not t.endswith("ss"):
                t = t[:-1]
        return t

    def terms(self, text: str) -> frozenset[str]:
        out = set()
        for raw in _TOKEN_SPLIT.split(text.lower()):
            if not raw:
                continue
            t = self.normalize_token(raw)
            if t and t not in self.stopwords:
                out.add(t)
        return frozenset(out)


DEFAULT_NORMALIZER = TermNormalizer()


def load_stopwords(path: str) -> frozenset[str]:
    """Read a stopword file, one token per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def load_lemma_overrides(path: str) -> dict[str, str]:
    """Read a lemma dictionary file with one "surface<TAB>lemma" pair per line."""
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            surface, _, lemma = line.partition("\t")
            if not lemma:
                raise ValidationError(f"lemma file line {line!r} is not 'surface<TAB>lemma'")
            table[surface.strip().lower()] = lemma.strip().lower()
    return table


def term_set(text: str, stopwords: Iterable[str] = (), normalizer: TermNormalizer | None = None) -> frozenset[str]:
    """Normalized unique terms of ``text``; empty text yields the empty set."""
    if normalizer is None:
        normalizer = TermNormalizer(stopwords) if stopwords else DEFAULT_NORMALIZER
    return normalizer.terms(text)


def lexical_relevance(a: frozenset[str], b: frozenset[str]) -> float:
    """Overlap ratio |a ∩ b| / max(|a|, |b|); 0.0 when both sets are empty."""
    if not a and not b:
        return 0.0
    return len(a & b) / max(len(a), len(b))


def semantic_relevance(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against float rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine is undefined for zero vectors")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def retrieve_topk(h: "Hypothesis", bank: "FactBank", store: "EmbeddingStore", k: int) -> list["Fact"]:
    """The ``k`` facts most semantically relevant to ``h``, descending.

    Ties break by ascending fact id; ``k >= len(bank)`` returns every fact.
    Raw stored embeddings are used (retrieval is upstream of any trainable
    scaling), so results are fixed for a given store.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    h_vec = store.get(h.sentence_id)
    mat, norms, fact_list = _bank_matrix(bank, store)
    scores = (mat @ h_vec) / (norms * float(np.linalg.norm(h_vec)))
    order = sorted(range(len(fact_list)), key=lambda i: (-scores[i], fact_list[i].id))
    return [fact_list[i] for i in order[:k]]


# Stacked embedding matrices per (bank, store) pair. Both structures are
# immutable after load, so caching per object is sound; weak keys let
# entries die with their bank/store instead of pinning them.
_BANK_CACHE: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _bank_matrix(bank: "FactBank", store: "EmbeddingStore"):
    per_bank = _BANK_CACHE.get(bank)
    if per_bank is None:
        per_bank = weakref.WeakKeyDictionary()
        _BANK_CACHE[bank] = per_bank
    entry = per_bank.get(store)
    if entry is None:
        facts = list(bank)
        mat = np.stack([store.get(f.id) for f in facts]) if facts else np.zeros((0, store.dimension))
        norms = np.linalg.norm(mat, axis=1) if facts else np.zeros(0)
        entry = (mat, norms, facts)
        per_bank[store] = entry
    return entry
