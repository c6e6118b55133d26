"""Shared builders for tests.

Random weight matrices snap entries to the 2^-20 dyadic grid so every
partial sum a solver can form is exact in float64; solver-equivalence
checks then compare objectives bit for bit without tolerance games.
"""

from __future__ import annotations

import numpy as np
import pytest

from exgraph.corpus import EmbeddingStore, Fact, FactKind
from exgraph.graph import WeightMatrix

GRID = 2.0**20


def snap(x: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(x, dtype=np.float64) * GRID) / GRID


def make_fact(fid: str, kind: FactKind = FactKind.ABSTRACT, text: str = "", terms=()) -> Fact:
    return Fact(id=fid, text=text or fid, kind=kind, term_set=frozenset(terms))


def make_store(vectors: dict[str, list[float]]) -> EmbeddingStore:
    dim = len(next(iter(vectors.values())))
    return EmbeddingStore(dim, {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()})


def random_weight_matrix(rng: np.random.Generator, n_facts: int, scale: float = 1.0) -> WeightMatrix:
    """Arbitrary-sign symmetric weights on the dyadic grid, random fact kinds."""
    n = n_facts + 1
    raw = snap(rng.uniform(-scale, scale, size=(n, n)))
    entries = np.triu(raw, 1)
    entries = entries + entries.T
    kinds = tuple(
        FactKind.ABSTRACT if rng.random() < 0.5 else FactKind.GROUNDING
        for _ in range(n_facts)
    )
    node_ids = ("h",) + tuple(f"f{i}" for i in range(n_facts))
    lex = np.zeros((n, n))
    sem = np.zeros(n)
    return WeightMatrix(node_ids, kinds, entries, lex, sem)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20240817))
