"""Edge-weight matrix over {hypothesis} ∪ retrieved facts.

The matrix is linear in the seven scoring weights: lexical overlap is
penalized inside a fact group (grounding-grounding, abstract-abstract),
rewarded across groups, and both lexical and semantic relevance are
rewarded on hypothesis-fact edges. Semantic scores are clamped at zero
before weighting so the sign structure is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingStore, Fact, FactKind, Hypothesis
from .errors import ValidationError
from .scoring import lexical_relevance, semantic_relevance

THETA_FIELDS = ("gg", "aa", "ga", "qgl", "qgs", "qal_lex", "qal_sem")


@dataclass(frozen=True)
class ThetaParams:
    """Scoring weights, each clamped to [0, 1].

    gg/aa penalize lexical overlap within the grounding/abstract groups,
    ga rewards overlap across them, qgl/qgs weight lexical/semantic
    relevance on hypothesis-grounding edges and qal_lex/qal_sem on
    hypothesis-abstract edges.
    """

    gg: float
    aa: float
    ga: float
    qgl: float
    qgs: float
    qal_lex: float
    qal_sem: float

    def __post_init__(self):
        for name in THETA_FIELDS:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"theta.{name} = {v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in THETA_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ThetaParams":
        if len(arr) != len(THETA_FIELDS):
            raise ValidationError(f"theta array must have {len(THETA_FIELDS)} entries")
        return cls(**{f: float(v) for f, v in zip(THETA_FIELDS, arr)})

    @classmethod
    def clamped_from_array(cls, arr: np.ndarray) -> "ThetaParams":
        return cls.from_array(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))

    @classmethod
    def uniform(cls, value: float = 0.5) -> "ThetaParams":
        return cls(*([value] * len(THETA_FIELDS)))


class WeightMatrix:
    """Symmetric edge weights with the score caches needed for gradients.

    Node 0 is the hypothesis; nodes 1..k are facts in retrieval order.
    ``entries`` is symmetric with a zero diagonal (node indicators carry
    no direct cost). ``lex``/``sem_raw``/``sem_clamped`` cache the scores
    the entries were assembled from.
    """

    def __init__(
        self,
        node_ids: tuple[str, ...],
        kinds: tuple[FactKind, ...],
        entries: np.ndarray,
        lex: np.ndarray,
        sem_raw: np.ndarray,
    ):
        n = len(node_ids)
        if len(kinds) != n - 1:
            raise ValidationError("need one fact kind per non-hypothesis node")
        if entries.shape != (n, n) or lex.shape != (n, n) or sem_raw.shape != (n,):
            raise ValidationError("weight matrix shape mismatch")
        self.node_ids = node_ids
        self.kinds = kinds
        self.entries = entries
        self.lex = lex
        self.sem_raw = sem_raw
        self.sem_clamped = np.maximum(sem_raw, 0.0)
        for arr in (self.entries, self.lex, self.sem_raw, self.sem_clamped):
            arr.flags.writeable = False

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_facts(self) -> int:
        return len(self.node_ids) - 1

    def fact_mask(self, kind: FactKind) -> np.ndarray:
        """Boolean mask over node indices 0..n-1 selecting facts of ``kind``."""
        m = np.zeros(self.num_nodes, dtype=bool)
        for j, k in enumerate(self.kinds, start=1):
            m[j] = k is kind
        return m


def weight_matrix_from_scores(
    node_ids: tuple[str, ...],
    kinds: tuple[FactKind, ...],
    lex: np.ndarray,
    sem_raw: np.ndarray,
    theta: ThetaParams,
) -> WeightMatrix:
    """Assemble the case-table weights from precomputed relevance scores.

    ``lex`` is the symmetric lexical-overlap matrix over all nodes;
    ``sem_raw`` holds the hypothesis-fact cosine for each fact node
    (entry 0 is ignored). This is the workhorse behind
    :func:`build_weight_matrix`; the trainer calls it directly with
    adapter-scaled semantic scores.
    """
    n = len(node_ids)
    if n < 2:
        raise ValidationError("weight matrix needs the hypothesis and at least one fact")
    lex = np.asarray(lex, dtype=np.float64)
    sem_raw = np.asarray(sem_raw, dtype=np.float64)
    sc = np.maximum(sem_raw, 0.0)

    g = np.array([False] + [k is FactKind.GROUNDING for k in kinds])
    a = np.array([False] + [k is FactKind.ABSTRACT for k in kinds])

    w = np.zeros((n, n), dtype=np.float64)
    w[np.outer(g, g)] = (-theta.gg * lex)[np.outer(g, g)]
    w[np.outer(a, a)] = (-theta.aa * lex)[np.outer(a, a)]
    cross = np.outer(g, a) | np.outer(a, g)
    w[cross] = (theta.ga * lex)[cross]
    w[0, g] = theta.qgl * lex[0, g] + theta.qgs * sc[g]
    w[0, a] = theta.qal_lex * lex[0, a] + theta.qal_sem * sc[a]
    w[g, 0] = w[0, g]
    w[a, 0] = w[0, a]
    np.fill_diagonal(w, 0.0)
    return WeightMatrix(node_ids, tuple(kinds), w, lex.copy(), sem_raw.copy())


def build_weight_matrix(
    h: Hypothesis,
    facts: list[Fact],
    store: EmbeddingStore,
    theta: ThetaParams,
) -> WeightMatrix:
    """Score every node pair and assemble the weight matrix for ``h``."""
    if not facts:
        raise ValidationError("weight matrix needs at least one fact")
    n = len(facts) + 1
    term_sets = [h.term_set] + [f.term_set for f in facts]
    lex = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        for k in range(j + 1, n):
            lex[j, k] = lex[k, j] = lexical_relevance(term_sets[j], term_sets[k])
    h_vec = store.get(h.sentence_id)
    sem = np.zeros(n, dtype=np.float64)
    for j, f in enumerate(facts, start=1):
        sem[j] = semantic_relevance(h_vec, store.get(f.id))
    node_ids = (h.sentence_id,) + tuple(f.id for f in facts)
    return weight_matrix_from_scores(node_ids, tuple(f.kind for f in facts), lex, sem, theta)


def theta_gradient(w_grad: np.ndarray, wm: WeightMatrix) -> np.ndarray:
    """Exact gradient of sum(w_grad * W(theta)) per theta field.

    The sum runs over all matrix entries (both triangles), matching the
    Hadamard-product convention used by the finite-difference checks.
    Returns an array aligned with THETA_FIELDS.
    """
    w_grad = np.asarray(w_grad, dtype=np.float64)
    n = wm.num_nodes
    if w_grad.shape != (n, n):
        raise ValidationError(f"w_grad shape {w_grad.shape} does not match matrix ({n}, {n})")

    g = wm.fact_mask(FactKind.GROUNDING)
    a = wm.fact_mask(FactKind.ABSTRACT)
    gg = np.outer(g, g)
    aa = np.outer(a, a)
    cross = np.outer(g, a) | np.outer(a, g)
    np.fill_diagonal(gg, False)
    np.fill_diagonal(aa, False)

    grad = np.zeros(len(THETA_FIELDS), dtype=np.float64)
    grad[0] = float(np.sum(w_grad[gg] * (-wm.lex[gg])))
    grad[1] = float(np.sum(w_grad[aa] * (-wm.lex[aa])))
    grad[2] = float(np.sum(w_grad[cross] * wm.lex[cross]))
    hyp_g = w_grad[0, g] + w_grad[g, 0]
    hyp_a = w_grad[0, a] + w_grad[a, 0]
    grad[3] = float(np.sum(hyp_g * wm.lex[0, g]))
    grad[4] = float(np.sum(hyp_g * wm.sem_clamped[g]))
    grad[5] = float(np.sum(hyp_a * wm.lex[0, a]))
    grad[6] = float(np.sum(hyp_a * wm.sem_clamped[a]))
    return grad


def semantic_gradient(w_grad: np.ndarray, wm: WeightMatrix, theta: ThetaParams) -> np.ndarray:
    """Gradient of sum(w_grad * W) with respect to the raw semantic scores.

    Only hypothesis-fact entries depend on the semantic score, through
    the zero-clamp (subgradient 0 at and below the clamp).
    """
    w_grad = np.asarray(w_grad, dtype=np.float64)
    n = wm.num_nodes
    if w_grad.shape != (n, n):
        raise ValidationError(f"w_grad shape {w_grad.shape} does not match matrix ({n}, {n})")
    g = wm.fact_mask(FactKind.GROUNDING)
    a = wm.fact_mask(FactKind.ABSTRACT)
    out = np.zeros(n, dtype=np.float64)
    active = wm.sem_raw > 0.0
    out[g] = (w_grad[0, g] + w_grad[g, 0]) * theta.qgs * active[g]
    out[a] = (w_grad[0, a] + w_grad[a, 0]) * theta.qal_sem * active[a]
    return out
