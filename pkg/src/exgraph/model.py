"""Per-question inference and solver-in-the-loop training.

For each candidate answer the engine retrieves facts, assembles the
weight matrix, solves the subgraph ILP, and scores the candidate by the
achieved subgraph weight. Softmax over temperature-scaled scores gives
answer probabilities; cross-entropy on those plus binary cross-entropy
on the gold candidate's selected facts form the loss.

The backward pass splits the score gradient by the product rule: an
analytic path through the weights with the solution held fixed, and a
solver path through the solution via the blackbox layer. Both land in
d(loss)/d(weights), which chains linearly into the seven scoring
weights and, through the cosine derivative, into the per-dimension
embedding adapter that stands in for encoder fine-tuning.

Retrieval always uses the raw stored embeddings; the adapter only
rescales dimensions inside the semantic score, which keeps the
retrieved candidate sets fixed across training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingStore, Fact, FactBank, Hypothesis, Question, build_hypotheses
from .dbcs import DbcsContext, dbcs_backward, dbcs_forward
from .errors import TrainingAbort, ValidationError
from .graph import (
    THETA_FIELDS,
    ThetaParams,
    WeightMatrix,
    semantic_gradient,
    theta_gradient,
    weight_matrix_from_scores,
)
from .ilp import edge_var_order, flat_weights
from .scoring import lexical_relevance, retrieve_topk

BCE_EPS = 1e-6
PROB_FLOOR = 1e-12
ADAPTER_FLOOR = 1e-6

MODE_ANSWER = "answer"
MODE_ANSWER_EXPLANATION = "answer+explanation"


@dataclass(frozen=True)
class LossWeights:
    """Loss mixing weights and the softmax temperature."""

    lambda_ans: float = 0.99
    lambda_exp: float = 0.72
    temperature: float = 8.77

    def __post_init__(self):
        if not (0.0 <= self.lambda_ans <= 1.0 and 0.0 <= self.lambda_exp <= 1.0):
            raise ValidationError("loss weights must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")


@dataclass(frozen=True)
class TrainableParams:
    """Everything the optimizer touches: scoring weights and the adapter."""

    theta: ThetaParams
    adapter: np.ndarray | None = None

    def __post_init__(self):
        if self.adapter is not None:
            adapter = np.asarray(self.adapter, dtype=np.float64)
            if adapter.ndim != 1 or np.any(adapter <= 0):
                raise ValidationError("adapter scales must be a positive vector")
            adapter = adapter.copy()
            adapter.flags.writeable = False
            object.__setattr__(self, "adapter", adapter)


def init_params(theta_init: float = 0.5, adapter_dim: int | None = None) -> TrainableParams:
    adapter = np.ones(adapter_dim) if adapter_dim else None
    return TrainableParams(theta=ThetaParams.uniform(theta_init), adapter=adapter)


@dataclass(frozen=True)
class PredictionRecord:
    """Per-question output feeding every metric."""

    question_id: str
    predicted: str
    gold: str
    scores: dict[str, float]
    explanation_ids: tuple[str, ...]
    gold_explanation_ids: frozenset[str]


def answer_probabilities(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of temperature-scaled scores, stabilized by max subtraction."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    z = scores * temperature
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def answer_loss(probs: np.ndarray, gold_index: int) -> float:
    """Cross entropy against the gold candidate, floored away from log(0)."""
    return -math.log(max(float(probs[gold_index]), PROB_FLOOR))


def explanation_loss(selected: np.ndarray, gold: np.ndarray) -> float:
    """Mean binary cross-entropy with both indicator vectors smoothed.

    Solver outputs are hard 0/1, so raw BCE would be infinite; smoothing
    into [eps, 1-eps] keeps the loss finite on every reachable input.
    """
    selected = np.asarray(selected, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if selected.shape != gold.shape:
        raise ValidationError(f"indicator shapes differ: {selected.shape} vs {gold.shape}")
    y = np.clip(selected, BCE_EPS, 1.0 - BCE_EPS)
    t = np.clip(gold, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(t * np.log(y) + (1.0 - t) * np.log(1.0 - y)))


def _explanation_loss_grad(selected: np.ndarray, gold: np.ndarray) -> np.ndarray:
    """d(loss)/d(selected), evaluated at the smoothed point."""
    y = np.clip(np.asarray(selected, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = np.clip(np.asarray(gold, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    return (-(t / y) + (1.0 - t) / (1.0 - y)) / len(y)


def total_loss(l_ans: float, l_exp: float | None, weights: LossWeights, explanations_available: bool) -> float:
    """Weighted sum when explanations are available, answer loss alone otherwise."""
    if explanations_available and l_exp is not None:
        return weights.lambda_ans * l_ans + weights.lambda_exp * l_exp
    return l_ans


def adapter_cosines(h_vec: np.ndarray, fact_mat: np.ndarray, adapter: np.ndarray | None) -> np.ndarray:
    """Cosine between adapter-scaled hypothesis and fact embeddings."""
    a2 = adapter * adapter if adapter is not None else None
    if a2 is None:
        dots = fact_mat @ h_vec
        nh = float(np.linalg.norm(h_vec))
        nf = np.linalg.norm(fact_mat, axis=1)
    else:
        dots = fact_mat @ (a2 * h_vec)
        nh = math.sqrt(float(np.dot(a2, h_vec * h_vec)))
        nf = np.sqrt((fact_mat * fact_mat) @ a2)
    return np.clip(dots / (nf * nh), -1.0, 1.0)


def adapter_cosine_grad(
    h_vec: np.ndarray,
    fact_mat: np.ndarray,
    adapter: np.ndarray,
    ds: np.ndarray,
) -> np.ndarray:
    """Chain ds (per-fact dL/d cosine) through the scaled cosine into the adapter."""
    a = adapter
    a2 = a * a
    h2 = h_vec * h_vec
    f2 = fact_mat * fact_mat
    nh2 = float(np.dot(a2, h2))
    nf2 = f2 @ a2
    nh = math.sqrt(nh2)
    nf = np.sqrt(nf2)
    cos = (fact_mat @ (a2 * h_vec)) / (nf * nh)
    # d cos_j / d a_d = 2 a_d h_d f_jd / (nh nf_j) - cos_j a_d (h_d^2/nh^2 + f_jd^2/nf_j^2)
    term1 = 2.0 * a * h_vec * (fact_mat.T @ (ds / (nf * nh)))
    term2 = a * h2 / nh2 * float(np.dot(ds, cos))
    term3 = a * (f2.T @ (ds * cos / nf2))
    return term1 - term2 - term3


@dataclass
class CandidateState:
    """Everything about one (question, candidate) pair that training reuses."""

    hypothesis: Hypothesis
    facts: list[Fact]
    node_ids: tuple[str, ...]
    kinds: tuple
    lex: np.ndarray
    h_vec: np.ndarray
    fact_mat: np.ndarray
    gold_indicator: np.ndarray


def candidate_states(
    q: Question, bank: FactBank, store: EmbeddingStore, k: int
) -> list[CandidateState]:
    """Retrieve facts and precompute fixed scores for every candidate."""
    states = []
    for hyp in build_hypotheses(q):
        facts = retrieve_topk(hyp, bank, store, k)
        if not facts:
            raise ValidationError(f"no facts retrieved for {hyp.sentence_id}")
        n = len(facts) + 1
        term_sets = [hyp.term_set] + [f.term_set for f in facts]
        lex = np.zeros((n, n))
        for j in range(n):
            for kk in range(j + 1, n):
                lex[j, kk] = lex[kk, j] = lexical_relevance(term_sets[j], term_sets[kk])
        states.append(
            CandidateState(
                hypothesis=hyp,
                facts=facts,
                node_ids=(hyp.sentence_id,) + tuple(f.id for f in facts),
                kinds=tuple(f.kind for f in facts),
                lex=lex,
                h_vec=store.get(hyp.sentence_id),
                fact_mat=np.stack([store.get(f.id) for f in facts]),
                gold_indicator=np.array(
                    [1.0 if f.id in q.gold_explanation_ids else 0.0 for f in facts]
                ),
            )
        )
    return states


@dataclass
class CandidateForward:
    wm: WeightMatrix
    w_flat: np.ndarray
    y: np.ndarray
    ctx: DbcsContext
    objective: float


def candidate_weights(state: CandidateState, params: TrainableParams) -> WeightMatrix:
    sem = np.zeros(len(state.facts) + 1)
    sem[1:] = adapter_cosines(state.h_vec, state.fact_mat, params.adapter)
    return weight_matrix_from_scores(state.node_ids, state.kinds, state.lex, sem, params.theta)


def forward_candidate(state: CandidateState, params: TrainableParams, max_abstract: int) -> CandidateForward:
    wm = candidate_weights(state, params)
    y, ctx = dbcs_forward(wm, max_abstract)
    w_flat = -ctx.saved_cost
    return CandidateForward(wm=wm, w_flat=w_flat, y=y, ctx=ctx, objective=float(np.dot(w_flat, y)))


def _ordered_selection(fwd: CandidateForward, state: CandidateState) -> tuple[str, ...]:
    """Selected fact ids ordered by hypothesis-edge weight, ties by id."""
    n = len(state.facts) + 1
    chosen = [j for j in range(1, n) if fwd.y[j] == 1]
    chosen.sort(key=lambda j: (-fwd.wm.entries[0, j], state.facts[j - 1].id))
    return tuple(state.facts[j - 1].id for j in chosen)


def predict(
    q: Question,
    bank: FactBank,
    store: EmbeddingStore,
    params: TrainableParams,
    k: int,
    max_abstract: int,
    states: list[CandidateState] | None = None,
) -> PredictionRecord:
    """Score every candidate and decode the winner's explanation.

    The predicted label is the argmax of the candidate scores (softmax
    order is temperature-invariant), ties broken by the lexicographically
    smallest label.
    """
    states = states if states is not None else candidate_states(q, bank, store, k)
    forwards = [forward_candidate(st, params, max_abstract) for st in states]
    labels = [st.hypothesis.candidate_label for st in states]
    scores = {lab: f.objective for lab, f in zip(labels, forwards)}
    best = min(range(len(labels)), key=lambda i: (-forwards[i].objective, labels[i]))
    return PredictionRecord(
        question_id=q.id,
        predicted=labels[best],
        gold=q.gold_answer,
        scores=scores,
        explanation_ids=_ordered_selection(forwards[best], states[best]),
        gold_explanation_ids=q.gold_explanation_ids,
    )


@dataclass(frozen=True)
class TrainSettings:
    """Hyperparameters of one training run."""

    k: int = 23
    max_abstract: int = 2
    lambda_dbcs: float = 152.0
    loss: LossWeights = field(default_factory=LossWeights)
    mode: str = MODE_ANSWER_EXPLANATION
    lr: float = 1e-5
    adapter_lr: float | None = None
    epochs: int = 8
    seed: int = 42
    batch_size: int = 1
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 1.0
    theta_init: float = 0.5
    use_adapter: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.max_abstract < 0:
            raise ValidationError("abstract cap must be >= 0")
        if self.lambda_dbcs <= 0:
            raise ValidationError("lambda must be positive")
        if self.mode not in (MODE_ANSWER, MODE_ANSWER_EXPLANATION):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss_ans: float
    loss_exp: float
    loss_total: float


@dataclass
class QuestionGrads:
    """Loss pieces and parameter gradients from one question."""

    loss_ans: float
    loss_exp: float | None
    loss_total: float
    theta_grad: np.ndarray
    adapter_grad: np.ndarray | None


def _grad_matrix(per_var: np.ndarray, n: int) -> np.ndarray:
    """Scatter per-edge-variable gradients into an upper-triangular matrix.

    Node-variable entries are dropped: the matrix diagonal is fixed at
    zero and carries no parameters.
    """
    g = np.zeros((n, n))
    for e, (j, k) in enumerate(edge_var_order(n)):
        g[j, k] = per_var[n + e]
    return g


def question_grads(
    states: list[CandidateState],
    params: TrainableParams,
    settings: TrainSettings,
    gold_index: int,
    explanations_available: bool,
    frozen_ys: list[np.ndarray] | None = None,
) -> QuestionGrads:
    """Forward all candidates, compute losses, and chain gradients to parameters.

    With ``frozen_ys`` the solver outputs are pinned and only the
    analytic path contributes, which is exactly the loss the
    finite-difference check differentiates.
    """
    use_exp = explanations_available and settings.mode == MODE_ANSWER_EXPLANATION
    t = settings.loss.temperature
    frozen = frozen_ys is not None

    if frozen:
        wms = [candidate_weights(st, params) for st in states]
        w_flats = [flat_weights(wm) for wm in wms]
        ys = frozen_ys
        ctxs = [None] * len(states)
    else:
        fwds = [forward_candidate(st, params, settings.max_abstract) for st in states]
        wms = [f.wm for f in fwds]
        w_flats = [f.w_flat for f in fwds]
        ys = [f.y for f in fwds]
        ctxs = [f.ctx for f in fwds]

    objectives = np.array([float(np.dot(wf, y)) for wf, y in zip(w_flats, ys)])
    probs = answer_probabilities(objectives, t)
    l_ans = answer_loss(probs, gold_index)

    l_exp = None
    bce_grad = None
    if use_exp:
        n_gold = len(states[gold_index].facts) + 1
        sel = ys[gold_index][1:n_gold]
        gold_ind = states[gold_index].gold_indicator
        l_exp = explanation_loss(sel, gold_ind)
        bce_grad = _explanation_loss_grad(sel, gold_ind)
    l_total = total_loss(l_ans, l_exp, settings.loss, use_exp)

    # dL/d gamma_i through the softmax; Algorithm-style else-branch uses
    # the unweighted answer loss when no explanations contribute.
    ans_weight = settings.loss.lambda_ans if use_exp else 1.0
    dl_dgamma = ans_weight * (probs - np.eye(len(states))[gold_index])

    theta_grad = np.zeros(len(THETA_FIELDS))
    adapter_grad = (
        np.zeros_like(params.adapter) if params.adapter is not None else None
    )
    for i, st in enumerate(states):
        n = len(st.facts) + 1
        per_var = dl_dgamma[i] * t * ys[i]  # analytic path: d gamma / dW = T * y
        if not frozen:
            dl_dy = dl_dgamma[i] * t * w_flats[i]  # solver path: d gamma / dy = T * W
            if use_exp and i == gold_index:
                dl_dy[1:n] += settings.loss.lambda_exp * bce_grad
            per_var = per_var + dbcs_backward(ctxs[i], dl_dy, settings.lambda_dbcs)
        g = _grad_matrix(per_var, n)
        theta_grad += theta_gradient(g, wms[i])
        if adapter_grad is not None:
            ds = semantic_gradient(g, wms[i], params.theta)[1:]
            adapter_grad += adapter_cosine_grad(st.h_vec, st.fact_mat, params.adapter, ds)
    return QuestionGrads(l_ans, l_exp, l_total, theta_grad, adapter_grad)


def frozen_question_loss(
    states: list[CandidateState],
    params: TrainableParams,
    settings: TrainSettings,
    gold_index: int,
    explanations_available: bool,
    frozen_ys: list[np.ndarray],
) -> float:
    """Loss with the solver outputs pinned; the target of the FD check."""
    use_exp = explanations_available and settings.mode == MODE_ANSWER_EXPLANATION
    w_flats = [flat_weights(candidate_weights(st, params)) for st in states]
    objectives = np.array([float(np.dot(wf, y)) for wf, y in zip(w_flats, frozen_ys)])
    probs = answer_probabilities(objectives, settings.loss.temperature)
    l_ans = answer_loss(probs, gold_index)
    l_exp = None
    if use_exp:
        n_gold = len(states[gold_index].facts) + 1
        l_exp = explanation_loss(frozen_ys[gold_index][1:n_gold], states[gold_index].gold_indicator)
    return total_loss(l_ans, l_exp, settings.loss, use_exp)


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over one flat vector."""

    def __init__(self, dim: int, lr: np.ndarray, beta1: float, beta2: float, eps: float, weight_decay: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        return params - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params)

    def state_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "step": self.step_count}

    def load_state(self, state: dict) -> None:
        self.m = np.asarray(state["m"], dtype=np.float64)
        self.v = np.asarray(state["v"], dtype=np.float64)
        self.step_count = int(state["step"])


def _pack(params: TrainableParams) -> np.ndarray:
    vec = params.theta.as_array()
    if params.adapter is not None:
        vec = np.concatenate([vec, params.adapter])
    return vec


def _unpack(vec: np.ndarray, has_adapter: bool) -> TrainableParams:
    nt = len(THETA_FIELDS)
    theta = ThetaParams.clamped_from_array(vec[:nt])
    adapter = None
    if has_adapter:
        adapter = np.maximum(vec[nt:], ADAPTER_FLOOR)
    return TrainableParams(theta=theta, adapter=adapter)


def train(
    questions: list[Question],
    bank: FactBank,
    store: EmbeddingStore,
    settings: TrainSettings,
    params: TrainableParams | None = None,
    optimizer_state: dict | None = None,
) -> tuple[TrainableParams, list[EpochStats], AdamW]:
    """Run the training loop and return the final parameters and loss trace.

    One optimizer step per question; question order is reshuffled every
    epoch from a single seeded generator, so runs are reproducible
    bit-for-bit. Scoring weights are clamped to [0, 1] and adapter scales
    floored above zero after every step.
    """
    if not questions:
        raise ValidationError("training split is empty")
    if params is None:
        params = init_params(
            settings.theta_init, store.dimension if settings.use_adapter else None
        )
    has_adapter = params.adapter is not None

    states_by_q = []
    for q in questions:
        states = candidate_states(q, bank, store, settings.k)
        gold_index = q.labels.index(q.gold_answer)
        states_by_q.append((q, states, gold_index, bool(q.gold_explanation_ids)))

    nt = len(THETA_FIELDS)
    dim = nt + (store.dimension if has_adapter else 0)
    lr_vec = np.full(dim, settings.lr)
    if has_adapter:
        lr_vec[nt:] = settings.adapter_lr if settings.adapter_lr is not None else settings.lr
    opt = AdamW(dim, lr_vec, settings.beta1, settings.beta2, settings.adam_eps, settings.weight_decay)
    if optimizer_state is not None:
        opt.load_state(optimizer_state)

    rng = np.random.Generator(np.random.PCG64(settings.seed))
    trace: list[EpochStats] = []
    for epoch in range(settings.epochs):
        order = rng.permutation(len(states_by_q))
        sums = np.zeros(3)
        exp_count = 0
        for lo in range(0, len(order), settings.batch_size):
            batch = order[lo : lo + settings.batch_size]
            grad = np.zeros(dim)
            for qi in batch:
                q, states, gold_index, has_exp = states_by_q[qi]
                res = question_grads(states, params, settings, gold_index, has_exp)
                g = res.theta_grad
                if has_adapter:
                    g = np.concatenate([g, res.adapter_grad])
                if not np.all(np.isfinite(g)) or not math.isfinite(res.loss_total):
                    raise TrainingAbort(
                        f"non-finite gradient at epoch {epoch}, question {q.id}: "
                        f"loss={res.loss_total}, |grad|={np.abs(g).max()}"
                    )
                grad += g
                sums += (res.loss_ans, res.loss_exp or 0.0, res.loss_total)
                exp_count += res.loss_exp is not None
            grad /= len(batch)
            norm = float(np.linalg.norm(grad))
            if norm > settings.max_grad_norm:
                grad = grad * (settings.max_grad_norm / norm)
            vec = opt.step(_pack(params), grad)
            params = _unpack(vec, has_adapter)
        nq = len(states_by_q)
        trace.append(
            EpochStats(
                epoch=epoch,
                loss_ans=sums[0] / nq,
                loss_exp=sums[1] / exp_count if exp_count else 0.0,
                loss_total=sums[2] / nq,
            )
        )
    return params, trace, opt


def evaluate(
    questions: list[Question],
    bank: FactBank,
    store: EmbeddingStore,
    params: TrainableParams,
    k: int,
    max_abstract: int,
) -> list[PredictionRecord]:
    """Prediction records for every question, in corpus order."""
    return [predict(q, bank, store, params, k, max_abstract) for q in questions]
