"""Explanation-graph engine for multiple-choice natural language inference.

The engine scores each candidate answer by the weight of an exactly
solved explanation subgraph over retrieved facts, and trains its scoring
parameters through the solver with interpolated blackbox gradients.
"""

from .corpus import (
    EmbeddingStore,
    Fact,
    FactBank,
    FactKind,
    Hypothesis,
    Question,
    build_hypotheses,
    hypothesis_sentence_id,
    load_corpus,
    load_embeddings,
    load_fact_bank,
    write_corpus,
    write_embeddings,
    write_fact_bank,
)
from .dbcs import DbcsContext, dbcs_backward, dbcs_forward
from .errors import (
    CheckpointError,
    ExgraphError,
    ParseError,
    TrainingAbort,
    ValidationError,
)
from .graph import (
    THETA_FIELDS,
    ThetaParams,
    WeightMatrix,
    build_weight_matrix,
    semantic_gradient,
    theta_gradient,
    weight_matrix_from_scores,
)
from .ilp import (
    IlpInstance,
    IlpSolution,
    SelectedSubgraph,
    build_subgraph_ilp,
    decode_solution,
    solve_bruteforce,
    solve_exact,
)
from .metrics import (
    accuracy,
    explanation_consistency_at_k,
    faithfulness,
    metric_report,
    precision_at_k,
    records_from_jsonl,
    records_to_jsonl,
)
from .model import (
    LossWeights,
    PredictionRecord,
    TrainableParams,
    TrainSettings,
    answer_loss,
    answer_probabilities,
    evaluate,
    explanation_loss,
    init_params,
    predict,
    total_loss,
    train,
)
from .scoring import (
    TermNormalizer,
    lexical_relevance,
    retrieve_topk,
    semantic_relevance,
    term_set,
)

__version__ = "0.1.0"
