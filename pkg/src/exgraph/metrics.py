"""Evaluation metrics over prediction records.

Besides accuracy and Precision@K, two agreement measures are computed:
faithfulness (do correct answers come with at least one correct
explanation fact, and wrong answers with none) and explanation
consistency (do questions with overlapping gold explanations receive
overlapping predicted explanations). Consistency can be undefined when
no question pair shares enough gold facts; that case is reported as
None, distinct from 0.

Records can come from this engine or be ingested from JSONL to score a
third-party system.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .errors import ParseError, ValidationError
from .model import PredictionRecord


def accuracy(records: Sequence[PredictionRecord]) -> float:
    """Fraction of records whose predicted label matches the gold label."""
    if not records:
        raise ValidationError("cannot score an empty record list")
    return sum(r.predicted == r.gold for r in records) / len(records)


def precision_at_k(records: Sequence[PredictionRecord], k: int) -> float:
    """Mean |top-k predicted ∩ gold| / k.

    Explanation lists must already be ordered by selection score.
    Records with fewer than k predicted facts still divide by k, which
    penalizes short explanations.
    """
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    if not records:
        raise ValidationError("cannot score an empty record list")
    total = 0.0
    for r in records:
        top = r.explanation_ids[:k]
        total += sum(fid in r.gold_explanation_ids for fid in top) / k
    return total / len(records)


def faithfulness(records: Sequence[PredictionRecord]) -> float:
    """Agreement between answer correctness and explanation correctness.

    A record counts as having a correct explanation when at least one
    predicted fact id is in the gold set. The score is the fraction of
    questions where correct answers have a correct explanation fact and
    wrong answers have none.
    """
    if not records:
        raise ValidationError("cannot score an empty record list")
    agree = 0
    for r in records:
        correct_answer = r.predicted == r.gold
        has_correct_fact = any(fid in r.gold_explanation_ids for fid in r.explanation_ids)
        if correct_answer == has_correct_fact:
            agree += 1
    return agree / len(records)


def explanation_consistency_at_k(records: Sequence[PredictionRecord], k: int) -> float | None:
    """Pairwise gold-overlap recall between questions sharing >= k gold facts.

    For every ordered pair (t, j) whose gold explanations overlap in at
    least k facts, the overlap acts as a probe set: the numerator counts
    how many of those facts question t's model explanation retrieved,
    the denominator the overlap size. Returns None when no pair
    qualifies (undefined, not zero).
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    num = 0
    den = 0
    for t, rt in enumerate(records):
        retrieved = set(rt.explanation_ids)
        for j, rj in enumerate(records):
            if t == j:
                continue
            overlap = rt.gold_explanation_ids & rj.gold_explanation_ids
            if len(overlap) >= k:
                num += len(overlap & retrieved)
                den += len(overlap)
    if den == 0:
        return None
    return num / den


def records_to_jsonl(records: Sequence[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            rec = {
                "qid": r.question_id,
                "predicted": r.predicted,
                "gold": r.gold,
                "scores": {lab: r.scores[lab] for lab in sorted(r.scores)},
                "explanation_ids": list(r.explanation_ids),
                "gold_explanation_ids": sorted(r.gold_explanation_ids),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def records_from_jsonl(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append(
                    PredictionRecord(
                        question_id=str(rec["qid"]),
                        predicted=str(rec["predicted"]),
                        gold=str(rec["gold"]),
                        scores={str(k): float(v) for k, v in rec["scores"].items()},
                        explanation_ids=tuple(str(x) for x in rec["explanation_ids"]),
                        gold_explanation_ids=frozenset(str(x) for x in rec["gold_explanation_ids"]),
                    )
                )
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(path), lineno, f"missing or malformed field: {exc}") from exc
    return records


def metric_report(records: Sequence[PredictionRecord]) -> dict:
    """The standard metric bundle used by eval reports."""
    consistency = {
        f"consistency@{k}": explanation_consistency_at_k(records, k) for k in (1, 2, 3)
    }
    return {
        "num_questions": len(records),
        "accuracy": accuracy(records),
        "precision@1": precision_at_k(records, 1),
        "precision@2": precision_at_k(records, 2),
        "faithfulness": faithfulness(records),
        **consistency,
    }
