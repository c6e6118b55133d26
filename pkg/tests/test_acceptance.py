"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (visible with ``pytest tests/test_acceptance.py -s``).

Tolerances are pinned here and nowhere else:

* solver equivalence: exact assignment and objective equality, 1,000
  random instances (<= 12 nodes, cap in {0..3}), under 60 s total
* blackbox-gradient identity: exact equality with the recomputed
  difference quotient on 200 random triples; entries in {-1/l, 0, +1/l}
* frozen-solver gradients: relative error 1e-4 against central
  differences on 50 random fixtures
* synthetic end-to-end: >= 0.95 held-out accuracy, >= 0.90 precision@2,
  <= 20 epochs, < 600 s wall time, default loss weights
* supervision ordering: explanation-supervised precision@2 >= answer-only
  in at least 2 of 3 seeds
* distractor stability: |acc(k=50) - acc(k=3)| <= 0.02
* metric oracles: exact equality on 200 random record sets
* determinism: byte-identical checkpoints and reports across reruns
"""

import json
import time

import numpy as np
import pytest

from exgraph.cli import main
from exgraph.corpus import load_corpus, load_embeddings, load_fact_bank
from exgraph.dbcs import dbcs_backward, dbcs_forward
from exgraph.ilp import build_subgraph_ilp, solve_bruteforce, solve_exact
from exgraph.metrics import accuracy, explanation_consistency_at_k, faithfulness, precision_at_k
from exgraph.model import (
    MODE_ANSWER,
    MODE_ANSWER_EXPLANATION,
    TrainSettings,
    evaluate,
    train,
)
from conftest import random_weight_matrix
from metric_oracles import (
    oracle_accuracy,
    oracle_consistency_at_k,
    oracle_faithfulness,
    oracle_precision_at_k,
)
from synth_data import SynthConfig, generate
from test_metrics import random_records
from test_model import run_frozen_fd_check


def report(name: str, ok: bool, detail: str = ""):
    print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth_acceptance")
    data = generate(out, SynthConfig())
    return {
        "data": data,
        "train": load_corpus(data.corpus_train),
        "test": load_corpus(data.corpus_test),
        "bank": load_fact_bank(data.facts),
        "store": load_embeddings(data.embeddings),
    }


E2E_SETTINGS = TrainSettings(k=23, epochs=12, adapter_lr=2e-3, seed=42)


@pytest.fixture(scope="module")
def e2e_run(synth):
    t0 = time.time()
    params, trace, _ = train(synth["train"], synth["bank"], synth["store"], E2E_SETTINGS)
    elapsed = time.time() - t0
    records = evaluate(
        synth["test"], synth["bank"], synth["store"], params, E2E_SETTINGS.k, E2E_SETTINGS.max_abstract
    )
    return {"params": params, "trace": trace, "elapsed": elapsed, "records": records}


def test_ilp_oracle_equivalence(rng):
    t0 = time.time()
    for trial in range(1000):
        wm = random_weight_matrix(rng, int(rng.integers(1, 12)))
        inst = build_subgraph_ilp(wm, int(rng.integers(0, 4)))
        exact = solve_exact(inst)
        brute = solve_bruteforce(inst)
        same = np.array_equal(exact.assignment, brute.assignment) and exact.objective == brute.objective
        if not same:
            report("ilp-oracle-equivalence", False, f"mismatch at trial {trial}")
    elapsed = time.time() - t0
    report("ilp-oracle-equivalence", elapsed < 60.0, f"1000 instances in {elapsed:.1f}s")


def test_dbcs_definitional_identity(rng):
    checked = 0
    for trial in range(200):
        wm = random_weight_matrix(rng, int(rng.integers(1, 7)))
        y, ctx = dbcs_forward(wm, int(rng.integers(0, 3)))
        lam = float(rng.uniform(1.0, 300.0))
        scale = rng.choice([0.0, 0.01, 0.1, 1.0])
        dl_dy = rng.standard_normal(len(y)) * scale
        grad = dbcs_backward(ctx, dl_dy, lam)
        y_lam = solve_bruteforce(ctx.instance.with_cost(ctx.saved_cost - lam * dl_dy)).assignment
        expected = -(ctx.saved_solution - y_lam) / lam
        if not np.array_equal(grad, expected):
            report("dbcs-definitional-identity", False, f"identity broken at trial {trial}")
        if not set(np.unique(grad)).issubset({0.0, 1.0 / lam, -1.0 / lam}):
            report("dbcs-definitional-identity", False, f"entry outside ±1/lambda at trial {trial}")
        if scale == 0.0 and np.any(grad != 0.0):
            report("dbcs-definitional-identity", False, "zero perturbation gave nonzero gradient")
        checked += 1
    report("dbcs-definitional-identity", checked == 200, f"{checked} triples")


def test_frozen_solver_gradient_check(rng):
    failures = run_frozen_fd_check(rng, n_fixtures=50, rtol=1e-4)
    report("frozen-gradient-check", failures == [], f"failing fixtures: {failures or 'none'}")


def test_synthetic_end_to_end(e2e_run):
    acc = accuracy(e2e_run["records"])
    p2 = precision_at_k(e2e_run["records"], 2)
    losses = [t.loss_total for t in e2e_run["trace"]]
    strictly_decreasing = all(losses[i] > losses[i + 1] for i in range(4))
    ok = (
        acc >= 0.95
        and p2 >= 0.90
        and e2e_run["elapsed"] < 600.0
        and E2E_SETTINGS.epochs <= 20
        and strictly_decreasing
    )
    report(
        "synthetic-end-to-end",
        ok,
        f"acc={acc:.3f} p@2={p2:.3f} epochs={E2E_SETTINGS.epochs} "
        f"time={e2e_run['elapsed']:.0f}s strict5={strictly_decreasing}",
    )


def test_supervision_mode_ordering(synth):
    wins = 0
    details = []
    for seed in (7, 42, 1234):
        p2 = {}
        for mode in (MODE_ANSWER, MODE_ANSWER_EXPLANATION):
            settings = TrainSettings(k=23, epochs=8, adapter_lr=2e-3, seed=seed, mode=mode)
            params, _, _ = train(synth["train"], synth["bank"], synth["store"], settings)
            records = evaluate(synth["test"], synth["bank"], synth["store"], params, 23, 2)
            p2[mode] = precision_at_k(records, 2)
        wins += p2[MODE_ANSWER_EXPLANATION] >= p2[MODE_ANSWER]
        details.append(f"seed{seed}: exp={p2[MODE_ANSWER_EXPLANATION]:.3f} ans={p2[MODE_ANSWER]:.3f}")
    report("supervision-mode-ordering", wins >= 2, f"{wins}/3 seeds ({'; '.join(details)})")


def test_distractor_stability(synth, e2e_run):
    hits = {}
    for k in (3, 50):
        records = evaluate(synth["test"], synth["bank"], synth["store"], e2e_run["params"], k, 2)
        hits[k] = sum(r.predicted == r.gold for r in records)
    n = len(synth["test"])
    # compare in whole questions so the 2-point budget is exact
    budget = int(round(0.02 * n))
    gap = abs(hits[50] - hits[3])
    report(
        "distractor-stability",
        gap <= budget,
        f"acc@k3={hits[3] / n:.3f} acc@k50={hits[50] / n:.3f} gap={gap}/{n} questions (budget {budget})",
    )


def test_metric_oracles(rng):
    for trial in range(200):
        rs = random_records(rng)
        ok = (
            accuracy(rs) == oracle_accuracy(rs)
            and faithfulness(rs) == oracle_faithfulness(rs)
            and all(precision_at_k(rs, k) == oracle_precision_at_k(rs, k) for k in (1, 2, 3))
            and all(
                explanation_consistency_at_k(rs, k) == oracle_consistency_at_k(rs, k)
                for k in (1, 2, 3)
            )
        )
        if not ok:
            report("metric-oracles", False, f"divergence on record set {trial}")
    report("metric-oracles", True, "200 record sets, exact equality")


def test_determinism_byte_identical(synth, tmp_path):
    cfg = {
        "corpus": str(synth["data"].corpus_train),
        "eval_corpus": str(synth["data"].corpus_test),
        "facts": str(synth["data"].facts),
        "embeddings": str(synth["data"].embeddings),
        "k": 23,
        "epochs": 3,
        "adapter_lr": 2e-3,
        "seed": 42,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    outputs = []
    for run in ("one", "two"):
        out = tmp_path / run
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert main(
            ["eval", "--config", str(cfg_path), "--checkpoint", str(out / "checkpoint.json"),
             "--out", str(out)]
        ) == 0
        outputs.append(out)
    names = ("checkpoint.json", "trace.csv", "report.json", "predictions.jsonl")
    same = all((outputs[0] / n).read_bytes() == (outputs[1] / n).read_bytes() for n in names)
    report("determinism", same, "checkpoint, trace, report, predictions byte-identical")
