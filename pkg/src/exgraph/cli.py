"""Command-line surface: train, eval, sweep-k, explain, metrics.

One binary with subcommands sharing config parsing. Every output embeds
the seed it was produced with; file writes are atomic
(write-temp-then-rename). Exit codes: 0 success, 1 validation error,
2 IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import load_corpus, load_embeddings, load_fact_bank
from .errors import CheckpointError, ValidationError
from .graph import THETA_FIELDS, ThetaParams
from .metrics import metric_report, records_from_jsonl, records_to_jsonl
from .model import (
    MODE_ANSWER,
    MODE_ANSWER_EXPLANATION,
    LossWeights,
    TrainableParams,
    TrainSettings,
    candidate_states,
    evaluate,
    forward_candidate,
    train,
)
from .scoring import TermNormalizer, load_lemma_overrides, load_stopwords

CHECKPOINT_VERSION = 1

DEFAULT_SWEEP_KS = [1, 2, 3, 5, 10, 20, 30, 40, 50]


@dataclass
class RunConfig:
    """Paths, hyperparameters, and mode flags for one run."""

    corpus: str = ""
    eval_corpus: str = ""
    facts: str = ""
    embeddings: str = ""
    stopwords: str = ""
    lemma_dict: str = ""
    k: int = 23
    max_abstract: int = 2
    lambda_dbcs: float = 152.0
    lambda_ans: float = 0.99
    lambda_exp: float = 0.72
    temperature: float = 8.77
    lr: float = 1e-5
    adapter_lr: float | None = None
    epochs: int = 8
    seed: int = 42
    batch_size: int = 1
    mode: str = MODE_ANSWER_EXPLANATION
    use_adapter: bool = True
    theta_init: float = 0.5

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        values: dict = {}
        if path:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
            unknown = set(loaded) - set(cls.__dataclass_fields__)
            if unknown:
                raise ValidationError(f"unknown config keys: {sorted(unknown)}")
            values.update(loaded)
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        if cfg.k < 1:
            raise ValidationError("k must be >= 1")
        if cfg.max_abstract < 0:
            raise ValidationError("max_abstract must be >= 0")
        if cfg.lambda_dbcs <= 0:
            raise ValidationError("lambda_dbcs must be positive")
        if cfg.mode not in (MODE_ANSWER, MODE_ANSWER_EXPLANATION):
            raise ValidationError(f"mode must be '{MODE_ANSWER}' or '{MODE_ANSWER_EXPLANATION}'")
        return cfg

    def settings(self) -> TrainSettings:
        return TrainSettings(
            k=self.k,
            max_abstract=self.max_abstract,
            lambda_dbcs=self.lambda_dbcs,
            loss=LossWeights(self.lambda_ans, self.lambda_exp, self.temperature),
            mode=self.mode,
            lr=self.lr,
            adapter_lr=self.adapter_lr,
            epochs=self.epochs,
            seed=self.seed,
            batch_size=self.batch_size,
            use_adapter=self.use_adapter,
            theta_init=self.theta_init,
        )

    def echo(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _normalizer(cfg: RunConfig) -> TermNormalizer:
    stopwords = load_stopwords(cfg.stopwords) if cfg.stopwords else ()
    lemmas = load_lemma_overrides(cfg.lemma_dict) if cfg.lemma_dict else None
    return TermNormalizer(stopwords, lemmas)


def _load_inputs(cfg: RunConfig, corpus_path: str):
    norm = _normalizer(cfg)
    questions = load_corpus(corpus_path, norm)
    bank = load_fact_bank(cfg.facts, norm)
    store = load_embeddings(cfg.embeddings)
    return questions, bank, store


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, params: TrainableParams, optimizer_state: dict, epoch: int, cfg: RunConfig) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "seed": cfg.seed,
        "epoch": epoch,
        "theta": {f: getattr(params.theta, f) for f in THETA_FIELDS},
        "adapter": params.adapter.tolist() if params.adapter is not None else None,
        "optimizer": optimizer_state,
    }
    write_atomic(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[TrainableParams, dict, int, int]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('version')!r} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    theta = ThetaParams(**{f: float(payload["theta"][f]) for f in THETA_FIELDS})
    adapter = payload.get("adapter")
    params = TrainableParams(
        theta=theta,
        adapter=np.asarray(adapter, dtype=np.float64) if adapter is not None else None,
    )
    return params, payload.get("optimizer", {}), int(payload.get("epoch", 0)), int(payload.get("seed", 0))


def _check_compatibility(params: TrainableParams, store) -> None:
    if params.adapter is not None and len(params.adapter) != store.dimension:
        raise CheckpointError(
            f"checkpoint adapter has {len(params.adapter)} dimensions, "
            f"embedding store has {store.dimension}"
        )


def cmd_train(cfg: RunConfig, out_dir: str) -> Path:
    questions, bank, store = _load_inputs(cfg, cfg.corpus)
    params, trace, opt = train(questions, bank, store, cfg.settings())
    out = Path(out_dir)
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, params, opt.state_dict(), cfg.epochs, cfg)
    lines = [f"# seed={cfg.seed}", "epoch,loss_ans,loss_exp,loss_total"]
    lines += [f"{t.epoch},{t.loss_ans!r},{t.loss_exp!r},{t.loss_total!r}" for t in trace]
    write_atomic(out / "trace.csv", "\n".join(lines) + "\n")
    return ckpt


def _eval_records(cfg: RunConfig, checkpoint: str, corpus_path: str, k: int | None = None):
    questions, bank, store = _load_inputs(cfg, corpus_path)
    params, _, _, _ = load_checkpoint(checkpoint)
    _check_compatibility(params, store)
    return evaluate(questions, bank, store, params, k or cfg.k, cfg.max_abstract)


def cmd_eval(cfg: RunConfig, checkpoint: str, out_dir: str) -> dict:
    corpus_path = cfg.eval_corpus or cfg.corpus
    records = _eval_records(cfg, checkpoint, corpus_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_to_jsonl(records, out / "predictions.jsonl")
    report = {"seed": cfg.seed, "config": cfg.echo(), "metrics": metric_report(records)}
    write_atomic(out / "report.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    return report


def cmd_sweep_k(cfg: RunConfig, checkpoint: str, ks: list[int], out_dir: str) -> list[tuple[int, float]]:
    corpus_path = cfg.eval_corpus or cfg.corpus
    rows = []
    for k in ks:
        records = _eval_records(cfg, checkpoint, corpus_path, k=k)
        rows.append((k, metric_report(records)["accuracy"]))
    lines = [f"# seed={cfg.seed}", "k,accuracy"] + [f"{k},{acc!r}" for k, acc in rows]
    write_atomic(Path(out_dir) / "sweep.csv", "\n".join(lines) + "\n")
    return rows


def cmd_explain(cfg: RunConfig, checkpoint: str, question_id: str, stream=None) -> None:
    stream = stream or sys.stdout
    questions, bank, store = _load_inputs(cfg, cfg.eval_corpus or cfg.corpus)
    by_id = {q.id: q for q in questions}
    if question_id not in by_id:
        raise ValidationError(f"unknown question id {question_id!r}")
    q = by_id[question_id]
    params, _, _, _ = load_checkpoint(checkpoint)
    _check_compatibility(params, store)

    states = candidate_states(q, bank, store, cfg.k)
    forwards = [forward_candidate(st, params, cfg.max_abstract) for st in states]
    labels = [st.hypothesis.candidate_label for st in states]
    best = min(range(len(labels)), key=lambda i: (-forwards[i].objective, labels[i]))

    print(f"question {q.id}: {q.stem}", file=stream)
    for i, (st, fwd) in enumerate(zip(states, forwards)):
        cand_text = dict(q.candidates)[labels[i]]
        marker = " <- predicted" if i == best else ""
        print(f"[{labels[i]}] score={fwd.objective:.6f} {cand_text}{marker}", file=stream)
        n = len(st.facts) + 1
        chosen = [j for j in range(1, n) if fwd.y[j] == 1]
        chosen.sort(key=lambda j: (-fwd.wm.entries[0, j], st.facts[j - 1].id))
        if not chosen:
            print("    no explanation selected", file=stream)
        for j in chosen:
            f = st.facts[j - 1]
            print(f"    {f.id} (w={fwd.wm.entries[0, j]:.6f}, {f.kind.value}): {f.text}", file=stream)
    print(f"predicted answer: {labels[best]} (gold: {q.gold_answer})", file=stream)


def cmd_metrics(predictions_path: str, out_path: str | None, stream=None) -> dict:
    stream = stream or sys.stdout
    records = records_from_jsonl(predictions_path)
    report = metric_report(records)
    text = json.dumps(report, sort_keys=True, indent=1)
    if out_path:
        write_atomic(out_path, text + "\n")
    else:
        print(text, file=stream)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint_required=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--corpus", help="corpus JSONL path")
        p.add_argument("--eval-corpus", dest="eval_corpus", help="held-out corpus JSONL path")
        p.add_argument("--facts", help="fact bank JSONL path")
        p.add_argument("--embeddings", help="embedding file path")
        p.add_argument("--k", type=int, help="facts retrieved per hypothesis")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=[MODE_ANSWER, MODE_ANSWER_EXPLANATION])
        p.add_argument("--out", default="out", help="output directory")
        if checkpoint_required:
            p.add_argument("--checkpoint", required=True, help="checkpoint JSON path")

    p_train = sub.add_parser("train", help="train parameters and write a checkpoint")
    common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--adapter-lr", dest="adapter_lr", type=float)

    p_eval = sub.add_parser("eval", help="write predictions and a metric report")
    common(p_eval, checkpoint_required=True)

    p_sweep = sub.add_parser("sweep-k", help="evaluate accuracy across retrieval sizes")
    common(p_sweep, checkpoint_required=True)
    p_sweep.add_argument(
        "--k-list",
        default=",".join(str(k) for k in DEFAULT_SWEEP_KS),
        help="comma-separated retrieval sizes",
    )

    p_explain = sub.add_parser("explain", help="dump one question's candidates and facts")
    common(p_explain, checkpoint_required=True)
    p_explain.add_argument("question_id")

    p_metrics = sub.add_parser("metrics", help="score an existing predictions JSONL")
    p_metrics.add_argument("predictions")
    p_metrics.add_argument("--out-file", dest="out_file")
    return parser


_CONFIG_KEYS = (
    "corpus", "eval_corpus", "facts", "embeddings", "k", "seed", "mode",
    "epochs", "lr", "adapter_lr",
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "metrics":
            cmd_metrics(args.predictions, args.out_file)
            return 0
        overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "train":
            ckpt = cmd_train(cfg, args.out)
            print(f"checkpoint written to {ckpt}")
        elif args.command == "eval":
            report = cmd_eval(cfg, args.checkpoint, args.out)
            print(json.dumps(report["metrics"], sort_keys=True, indent=1))
        elif args.command == "sweep-k":
            ks = [int(x) for x in args.k_list.split(",") if x.strip()]
            rows = cmd_sweep_k(cfg, args.checkpoint, ks, args.out)
            for k, acc in rows:
                print(f"k={k}: accuracy={acc:.4f}")
        elif args.command == "explain":
            cmd_explain(cfg, args.checkpoint, args.question_id)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
