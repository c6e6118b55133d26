#!/usr/bin/env python3
"""Best-effort converter from WorldTree-style TSV exports to the engine's
canonical JSONL formats.

Assumptions (documented, not guaranteed against every WorldTree release):

* Questions TSV has a header row with at least the columns ``QuestionID``,
  ``question``, ``AnswerKey``, and optionally ``explanation``. The
  ``question`` column embeds the choices inline as ``(A) ... (B) ...``;
  the stem is everything before the first choice marker. ``explanation``
  holds space-separated ``<fact-id>|<ROLE>`` pairs.
* Facts TSV has a header row with an id column (``[SKIP] UID`` or ``UID``
  or ``id``) and a text column (``text`` or the concatenation of all
  non-bracketed columns). Every row becomes one fact of the kind passed
  on the command line (run once per source: abstract for table-store
  rows, grounding for is-a exports).

Output records follow the formats in the engine's corpus module. Rows
that cannot be parsed are reported and skipped; the exit code is nonzero
if nothing converts.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys

CHOICE_RE = re.compile(r"\(([A-H1-8])\)")


def split_question(text: str):
    """Split 'stem (A) x (B) y' into the stem and ordered (label, text) pairs."""
    parts = CHOICE_RE.split(text)
    stem = parts[0].strip()
    candidates = []
    for i in range(1, len(parts) - 1, 2):
        candidates.append((parts[i], parts[i + 1].strip()))
    return stem, candidates


def convert_questions(in_path: str, out_path: str) -> int:
    converted = 0
    with open(in_path, encoding="utf-8", newline="") as fh, open(
        out_path, "w", encoding="utf-8"
    ) as out:
        reader = csv.DictReader(fh, delimiter="\t")
        for lineno, row in enumerate(reader, start=2):
            qid = row.get("QuestionID") or row.get("questionID") or row.get("id")
            text = row.get("question") or ""
            answer = (row.get("AnswerKey") or "").strip()
            if not qid or not text or not answer:
                print(f"skip line {lineno}: missing id/question/AnswerKey", file=sys.stderr)
                continue
            stem, candidates = split_question(text)
            if len(candidates) < 2 or answer not in {lab for lab, _ in candidates}:
                print(f"skip {qid}: unparsable choices or answer key", file=sys.stderr)
                continue
            explanation = row.get("explanation") or ""
            fact_ids = sorted(
                {pair.split("|")[0] for pair in explanation.split() if pair.strip()}
            )
            rec = {
                "id": qid,
                "stem": stem,
                "candidates": [{"label": lab, "text": txt} for lab, txt in candidates],
                "answer": answer,
                "explanation_ids": fact_ids,
            }
            out.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
            converted += 1
    return converted


def convert_facts(in_path: str, out_path: str, kind: str, append: bool) -> int:
    converted = 0
    mode = "a" if append else "w"
    with open(in_path, encoding="utf-8", newline="") as fh, open(
        out_path, mode, encoding="utf-8"
    ) as out:
        reader = csv.DictReader(fh, delimiter="\t")
        id_col = next(
            (c for c in reader.fieldnames or [] if c in ("[SKIP] UID", "UID", "id", "uid")),
            None,
        )
        if id_col is None:
            print(f"{in_path}: no id column found", file=sys.stderr)
            return 0
        text_cols = [
            c
            for c in reader.fieldnames or []
            if c != id_col and not c.startswith("[SKIP]")
        ]
        for lineno, row in enumerate(reader, start=2):
            fid = (row.get(id_col) or "").strip()
            if not fid:
                print(f"skip line {lineno}: empty id", file=sys.stderr)
                continue
            if "text" in row and row["text"]:
                text = row["text"].strip()
            else:
                text = " ".join((row.get(c) or "").strip() for c in text_cols).strip()
            if not text:
                print(f"skip {fid}: empty text", file=sys.stderr)
                continue
            rec = {"id": fid, "text": text, "kind": kind}
            out.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
            converted += 1
    return converted


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    pq = sub.add_parser("questions", help="convert a questions TSV to corpus JSONL")
    pq.add_argument("input")
    pq.add_argument("output")

    pf = sub.add_parser("facts", help="convert a facts TSV to fact-bank JSONL")
    pf.add_argument("input")
    pf.add_argument("output")
    pf.add_argument("--kind", choices=["abstract", "grounding"], required=True)
    pf.add_argument("--append", action="store_true", help="append to an existing fact bank")

    args = parser.parse_args(argv)
    if args.command == "questions":
        n = convert_questions(args.input, args.output)
    else:
        n = convert_facts(args.input, args.output, args.kind, args.append)
    print(f"converted {n} records")
    return 0 if n > 0 else 1


if __name__ == "__main__":
    sys.exit(main())
