/**
 * Readers for the engine's corpus and fact-bank JSONL formats, plus the
 * hypothesis construction rule shared with the engine: hypothesis text is
 * the whitespace-normalized concatenation of stem and candidate text, and
 * its embedding id is `<question_id>::<label>`.
 */

import * as fs from "node:fs";

export interface Candidate {
    label: string;
    text: string;
}

export interface QuestionRecord {
    id: string;
    stem: string;
    candidates: Candidate[];
    answer: string;
    explanation_ids?: string[];
}

export interface FactRecord {
    id: string;
    text: string;
    kind: "abstract" | "grounding";
}

export interface Sentence {
    id: string;
    text: string;
}

export function normalizeWhitespace(text: string): string {
    return text.split(/\s+/).filter((t) => t.length > 0).join(" ");
}

export function hypothesisSentenceId(questionId: string, label: string): string {
    return `${questionId}::${label}`;
}

export function hypothesisText(stem: string, candidateText: string): string {
    return normalizeWhitespace(`${stem} ${candidateText}`);
}

function readJsonl<T>(path: string, what: string): T[] {
    const out: T[] = [];
    const lines = fs.readFileSync(path, "utf-8").split("\n");
    lines.forEach((line, idx) => {
        if (line.trim().length === 0) return;
        try {
            out.push(JSON.parse(line) as T);
        } catch (err) {
            throw new Error(`${path}:${idx + 1}: invalid ${what} JSON: ${(err as Error).message}`);
        }
    });
    return out;
}

export function readCorpus(path: string): QuestionRecord[] {
    const records = readJsonl<QuestionRecord>(path, "question");
    for (const q of records) {
        if (!q.id || !Array.isArray(q.candidates)) {
            throw new Error(`${path}: question record missing id or candidates`);
        }
    }
    return records;
}

export function readFactBank(path: string): FactRecord[] {
    const records = readJsonl<FactRecord>(path, "fact");
    for (const f of records) {
        if (f.kind !== "abstract" && f.kind !== "grounding") {
            throw new Error(`${path}: fact ${f.id} has unknown kind ${String(f.kind)}`);
        }
    }
    return records;
}

/** Every sentence to embed: one per hypothesis, one per fact. */
export function collectSentences(questions: QuestionRecord[], facts: FactRecord[]): Sentence[] {
    const sentences: Sentence[] = [];
    const seen = new Set<string>();
    const push = (id: string, text: string) => {
        if (seen.has(id)) {
            throw new Error(`sentence id collision: ${id}`);
        }
        seen.add(id);
        sentences.push({ id, text });
    };
    for (const q of questions) {
        for (const cand of q.candidates) {
            push(hypothesisSentenceId(q.id, cand.label), hypothesisText(q.stem, cand.text));
        }
    }
    for (const f of facts) {
        push(f.id, normalizeWhitespace(f.text));
    }
    return sentences;
}
