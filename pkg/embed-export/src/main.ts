/**
 * export-embeddings: encode every hypothesis and fact sentence from a
 * corpus + fact bank and write the engine's embedding file plus a
 * manifest (encoder name, dimension, count, input hash) for cache
 * invalidation.
 *
 * Usage:
 *   export-embeddings --corpus train.jsonl --facts facts.jsonl \
 *       --out embeddings.txt [--encoder hash-ngram-v1:128]
 */

import * as fs from "node:fs";

import { collectSentences, readCorpus, readFactBank } from "./corpus.js";
import { makeEncoder } from "./encoder.js";
import { contentHash, renderEmbeddingFile, writeAtomic, Manifest } from "./format.js";

interface Args {
    corpus: string[];
    facts: string;
    out: string;
    encoder: string;
}

function parseArgs(argv: string[]): Args {
    const args: { corpus: string[]; facts?: string; out?: string; encoder: string } = {
        corpus: [],
        encoder: "hash-ngram-v1:128",
    };
    for (let i = 0; i < argv.length; i++) {
        const flag = argv[i];
        const value = argv[i + 1];
        switch (flag) {
            case "--corpus":
                args.corpus.push(need(flag, value));
                i++;
                break;
            case "--facts":
                args.facts = need(flag, value);
                i++;
                break;
            case "--out":
                args.out = need(flag, value);
                i++;
                break;
            case "--encoder":
                args.encoder = need(flag, value);
                i++;
                break;
            case "--help":
            case "-h":
                usage(0);
                break;
            default:
                throw new UsageError(`unknown flag ${flag}`);
        }
    }
    if (args.corpus.length === 0 || !args.facts || !args.out) {
        throw new UsageError("--corpus, --facts, and --out are required");
    }
    return args as Args;
}

class UsageError extends Error {}

function need(flag: string, value: string | undefined): string {
    if (value === undefined) throw new UsageError(`${flag} needs a value`);
    return value;
}

function usage(code: number): never {
    const text = `usage: export-embeddings --corpus <jsonl> [--corpus <jsonl> ...] --facts <jsonl> --out <file> [--encoder hash-ngram-v1[:dim]]\n`;
    (code === 0 ? process.stdout : process.stderr).write(text);
    process.exit(code);
}

export function run(args: Args): Manifest {
    const encoder = makeEncoder(args.encoder);
    const questions = args.corpus.flatMap((p) => readCorpus(p));
    const facts = readFactBank(args.facts);
    const sentences = collectSentences(questions, facts);
    const rows = sentences.map((s) => ({ id: s.id, vector: encoder.encode(s.text) }));
    writeAtomic(args.out, renderEmbeddingFile(rows, encoder.dimension));
    const manifest: Manifest = {
        encoder: encoder.name,
        dimension: encoder.dimension,
        count: rows.length,
        input_sha256: contentHash([...args.corpus, args.facts]),
    };
    writeAtomic(`${args.out}.manifest.json`, JSON.stringify(manifest, null, 1) + "\n");
    return manifest;
}

function main(): void {
    try {
        const manifest = run(parseArgs(process.argv.slice(2)));
        process.stdout.write(
            `wrote ${manifest.count} vectors (dim=${manifest.dimension}, encoder=${manifest.encoder})\n`
        );
    } catch (err) {
        if (err instanceof UsageError) {
            process.stderr.write(`error: ${err.message}\n`);
            usage(2);
        }
        process.stderr.write(`error: ${(err as Error).message}\n`);
        process.exit(1);
    }
}

const isDirectRun =
    process.argv[1] !== undefined && import.meta.url === `file://${process.argv[1]}`;
if (isDirectRun) {
    main();
}
