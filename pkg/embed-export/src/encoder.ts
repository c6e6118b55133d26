/**
 * Sentence encoders. The engine only requires that an encoder be
 * deterministic and emit finite, nonzero, fixed-dimension vectors; any
 * implementation of the interface can back the exporter (a transformer
 * encoder would slot in here when model weights are available locally).
 *
 * The built-in `hash-ngram-v1` encoder needs no model files: token
 * unigrams and bigrams are feature-hashed into seeded pseudo-random
 * directions, accumulated, and L2-normalized. Inference is pure
 * arithmetic, so reruns are bit-identical.
 */

export interface Encoder {
    readonly name: string;
    readonly dimension: number;
    encode(text: string): Float64Array;
}

/** FNV-1a, 32-bit. */
function fnv1a(text: string, seed = 0x811c9dc5): number {
    let h = seed >>> 0;
    for (let i = 0; i < text.length; i++) {
        h ^= text.charCodeAt(i);
        h = Math.imul(h, 0x01000193) >>> 0;
    }
    return h >>> 0;
}

/** mulberry32: tiny deterministic PRNG over a 32-bit state. */
function mulberry32(state: number): () => number {
    let a = state >>> 0;
    return () => {
        a = (a + 0x6d2b79f5) >>> 0;
        let t = a;
        t = Math.imul(t ^ (t >>> 15), t | 1);
        t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
        return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    };
}

export function tokenize(text: string): string[] {
    return text
        .toLowerCase()
        .split(/[^a-z0-9]+/)
        .filter((t) => t.length > 0);
}

export class HashNgramEncoder implements Encoder {
    readonly name: string;
    readonly dimension: number;

    constructor(dimension = 128) {
        if (!Number.isInteger(dimension) || dimension < 1) {
            throw new Error(`encoder dimension must be a positive integer, got ${dimension}`);
        }
        this.dimension = dimension;
        this.name = `hash-ngram-v1:${dimension}`;
    }

    private featureDirection(feature: string, out: Float64Array): void {
        const rand = mulberry32(fnv1a(feature));
        for (let d = 0; d < this.dimension; d++) {
            out[d] += 2.0 * rand() - 1.0;
        }
    }

    encode(text: string): Float64Array {
        const tokens = tokenize(text);
        const vec = new Float64Array(this.dimension);
        if (tokens.length === 0) {
            // guaranteed-nonzero fallback so empty sentences stay loadable
            this.featureDirection("[empty]", vec);
        }
        for (let i = 0; i < tokens.length; i++) {
            this.featureDirection(tokens[i], vec);
            if (i + 1 < tokens.length) {
                this.featureDirection(`${tokens[i]}_${tokens[i + 1]}`, vec);
            }
        }
        let norm = 0;
        for (let d = 0; d < this.dimension; d++) norm += vec[d] * vec[d];
        norm = Math.sqrt(norm);
        if (norm === 0) {
            // astronomically unlikely cancellation; keep the invariant anyway
            vec[0] = 1.0;
            return vec;
        }
        for (let d = 0; d < this.dimension; d++) vec[d] /= norm;
        return vec;
    }
}

/** Parse an encoder spec like `hash-ngram-v1` or `hash-ngram-v1:256`. */
export function makeEncoder(spec: string): Encoder {
    const [kind, arg] = spec.split(":");
    if (kind === "hash-ngram-v1") {
        return new HashNgramEncoder(arg ? Number(arg) : 128);
    }
    throw new Error(
        `unknown encoder ${JSON.stringify(spec)}; built-in encoders: hash-ngram-v1[:dim]`
    );
}
