/**
 * Writer for the engine's embedding file format:
 *
 *     ids=<count> dim=<d>
 *     <id>\t<f1> <f2> ... <fd>
 *
 * Floats are printed with `Number.prototype.toString`, the shortest
 * representation that round-trips exactly, matching the format contract.
 * Writes are atomic (temp file + rename).
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

export interface EmbeddedSentence {
    id: string;
    vector: Float64Array;
}

export function renderEmbeddingFile(rows: EmbeddedSentence[], dimension: number): string {
    const lines = [`ids=${rows.length} dim=${dimension}`];
    for (const row of rows) {
        if (row.vector.length !== dimension) {
            throw new Error(`vector for ${row.id} has ${row.vector.length} components, expected ${dimension}`);
        }
        let nonzero = false;
        for (const x of row.vector) {
            if (!Number.isFinite(x)) {
                throw new Error(`vector for ${row.id} has a non-finite component`);
            }
            if (x !== 0) nonzero = true;
        }
        if (!nonzero) {
            throw new Error(`vector for ${row.id} is all zeros`);
        }
        lines.push(`${row.id}\t${Array.from(row.vector, (x) => x.toString()).join(" ")}`);
    }
    return lines.join("\n") + "\n";
}

export function writeAtomic(filePath: string, text: string): void {
    fs.mkdirSync(path.dirname(path.resolve(filePath)), { recursive: true });
    const tmp = `${filePath}.tmp-${process.pid}`;
    fs.writeFileSync(tmp, text, "utf-8");
    fs.renameSync(tmp, filePath);
}

export interface Manifest {
    encoder: string;
    dimension: number;
    count: number;
    input_sha256: string;
}

export function contentHash(paths: string[]): string {
    const h = crypto.createHash("sha256");
    for (const p of paths) {
        h.update(fs.readFileSync(p));
    }
    return h.digest("hex");
}
