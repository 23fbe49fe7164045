/**
 * Binary writers for the engine's mask (OVMK) and embedding (OVEM)
 * archives. All integers and floats are little-endian; layouts match the
 * engine's loaders field for field.
 */

import * as fs from "fs";
import { CROP_ORDER } from "./crops";
import { Runs } from "./rle";

export const FORMAT_VERSION = 1;

export interface MaskRecord {
  frameId: number;
  granularityLevel: number;
  height: number;
  width: number;
  runs: Runs;
}

export function encodeMaskArchive(records: MaskRecord[]): Buffer {
  const chunks: Buffer[] = [];
  const head = Buffer.alloc(10);
  head.write("OVMK", 0, "ascii");
  head.writeUInt16LE(FORMAT_VERSION, 4);
  head.writeUInt32LE(records.length, 6);
  chunks.push(head);
  for (const rec of records) {
    const fixed = Buffer.alloc(18);
    fixed.writeUInt32LE(rec.frameId, 0);
    fixed.writeUInt16LE(rec.granularityLevel, 4);
    fixed.writeUInt32LE(rec.height, 6);
    fixed.writeUInt32LE(rec.width, 10);
    fixed.writeUInt32LE(rec.runs.length, 14);
    chunks.push(fixed);
    const runsBuf = Buffer.alloc(rec.runs.length * 8);
    rec.runs.forEach(([start, len], i) => {
      runsBuf.writeUInt32LE(start, i * 8);
      runsBuf.writeUInt32LE(len, i * 8 + 4);
    });
    chunks.push(runsBuf);
  }
  return Buffer.concat(chunks);
}

export function writeMaskArchive(path: string, records: MaskRecord[]): void {
  fs.writeFileSync(path, encodeMaskArchive(records));
}

export function encodeEmbeddingArchive(perCrop: Float32Array[][], dim: number): Buffer {
  const order = Buffer.from(CROP_ORDER.join(","), "ascii");
  const head = Buffer.alloc(16 + order.length);
  head.write("OVEM", 0, "ascii");
  head.writeUInt16LE(FORMAT_VERSION, 4);
  head.writeUInt32LE(dim, 6);
  head.writeUInt32LE(perCrop.length, 10);
  head.writeUInt16LE(order.length, 14);
  order.copy(head, 16);
  const chunks: Buffer[] = [head];
  for (const five of perCrop) {
    if (five.length !== 5) {
      throw new Error(`expected 5 crop vectors, got ${five.length}`);
    }
    for (const vec of five) {
      if (vec.length !== dim) {
        throw new Error(`vector dim ${vec.length} != ${dim}`);
      }
      const buf = Buffer.alloc(dim * 4);
      for (let i = 0; i < dim; i++) buf.writeFloatLE(vec[i], i * 4);
      chunks.push(buf);
    }
  }
  return Buffer.concat(chunks);
}

export function writeEmbeddingArchive(
  path: string,
  perCrop: Float32Array[][],
  dim: number
): void {
  fs.writeFileSync(path, encodeEmbeddingArchive(perCrop, dim));
}
