/**
 * Run-length encoding over the row-major flattened image, matching the
 * engine's mask archive convention: sorted (start, length) uint32 pairs.
 */

export type Runs = Array<[number, number]>;

export function rleEncode(mask: Uint8Array): Runs {
  const runs: Runs = [];
  let start = -1;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] !== 0 && start < 0) {
      start = i;
    } else if (mask[i] === 0 && start >= 0) {
      runs.push([start, i - start]);
      start = -1;
    }
  }
  if (start >= 0) {
    runs.push([start, mask.length - start]);
  }
  return runs;
}

export function rleArea(runs: Runs): number {
  let area = 0;
  for (const [, len] of runs) area += len;
  return area;
}

export function rleDecode(runs: Runs, size: number): Uint8Array {
  const out = new Uint8Array(size);
  for (const [start, len] of runs) {
    if (start < 0 || start + len > size) {
      throw new Error("runs exceed image bounds");
    }
    out.fill(1, start, start + len);
  }
  return out;
}
