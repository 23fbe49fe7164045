/**
 * Built-in crop embedding backend: a deterministic visual descriptor.
 *
 * Each crop is reduced to a 4x4 grid of mean RGB plus global statistics,
 * then projected to the target dimension with a fixed seeded random matrix
 * and L2-normalized. Content-sensitive and reproducible everywhere; a CLIP
 * service can replace it by implementing EmbeddingBackend.
 */

import { CropSpec } from "./crops";
import { Image } from "./ppm";

export interface EmbeddingBackend {
  embedCrop(image: Image, crop: CropSpec, mask: Uint8Array): Float32Array;
  readonly dim: number;
}

const GRID = 4;
const FEATURE_DIM = GRID * GRID * 3 + 6;

/** xorshift128, seeded deterministically; enough randomness for a fixed
 * projection matrix. */
function* xorshift(seed: number): Generator<number> {
  let x = seed >>> 0 || 0x9e3779b9;
  let y = 0x243f6a88;
  let z = 0xb7e15162;
  let w = 0xdeadbeef;
  for (;;) {
    const t = x ^ (x << 11);
    x = y;
    y = z;
    z = w;
    w = (w ^ (w >>> 19) ^ (t ^ (t >>> 8))) >>> 0;
    yield w / 0xffffffff;
  }
}

function projectionMatrix(dim: number, seed: number): Float64Array {
  const gen = xorshift(seed);
  const m = new Float64Array(dim * FEATURE_DIM);
  for (let i = 0; i < m.length; i++) {
    // uniform -> approximately gaussian via sum of 4
    let s = 0;
    for (let k = 0; k < 4; k++) s += gen.next().value as number;
    m[i] = s - 2.0;
  }
  return m;
}

export class GridStatsEmbedder implements EmbeddingBackend {
  readonly dim: number;
  private matrix: Float64Array;

  constructor(dim = 64, seed = 1) {
    this.dim = dim;
    this.matrix = projectionMatrix(dim, seed);
  }

  embedCrop(image: Image, crop: CropSpec, mask: Uint8Array): Float32Array {
    const [x0, y0, x1, y1] = crop.rect;
    const w = x1 - x0;
    const h = y1 - y0;
    const sums = new Float64Array(GRID * GRID * 3);
    const counts = new Float64Array(GRID * GRID);
    let total = 0;
    let totalSq = 0;
    let used = 0;
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        const idx = y * image.width + x;
        const inMask = mask[idx] !== 0;
        if (crop.zeroOutsideMask && !inMask) continue;
        if (crop.zeroInsideMask && inMask) continue;
        const gx = Math.min(GRID - 1, Math.floor(((x - x0) * GRID) / w));
        const gy = Math.min(GRID - 1, Math.floor(((y - y0) * GRID) / h));
        const cell = gy * GRID + gx;
        for (let c = 0; c < 3; c++) {
          const v = image.data[idx * 3 + c] / 255.0;
          sums[cell * 3 + c] += v;
          total += v;
          totalSq += v * v;
        }
        counts[cell] += 1;
        used++;
      }
    }
    const feat = new Float64Array(FEATURE_DIM);
    for (let cell = 0; cell < GRID * GRID; cell++) {
      const n = counts[cell];
      for (let c = 0; c < 3; c++) {
        feat[cell * 3 + c] = n > 0 ? sums[cell * 3 + c] / n : 0;
      }
    }
    const base = GRID * GRID * 3;
    const nPix = Math.max(1, used * 3);
    feat[base] = total / nPix;
    feat[base + 1] = Math.sqrt(Math.max(0, totalSq / nPix - feat[base] ** 2));
    feat[base + 2] = used / Math.max(1, w * h);
    feat[base + 3] = w / image.width;
    feat[base + 4] = h / image.height;
    feat[base + 5] = 1.0;

    const out = new Float32Array(this.dim);
    let norm = 0;
    for (let i = 0; i < this.dim; i++) {
      let acc = 0;
      for (let j = 0; j < FEATURE_DIM; j++) {
        acc += this.matrix[i * FEATURE_DIM + j] * feat[j];
      }
      out[i] = acc;
      norm += acc * acc;
    }
    norm = Math.sqrt(norm);
    if (norm < 1e-12) {
      out[0] = 1.0; // degenerate crop (fully zeroed): fixed unit vector
      return out;
    }
    for (let i = 0; i < this.dim; i++) out[i] /= norm;
    return out;
  }
}
