/**
 * Built-in multi-granularity mask proposal backend.
 *
 * Coarse levels quantize colors into few bins and take large connected
 * components; finer levels use more bins and admit smaller components. The
 * result is a deterministic stand-in with the same output contract as a
 * promptable segmentation model: raw per-level candidate masks, unfiltered,
 * since all selection logic lives in the engine.
 *
 * A model-backed generator (e.g. a SemanticSAM service) can replace this by
 * implementing MaskGenerator.
 */

import { Image } from "./ppm";

export interface CandidateMask {
  granularityLevel: number;
  /** binary mask over the full image, row-major */
  mask: Uint8Array;
  area: number;
}

export interface MaskGenerator {
  generate(image: Image): CandidateMask[];
}

export interface QuantizeLevel {
  bins: number;
  minArea: number;
  maxMasks: number;
}

export const DEFAULT_LEVELS: QuantizeLevel[] = [
  { bins: 2, minArea: 1024, maxMasks: 24 },
  { bins: 3, minArea: 256, maxMasks: 32 },
  { bins: 5, minArea: 64, maxMasks: 48 },
];

function quantizeLabels(image: Image, bins: number): Int32Array {
  const n = image.width * image.height;
  const labels = new Int32Array(n);
  const step = 256 / bins;
  for (let i = 0; i < n; i++) {
    const r = Math.min(bins - 1, Math.floor(image.data[i * 3] / step));
    const g = Math.min(bins - 1, Math.floor(image.data[i * 3 + 1] / step));
    const b = Math.min(bins - 1, Math.floor(image.data[i * 3 + 2] / step));
    labels[i] = (r * bins + g) * bins + b;
  }
  return labels;
}

/** 4-connected components of equal-label pixels, BFS in raster order. */
function connectedComponents(
  labels: Int32Array,
  width: number,
  height: number
): { component: Int32Array; sizes: number[] } {
  const n = width * height;
  const component = new Int32Array(n).fill(-1);
  const sizes: number[] = [];
  const queue = new Int32Array(n);
  for (let seed = 0; seed < n; seed++) {
    if (component[seed] >= 0) continue;
    const comp = sizes.length;
    const label = labels[seed];
    let head = 0;
    let tail = 0;
    queue[tail++] = seed;
    component[seed] = comp;
    let size = 0;
    while (head < tail) {
      const i = queue[head++];
      size++;
      const x = i % width;
      const y = (i - x) / width;
      if (x > 0 && component[i - 1] < 0 && labels[i - 1] === label) {
        component[i - 1] = comp;
        queue[tail++] = i - 1;
      }
      if (x + 1 < width && component[i + 1] < 0 && labels[i + 1] === label) {
        component[i + 1] = comp;
        queue[tail++] = i + 1;
      }
      if (y > 0 && component[i - width] < 0 && labels[i - width] === label) {
        component[i - width] = comp;
        queue[tail++] = i - width;
      }
      if (y + 1 < height && component[i + width] < 0 && labels[i + width] === label) {
        component[i + width] = comp;
        queue[tail++] = i + width;
      }
    }
    sizes.push(size);
  }
  return { component, sizes };
}

export class QuantizeComponentsGenerator implements MaskGenerator {
  constructor(private levels: QuantizeLevel[] = DEFAULT_LEVELS) {}

  generate(image: Image): CandidateMask[] {
    const out: CandidateMask[] = [];
    const n = image.width * image.height;
    this.levels.forEach((level, levelIdx) => {
      const labels = quantizeLabels(image, level.bins);
      const { component, sizes } = connectedComponents(
        labels,
        image.width,
        image.height
      );
      const keep = sizes
        .map((size, comp) => ({ size, comp }))
        .filter(({ size }) => size >= level.minArea && size < n)
        .sort((a, b) => b.size - a.size || a.comp - b.comp)
        .slice(0, level.maxMasks);
      for (const { comp, size } of keep) {
        const mask = new Uint8Array(n);
        for (let i = 0; i < n; i++) {
          if (component[i] === comp) mask[i] = 1;
        }
        out.push({ granularityLevel: levelIdx + 1, mask, area: size });
      }
    });
    return out;
  }
}
