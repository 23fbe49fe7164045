/**
 * Crop-rectangle geometry for the five context crops.
 *
 * Mirrors the engine's arithmetic operation for operation (same floor/ceil
 * on IEEE doubles, same clipping), so rectangles computed here are
 * bit-identical to the engine's on identical masks.
 */

export type Rect = [number, number, number, number]; // x0, y0, x1, y1 half-open

export const CROP_ORDER = ["mask", "bbox", "large", "huge", "surroundings"] as const;
export type CropKind = (typeof CROP_ORDER)[number];

export const SCALE_LARGE = 2.5;
export const SCALE_HUGE = 4.0;
export const SCALE_SURROUNDINGS = 3.0;

export interface CropSpec {
  kind: CropKind;
  rect: Rect;
  zeroOutsideMask: boolean;
  zeroInsideMask: boolean;
}

export function scaledRect(bbox: Rect, scale: number, width: number, height: number): Rect {
  const [x0, y0, x1, y1] = bbox;
  const cx = (x0 + x1) / 2.0;
  const cy = (y0 + y1) / 2.0;
  const halfW = ((x1 - x0) * scale) / 2.0;
  const halfH = ((y1 - y0) * scale) / 2.0;
  return [
    Math.max(0, Math.floor(cx - halfW)),
    Math.max(0, Math.floor(cy - halfH)),
    Math.min(width, Math.ceil(cx + halfW)),
    Math.min(height, Math.ceil(cy + halfH)),
  ];
}

export function cropRects(bbox: Rect, width: number, height: number): CropSpec[] {
  return [
    { kind: "mask", rect: bbox, zeroOutsideMask: true, zeroInsideMask: false },
    { kind: "bbox", rect: bbox, zeroOutsideMask: false, zeroInsideMask: false },
    {
      kind: "large",
      rect: scaledRect(bbox, SCALE_LARGE, width, height),
      zeroOutsideMask: false,
      zeroInsideMask: false,
    },
    {
      kind: "huge",
      rect: scaledRect(bbox, SCALE_HUGE, width, height),
      zeroOutsideMask: false,
      zeroInsideMask: false,
    },
    {
      kind: "surroundings",
      rect: scaledRect(bbox, SCALE_SURROUNDINGS, width, height),
      zeroOutsideMask: false,
      zeroInsideMask: true,
    },
  ];
}

export function bboxOfMask(mask: Uint8Array, width: number): Rect {
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 0) continue;
    const x = i % width;
    const y = Math.floor(i / width);
    if (x < minX) minX = x;
    if (x > maxX) maxX = x;
    if (y < minY) minY = y;
    if (y > maxY) maxY = y;
  }
  if (!Number.isFinite(minX)) {
    throw new Error("empty mask has no bounding box");
  }
  return [minX, minY, maxX + 1, maxY + 1];
}
