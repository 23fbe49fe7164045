export { CROP_ORDER, cropRects, scaledRect, bboxOfMask } from "./crops";
export type { CropSpec, Rect } from "./crops";
export { GridStatsEmbedder } from "./embedding";
export type { EmbeddingBackend } from "./embedding";
export { exportArchives } from "./export";
export type { ExportResult } from "./export";
export {
  encodeEmbeddingArchive,
  encodeMaskArchive,
  writeEmbeddingArchive,
  writeMaskArchive,
} from "./formats";
export { readNetpbm, writePpm } from "./ppm";
export type { Image } from "./ppm";
export { rleArea, rleDecode, rleEncode } from "./rle";
export {
  DEFAULT_LEVELS,
  QuantizeComponentsGenerator,
} from "./segmentation";
export type { CandidateMask, MaskGenerator } from "./segmentation";
