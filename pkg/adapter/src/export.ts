/**
 * Orchestration: images in, engine-format archives out.
 *
 * Per image, the mask generator proposes raw multi-granularity candidates
 * (no filtering here: selection and refinement are the engine's job); each
 * candidate gets its five context crops, the embedding backend encodes
 * them, and everything is written as one mask archive plus one aligned
 * embedding archive and a crops.json sidecar with the rectangle geometry.
 */

import * as fs from "fs";
import * as path from "path";

import { bboxOfMask, cropRects, CropSpec, Rect } from "./crops";
import { EmbeddingBackend, GridStatsEmbedder } from "./embedding";
import { MaskRecord, writeEmbeddingArchive, writeMaskArchive } from "./formats";
import { Image, readNetpbm } from "./ppm";
import { rleEncode } from "./rle";
import { MaskGenerator, QuantizeComponentsGenerator } from "./segmentation";

export interface ExportOptions {
  outDir: string;
  generator?: MaskGenerator;
  embedder?: EmbeddingBackend;
}

export interface CropInfo {
  mask_index: number;
  frame_id: number;
  granularity_level: number;
  image_width: number;
  image_height: number;
  area: number;
  bbox: Rect;
  rects: Record<string, Rect>;
}

export interface ExportResult {
  masksPath: string;
  embeddingsPath: string;
  cropsPath: string;
  maskCount: number;
}

export function exportArchives(imagePaths: string[], opts: ExportOptions): ExportResult {
  const generator = opts.generator ?? new QuantizeComponentsGenerator();
  const embedder = opts.embedder ?? new GridStatsEmbedder();
  fs.mkdirSync(opts.outDir, { recursive: true });

  const records: MaskRecord[] = [];
  const perCrop: Float32Array[][] = [];
  const crops: CropInfo[] = [];

  imagePaths.forEach((imagePath, frameId) => {
    const image: Image = readNetpbm(imagePath);
    const candidates = generator.generate(image);
    for (const cand of candidates) {
      const runs = rleEncode(cand.mask);
      const bbox = bboxOfMask(cand.mask, image.width);
      const specs: CropSpec[] = cropRects(bbox, image.width, image.height);
      const five = specs.map((spec) => embedder.embedCrop(image, spec, cand.mask));
      crops.push({
        mask_index: records.length,
        frame_id: frameId,
        granularity_level: cand.granularityLevel,
        image_width: image.width,
        image_height: image.height,
        area: cand.area,
        bbox,
        rects: Object.fromEntries(specs.map((s) => [s.kind, s.rect])),
      });
      records.push({
        frameId,
        granularityLevel: cand.granularityLevel,
        height: image.height,
        width: image.width,
        runs,
      });
      perCrop.push(five);
    }
  });

  const masksPath = path.join(opts.outDir, "masks.ovmk");
  const embeddingsPath = path.join(opts.outDir, "embeddings.ovem");
  const cropsPath = path.join(opts.outDir, "crops.json");
  writeMaskArchive(masksPath, records);
  writeEmbeddingArchive(embeddingsPath, perCrop, embedder.dim);
  fs.writeFileSync(cropsPath, JSON.stringify(crops, null, 1) + "\n");
  return { masksPath, embeddingsPath, cropsPath, maskCount: records.length };
}
