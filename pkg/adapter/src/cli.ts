#!/usr/bin/env node
/** CLI: `ovmap3d-adapter export --out DIR image1.ppm [image2.ppm ...]` */

import { GridStatsEmbedder } from "./embedding";
import { exportArchives } from "./export";

function usage(): never {
  console.error(
    "usage: ovmap3d-adapter export --out DIR [--dim N] [--seed N] image.ppm [...]"
  );
  process.exit(2);
}

export function main(argv: string[]): number {
  if (argv.length < 1 || argv[0] !== "export") usage();
  let outDir = "";
  let dim = 64;
  let seed = 1;
  const images: string[] = [];
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--out") outDir = argv[++i];
    else if (arg === "--dim") dim = parseInt(argv[++i], 10);
    else if (arg === "--seed") seed = parseInt(argv[++i], 10);
    else if (arg.startsWith("--")) usage();
    else images.push(arg);
  }
  if (!outDir || images.length === 0) usage();
  try {
    const result = exportArchives(images, {
      outDir,
      embedder: new GridStatsEmbedder(dim, seed),
    });
    console.log(
      `${result.maskCount} masks -> ${result.masksPath}, ` +
        `${result.embeddingsPath}, ${result.cropsPath}`
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
