/**
 * Minimal netpbm reader: binary P6 (RGB) and P5 (grayscale), 8-bit only.
 * No external image dependency so the adapter runs anywhere node runs.
 */

import * as fs from "fs";

export interface Image {
  width: number;
  height: number;
  /** RGB interleaved, length = width * height * 3 */
  data: Uint8Array;
}

function parseHeader(buf: Buffer): { magic: string; fields: number[]; offset: number } {
  let pos = 0;
  const tokens: string[] = [];
  while (tokens.length < 4 && pos < buf.length) {
    // skip whitespace and comments
    while (pos < buf.length) {
      const c = buf[pos];
      if (c === 0x23) {
        // '#' comment to end of line
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    let start = pos;
    while (
      pos < buf.length &&
      buf[pos] !== 0x20 &&
      buf[pos] !== 0x09 &&
      buf[pos] !== 0x0a &&
      buf[pos] !== 0x0d
    ) {
      pos++;
    }
    tokens.push(buf.toString("ascii", start, pos));
  }
  pos++; // single whitespace after maxval
  const [magic, w, h, maxval] = tokens;
  return {
    magic,
    fields: [parseInt(w, 10), parseInt(h, 10), parseInt(maxval, 10)],
    offset: pos,
  };
}

export function readNetpbm(path: string): Image {
  const buf = fs.readFileSync(path);
  const { magic, fields, offset } = parseHeader(buf);
  const [width, height, maxval] = fields;
  if (!Number.isFinite(width) || !Number.isFinite(height)) {
    throw new Error(`${path}: malformed netpbm header`);
  }
  if (maxval !== 255) {
    throw new Error(`${path}: only 8-bit netpbm supported (maxval ${maxval})`);
  }
  const n = width * height;
  const data = new Uint8Array(n * 3);
  if (magic === "P6") {
    if (buf.length - offset < n * 3) {
      throw new Error(`${path}: truncated P6 payload`);
    }
    data.set(buf.subarray(offset, offset + n * 3));
  } else if (magic === "P5") {
    if (buf.length - offset < n) {
      throw new Error(`${path}: truncated P5 payload`);
    }
    for (let i = 0; i < n; i++) {
      const g = buf[offset + i];
      data[i * 3] = g;
      data[i * 3 + 1] = g;
      data[i * 3 + 2] = g;
    }
  } else {
    throw new Error(`${path}: unsupported netpbm magic ${magic}`);
  }
  return { width, height, data };
}

export function writePpm(path: string, image: Image): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  fs.writeFileSync(path, Buffer.concat([header, Buffer.from(image.data)]));
}
