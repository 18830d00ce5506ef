// Row-major run-length masks as served by the API.

import type { RleMask } from "./types.js";

/** Decode to a flat Uint8Array of 0/1, row-major. */
export function decodeRle(mask: RleMask): Uint8Array {
  const [height, width] = mask.size;
  const out = new Uint8Array(height * width);
  let pos = 0;
  let value = 0;
  for (const run of mask.counts) {
    if (value === 1) {
      out.fill(1, pos, pos + run);
    }
    pos += run;
    value = 1 - value;
  }
  if (pos !== height * width) {
    throw new Error(`rle covers ${pos} pixels, expected ${height * width}`);
  }
  return out;
}

export function rlePixelCount(mask: RleMask): number {
  let total = 0;
  for (let i = 1; i < mask.counts.length; i += 2) {
    total += mask.counts[i];
  }
  return total;
}

/**
 * Outline pixels of a decoded mask: set pixels with at least one unset
 * 4-neighbour (image border counts as unset).
 */
export function maskOutline(mask: RleMask): Uint8Array {
  const [height, width] = mask.size;
  const data = decodeRle(mask);
  const outline = new Uint8Array(height * width);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      if (!data[i]) continue;
      const edge =
        y === 0 || x === 0 || y === height - 1 || x === width - 1 ||
        !data[i - width] || !data[i + width] || !data[i - 1] || !data[i + 1];
      if (edge) outline[i] = 1;
    }
  }
  return outline;
}
