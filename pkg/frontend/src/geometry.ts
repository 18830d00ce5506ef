// Normalized-coordinate to canvas-pixel mapping. Exact integer rounding,
// so a roundtrip through the canvas is off by at most one pixel.

export interface PixelRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function toPixels(value: number, canvasSize: number): number {
  return Math.round(value * canvasSize);
}

export function bboxToRect(
  bbox: [number, number, number, number],
  canvasSize: number,
): PixelRect {
  const [x1, y1, x2, y2] = bbox;
  const px1 = toPixels(x1, canvasSize);
  const py1 = toPixels(y1, canvasSize);
  return { x: px1, y: py1, w: toPixels(x2, canvasSize) - px1, h: toPixels(y2, canvasSize) - py1 };
}

export function rectToBbox(rect: PixelRect, canvasSize: number): [number, number, number, number] {
  return [
    rect.x / canvasSize,
    rect.y / canvasSize,
    (rect.x + rect.w) / canvasSize,
    (rect.y + rect.h) / canvasSize,
  ];
}

/** Grasp marker geometry: center dot plus a tick along the closing line. */
export function graspTick(
  center: [number, number],
  angle: number,
  length: number,
  canvasSize: number,
): { cx: number; cy: number; x1: number; y1: number; x2: number; y2: number } {
  const cx = toPixels(center[0], canvasSize);
  const cy = toPixels(center[1], canvasSize);
  const dx = (Math.cos(angle) * length) / 2;
  const dy = (Math.sin(angle) * length) / 2;
  return { cx, cy, x1: cx - dx, y1: cy - dy, x2: cx + dx, y2: cy + dy };
}
