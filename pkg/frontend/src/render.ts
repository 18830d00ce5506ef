// Canvas drawing: the scene image scaled up crisp, then the result overlay
// (prediction box in red, ground-truth box in green when known, mask outline,
// grasp marker) in the same integer pixel mapping the tests check.

import { bboxToRect, graspTick, toPixels } from "./geometry.js";
import { maskOutline } from "./rle.js";
import type { SessionResult } from "./types.js";

export function drawScene(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource,
  canvasSize: number,
): void {
  ctx.clearRect(0, 0, canvasSize, canvasSize);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(image, 0, 0, canvasSize, canvasSize);
}

export function drawResultOverlay(
  ctx: CanvasRenderingContext2D,
  result: SessionResult,
  canvasSize: number,
  truthBbox: [number, number, number, number] | null = null,
): void {
  if (truthBbox) {
    const rect = bboxToRect(truthBbox, canvasSize);
    ctx.strokeStyle = "#19c37d";
    ctx.lineWidth = 2;
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
  }
  if (result.mask) {
    const [height, width] = result.mask.size;
    const outline = maskOutline(result.mask);
    const sx = canvasSize / width;
    const sy = canvasSize / height;
    ctx.fillStyle = "rgba(255, 255, 255, 0.9)";
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        if (outline[y * width + x]) {
          ctx.fillRect(Math.round(x * sx), Math.round(y * sy), Math.ceil(sx), Math.ceil(sy));
        }
      }
    }
  }
  if (result.bbox) {
    const rect = bboxToRect(result.bbox, canvasSize);
    ctx.strokeStyle = "#e5484d";
    ctx.lineWidth = 2;
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
  }
  if (result.grasp) {
    const tick = graspTick(result.grasp.center, result.grasp.angle, toPixels(result.grasp.width, canvasSize), canvasSize);
    ctx.strokeStyle = "#ffb224";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(tick.x1, tick.y1);
    ctx.lineTo(tick.x2, tick.y2);
    ctx.stroke();
    ctx.fillStyle = "#ffb224";
    ctx.beginPath();
    ctx.arc(tick.cx, tick.cy, 4, 0, Math.PI * 2);
    ctx.fill();
  }
}
