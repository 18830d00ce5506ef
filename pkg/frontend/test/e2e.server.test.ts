// End-to-end against the real Python service with the exact (scripted)
// backend: create a session, answer questions truthfully, and check the
// final box maps onto the canvas within one pixel.

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { bboxToRect, rectToBbox } from "../src/geometry.js";
import { rlePixelCount } from "../src/rle.js";
import type { SceneBody, SessionBody } from "../src/types.js";

let server: ChildProcess;
let client: Client;

function answerFor(scene: SceneBody, targetId: number, question: string): string {
  const target = scene.objects.find((o) => o.id === targetId)!;
  const words = question.toLowerCase().replace("?", " ? ").split(/\s+/).filter(Boolean);
  const attrs: Record<string, string> = { color: target.color, shape: target.shape, size: target.size };
  if (words[0] === "what" && words[1] in attrs) return attrs[words[1]];
  if (words[0] === "is" && words[1] === "it" && words[2] === "in") {
    const cx = (target.bbox[0] + target.bbox[2]) / 2;
    const cy = (target.bbox[1] + target.bbox[3]) / 2;
    const half = words[4];
    const inside =
      (half === "left" && cx < 0.5) || (half === "right" && cx > 0.5) ||
      (half === "top" && cy < 0.5) || (half === "bottom" && cy > 0.5);
    return inside ? "yes" : "no";
  }
  if (words[0] === "is" && words[1] === "it") {
    const value = words[2] === "a" ? words[3] : words[2];
    return Object.values(attrs).includes(value) ? "yes" : "no";
  }
  return "n/a";
}

beforeAll(async () => {
  server = spawn("python3", ["-m", "askbox.cli", "serve", "--port", "0", "--backend", "scripted"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  const port = await new Promise<number>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server did not print a port")), 20_000);
    server.stdout!.on("data", (chunk: Buffer) => {
      const match = /http:\/\/127\.0\.0\.1:(\d+)/.exec(chunk.toString());
      if (match) {
        clearTimeout(timer);
        resolve(Number(match[1]));
      }
    });
    server.on("exit", (code) => reject(new Error(`server exited early: ${code}`)));
  });
  client = new Client(`http://127.0.0.1:${port}`);
  // wait until health answers
  const deadline = Date.now() + 10_000;
  for (;;) {
    try {
      const r = await fetch(`http://127.0.0.1:${port}/api/health`);
      if (r.ok) break;
    } catch {
      if (Date.now() > deadline) throw new Error("health never came up");
      await new Promise((r) => setTimeout(r, 100));
    }
  }
}, 40_000);

afterAll(() => {
  server?.kill("SIGINT");
});

describe("live server", () => {
  it("plays a full session and renders the final box within 1px", async () => {
    // find a target with an attribute-identical twin (separable only by
    // location) plus another same-color distractor: no single question can
    // isolate it, so the dialog needs at least two rounds
    const half = (o: { bbox: [number, number, number, number] }) => [
      (o.bbox[0] + o.bbox[2]) / 2 < 0.5,
      (o.bbox[1] + o.bbox[3]) / 2 < 0.5,
    ];
    let scene: SceneBody | null = null;
    let body: SessionBody | null = null;
    let targetId = 0;
    outer: for (let seed = 0; seed < 400; seed++) {
      const candidate = await client.randomScene(seed);
      for (const a of candidate.objects) {
        const twin = candidate.objects.find(
          (b) =>
            b.id !== a.id &&
            b.color === a.color &&
            b.shape === a.shape &&
            b.size === a.size &&
            JSON.stringify(half(b)) !== JSON.stringify(half(a)),
        );
        const distractor = candidate.objects.find(
          (c) => c.color === a.color && c.shape !== a.shape,
        );
        if (twin && distractor) {
          scene = candidate;
          targetId = a.id;
          body = await client.createSession({
            scene_id: candidate.scene_id,
            instruction: `the ${a.color} object`,
            target_id: a.id,
          });
          break outer;
        }
      }
    }
    expect(scene && body).toBeTruthy();

    let answered = 0;
    while (body!.state === "awaiting_answer" && answered < 12) {
      const answer = answerFor(scene!, targetId, body!.question!);
      body = await client.postAnswer(body!.session_id, answer);
      answered += 1;
    }
    expect(answered).toBeGreaterThanOrEqual(2); // at least two questions asked
    expect(body!.state).toBe("guessed");
    const result = body!.result!;
    expect(result.malformed).toBe(false);
    expect(result.iou).toBe(1.0); // exact backend, truthful answers

    // canvas mapping: normalized -> 512px -> normalized, off by <= 1px
    const rect = bboxToRect(result.bbox!, 512);
    const back = rectToBbox(rect, 512);
    for (let k = 0; k < 4; k++) {
      expect(Math.abs(back[k] - result.bbox![k]) * 512).toBeLessThanOrEqual(1.0);
    }
    // the rect must sit on the canvas
    expect(rect.x).toBeGreaterThanOrEqual(0);
    expect(rect.y).toBeGreaterThanOrEqual(0);
    expect(rect.x + rect.w).toBeLessThanOrEqual(512);
    expect(rect.y + rect.h).toBeLessThanOrEqual(512);

    // mask RLE decodes to the count the server reports
    expect(rlePixelCount(result.mask!)).toBe(result.mask_pixels);
  }, 60_000);

  it("surfaces out-of-lexicon instructions as 422 with the words", async () => {
    const scene = await client.randomScene(7);
    try {
      await client.createSession({ scene_id: scene.scene_id, instruction: "the cromulent gizmo" });
      expect.unreachable("should have thrown");
    } catch (error: any) {
      expect(error.status).toBe(422);
      expect(error.words).toContain("cromulent");
      expect(error.words).toContain("gizmo");
    }
  });

  it("serves the scene image as PNG", async () => {
    const scene = await client.randomScene(3);
    const response = await fetch(client.imageUrl(scene.scene_id));
    expect(response.headers.get("content-type")).toBe("image/png");
    const bytes = new Uint8Array(await response.arrayBuffer());
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });
});
