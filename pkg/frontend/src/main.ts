// DOM wiring: one Client, one ViewState, atomic re-render on every event.

import { ApiError, Client } from "./api.js";
import { drawResultOverlay, drawScene } from "./render.js";
import { canSend, initialState, reduce, visibleTranscript, type Event, type ViewState } from "./state.js";
import type { SceneBody } from "./types.js";

const CANVAS_SIZE = 512;

const apiBase = (window as unknown as { ASKBOX_API_BASE?: string }).ASKBOX_API_BASE ?? "";
const client = new Client(apiBase);

let state: ViewState = initialState;
let scene: SceneBody | null = null;
let sceneBitmap: ImageBitmap | null = null;

const el = {
  seed: document.getElementById("seed") as HTMLInputElement,
  target: document.getElementById("target") as HTMLInputElement,
  instruction: document.getElementById("instruction") as HTMLInputElement,
  newScene: document.getElementById("new-scene") as HTMLButtonElement,
  start: document.getElementById("start") as HTMLButtonElement,
  composer: document.getElementById("composer") as HTMLInputElement,
  send: document.getElementById("send") as HTMLButtonElement,
  chat: document.getElementById("chat") as HTMLDivElement,
  banner: document.getElementById("banner") as HTMLDivElement,
  status: document.getElementById("status") as HTMLSpanElement,
  verdict: document.getElementById("verdict") as HTMLDivElement,
  canvas: document.getElementById("scene") as HTMLCanvasElement,
};

function dispatch(event: Event): void {
  state = reduce(state, event);
  render();
}

async function loadScene(): Promise<void> {
  dispatch({ kind: "scene_requested" });
  try {
    const seedRaw = el.seed.value.trim();
    scene = await client.randomScene(seedRaw ? Number(seedRaw) : undefined);
    el.seed.value = String(scene.seed);
    const blob = await (await fetch(client.imageUrl(scene.scene_id))).blob();
    sceneBitmap = await createImageBitmap(blob);
    dispatch({ kind: "scene_loaded", sceneId: scene.scene_id });
  } catch (error) {
    dispatch({ kind: "request_failed", message: describe(error) });
  }
}

async function startSession(): Promise<void> {
  if (!scene) return;
  const instruction = el.instruction.value.trim();
  if (!instruction) return;
  const targetRaw = el.target.value.trim();
  const targetId = targetRaw === "" ? null : Number(targetRaw);
  dispatch({ kind: "create_requested", instruction, targetId });
  try {
    const body = await client.createSession({
      scene_id: scene.scene_id,
      instruction,
      ...(targetId === null ? {} : { target_id: targetId }),
    });
    dispatch({ kind: "session_update", body });
  } catch (error) {
    handleApiError(error);
  }
}

async function sendAnswer(): Promise<void> {
  const text = el.composer.value.trim();
  if (!text || !canSend(state) || !state.sessionId) return;
  el.composer.value = "";
  dispatch({ kind: "answer_submitted", text });
  try {
    const body = await client.postAnswer(state.sessionId, text);
    dispatch({ kind: "session_update", body });
  } catch (error) {
    handleApiError(error);
  }
}

function handleApiError(error: unknown): void {
  if (error instanceof ApiError && error.status === 422 && error.words) {
    dispatch({ kind: "lexicon_rejected", words: error.words });
  } else {
    dispatch({ kind: "request_failed", message: describe(error) });
  }
}

function describe(error: unknown): string {
  return error instanceof Error ? error.message : String(error);
}

function render(): void {
  el.status.textContent = state.connection === "ok" ? `state: ${state.phase}` : "server unreachable";
  el.status.className = state.connection === "ok" ? "ok" : "down";

  if (state.banner) {
    el.banner.hidden = false;
    el.banner.textContent = state.banner.words
      ? `${state.banner.message}: ${state.banner.words.join(", ")}`
      : state.banner.message;
  } else {
    el.banner.hidden = true;
  }

  el.chat.replaceChildren(
    ...visibleTranscript(state).map((turn) => {
      const bubble = document.createElement("div");
      bubble.className = `turn ${turn.speaker}`;
      bubble.textContent = turn.text;
      return bubble;
    }),
  );
  el.chat.scrollTop = el.chat.scrollHeight;

  const sendable = canSend(state);
  el.composer.disabled = !sendable;
  el.send.disabled = !sendable;
  el.start.disabled = state.phase !== "idle" || !scene;

  const ctx = el.canvas.getContext("2d");
  if (ctx && sceneBitmap) {
    drawScene(ctx, sceneBitmap, CANVAS_SIZE);
    if (state.phase === "guessed" && state.result) {
      let truth: [number, number, number, number] | null = null;
      if (scene && state.targetId !== null) {
        const target = scene.objects.find((o) => o.id === state.targetId);
        if (target) truth = target.bbox;
      }
      drawResultOverlay(ctx, state.result, CANVAS_SIZE, truth);
    }
  }

  if (state.phase === "guessed" && state.result) {
    const r = state.result;
    const parts = [`stopped by ${r.stopped_by}`];
    if (r.malformed) parts.push("box was undecodable");
    if (r.iou !== null && r.iou !== undefined) parts.push(`IoU ${r.iou.toFixed(3)}`);
    if (r.grasp) parts.push(`grasp score ${r.grasp.score.toFixed(2)}`);
    else if (!r.malformed) parts.push("no collision-free grasp");
    el.verdict.textContent = parts.join(" · ");
    el.verdict.hidden = false;
  } else {
    el.verdict.hidden = true;
  }
}

el.newScene.addEventListener("click", () => void loadScene());
el.start.addEventListener("click", () => void startSession());
el.send.addEventListener("click", () => void sendAnswer());
el.composer.addEventListener("keydown", (e) => {
  if (e.key === "Enter") void sendAnswer();
});
el.instruction.addEventListener("keydown", (e) => {
  if (e.key === "Enter") void startSession();
});

void loadScene();
