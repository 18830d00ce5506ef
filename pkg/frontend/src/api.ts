// Thin typed client over the session service.

import type { LexiconError, SceneBody, SessionBody } from "./types.js";

export class ApiError extends Error {
  status: number;
  words: string[] | null;

  constructor(status: number, message: string, words: string[] | null = null) {
    super(message);
    this.status = status;
    this.words = words;
  }
}

async function parseError(response: Response): Promise<never> {
  let detail = `HTTP ${response.status}`;
  let words: string[] | null = null;
  try {
    const body = (await response.json()) as Partial<LexiconError>;
    if (body.detail) detail = String(body.detail);
    if (Array.isArray(body.words)) words = body.words;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(response.status, detail, words);
}

export class Client {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  randomScene(seed?: number): Promise<SceneBody> {
    const query = seed === undefined ? "" : `?seed=${seed}`;
    return this.request<SceneBody>(`/api/scenes/random${query}`);
  }

  scene(sceneId: string): Promise<SceneBody> {
    return this.request<SceneBody>(`/api/scenes/${sceneId}`);
  }

  imageUrl(sceneId: string): string {
    return `${this.baseUrl}/api/scenes/${sceneId}/image`;
  }

  createSession(body: {
    scene_id?: string;
    seed?: number;
    instruction: string;
    max_rounds?: number;
    target_id?: number;
  }): Promise<SessionBody> {
    return this.request<SessionBody>("/api/sessions", {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  getSession(sessionId: string): Promise<SessionBody> {
    return this.request<SessionBody>(`/api/sessions/${sessionId}`);
  }

  postAnswer(sessionId: string, answer: string): Promise<SessionBody> {
    return this.request<SessionBody>(`/api/sessions/${sessionId}/answers`, {
      method: "POST",
      body: JSON.stringify({ answer }),
    });
  }

  exist(sceneId: string, phrase: string): Promise<{ answer: string }> {
    return this.request<{ answer: string }>("/api/exist", {
      method: "POST",
      body: JSON.stringify({ scene_id: sceneId, phrase }),
    });
  }
}
