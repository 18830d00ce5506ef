// View state machine, kept pure so it can be unit-tested off the DOM.
// The server transcript is the single source of truth: an optimistic echo of
// the human's answer is shown only while the request is in flight, and the
// next server response replaces the whole transcript.

import type { SessionBody, SessionResult, Turn } from "./types.js";

export type Phase =
  | "idle"
  | "loading_scene"
  | "creating"
  | "awaiting_answer"
  | "sending"
  | "guessed"
  | "closed";

export interface Banner {
  message: string;
  words?: string[];
  retryable: boolean;
}

export interface ViewState {
  phase: Phase;
  connection: "ok" | "down";
  sceneId: string | null;
  sessionId: string | null;
  instruction: string;
  transcript: Turn[];
  pendingAnswer: string | null;
  question: string | null;
  result: SessionResult | null;
  banner: Banner | null;
  targetId: number | null;
}

export const initialState: ViewState = {
  phase: "idle",
  connection: "ok",
  sceneId: null,
  sessionId: null,
  instruction: "",
  transcript: [],
  pendingAnswer: null,
  question: null,
  result: null,
  banner: null,
  targetId: null,
};

export type Event =
  | { kind: "scene_requested" }
  | { kind: "scene_loaded"; sceneId: string }
  | { kind: "create_requested"; instruction: string; targetId: number | null }
  | { kind: "session_update"; body: SessionBody }
  | { kind: "answer_submitted"; text: string }
  | { kind: "lexicon_rejected"; words: string[] }
  | { kind: "request_failed"; message: string }
  | { kind: "banner_dismissed" }
  | { kind: "session_closed" };

export function canSend(state: ViewState): boolean {
  return state.phase === "awaiting_answer";
}

/** Turns to render: server transcript plus the in-flight optimistic echo. */
export function visibleTranscript(state: ViewState): Turn[] {
  if (state.pendingAnswer === null) return state.transcript;
  return [...state.transcript, { speaker: "oracle", text: state.pendingAnswer }];
}

function fromSession(state: ViewState, body: SessionBody): ViewState {
  const phase: Phase =
    body.state === "guessed" ? "guessed" : body.state === "closed" ? "closed" : "awaiting_answer";
  return {
    ...state,
    phase,
    connection: "ok",
    sceneId: body.scene_id,
    sessionId: body.session_id,
    instruction: body.instruction,
    transcript: body.turns,
    pendingAnswer: null,
    question: body.question,
    result: body.result,
    banner: null,
  };
}

export function reduce(state: ViewState, event: Event): ViewState {
  switch (event.kind) {
    case "scene_requested":
      return { ...initialState, phase: "loading_scene", targetId: state.targetId };
    case "scene_loaded":
      return { ...state, phase: "idle", sceneId: event.sceneId, connection: "ok", banner: null };
    case "create_requested":
      return {
        ...state,
        phase: "creating",
        instruction: event.instruction,
        targetId: event.targetId,
        banner: null,
      };
    case "session_update":
      return fromSession(state, event.body);
    case "answer_submitted":
      if (!canSend(state)) return state; // single writer: ignore double sends
      return { ...state, phase: "sending", pendingAnswer: event.text };
    case "lexicon_rejected":
      return {
        ...state,
        phase: state.sessionId ? "awaiting_answer" : "idle",
        pendingAnswer: null,
        banner: {
          message: "these words are outside the model's vocabulary",
          words: event.words,
          retryable: false,
        },
      };
    case "request_failed":
      return {
        ...state,
        phase: state.sessionId ? "awaiting_answer" : "idle",
        pendingAnswer: null,
        connection: "down",
        banner: { message: event.message, retryable: true },
      };
    case "banner_dismissed":
      return { ...state, banner: null };
    case "session_closed":
      return { ...state, phase: "closed" };
  }
}
