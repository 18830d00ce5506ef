import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, Client } from "../src/api.js";
import {
  canSend,
  initialState,
  reduce,
  visibleTranscript,
  type ViewState,
} from "../src/state.js";
import type { SessionBody } from "../src/types.js";

function sessionBody(overrides: Partial<SessionBody> = {}): SessionBody {
  return {
    session_id: "abc",
    scene_id: "s1",
    state: "awaiting_answer",
    instruction: "the red object",
    max_rounds: 10,
    rounds: 0,
    turns: [{ speaker: "questioner", text: "is it a circle ?" }],
    question: "is it a circle ?",
    result: null,
    image_base64: null,
    ...overrides,
  };
}

describe("state machine", () => {
  it("walks create -> awaiting -> sending -> guessed", () => {
    let s: ViewState = initialState;
    s = reduce(s, { kind: "create_requested", instruction: "the red object", targetId: null });
    expect(s.phase).toBe("creating");
    s = reduce(s, { kind: "session_update", body: sessionBody() });
    expect(s.phase).toBe("awaiting_answer");
    expect(canSend(s)).toBe(true);
    expect(s.question).toBe("is it a circle ?");

    s = reduce(s, { kind: "answer_submitted", text: "yes" });
    expect(s.phase).toBe("sending");
    expect(canSend(s)).toBe(false);
    // optimistic echo shown while in flight
    expect(visibleTranscript(s).at(-1)).toEqual({ speaker: "oracle", text: "yes" });

    const final = sessionBody({
      state: "guessed",
      rounds: 1,
      turns: [
        { speaker: "questioner", text: "is it a circle ?" },
        { speaker: "oracle", text: "yes" },
      ],
      question: null,
      result: {
        stopped_by: "stop_yes",
        malformed: false,
        bbox: [0.25, 0.25, 0.5, 0.5],
        iou: 1.0,
        mask: { size: [64, 64], counts: [0, 4096] },
        grasp: { center: [0.375, 0.375], angle: 0, width: 0.1, score: 1 },
        mask_pixels: 4096,
      },
    });
    s = reduce(s, { kind: "session_update", body: final });
    expect(s.phase).toBe("guessed");
    expect(s.pendingAnswer).toBeNull();
    // transcript is exactly the server transcript, nothing invented
    expect(visibleTranscript(s)).toEqual(final.turns);
    expect(s.result?.bbox).toEqual([0.25, 0.25, 0.5, 0.5]);
  });

  it("ignores double submits while one answer is in flight", () => {
    let s: ViewState = reduce(initialState, { kind: "session_update", body: sessionBody() });
    s = reduce(s, { kind: "answer_submitted", text: "yes" });
    const again = reduce(s, { kind: "answer_submitted", text: "no" });
    expect(again).toBe(s); // unchanged: single writer
    expect(visibleTranscript(again).at(-1)?.text).toBe("yes");
  });

  it("surfaces 422 lexicon rejections inline and recovers", () => {
    let s: ViewState = reduce(initialState, { kind: "session_update", body: sessionBody() });
    s = reduce(s, { kind: "answer_submitted", text: "purpleish thingy" });
    s = reduce(s, { kind: "lexicon_rejected", words: ["purpleish", "thingy"] });
    expect(s.phase).toBe("awaiting_answer"); // composer re-enabled
    expect(s.banner?.words).toEqual(["purpleish", "thingy"]);
    expect(s.pendingAnswer).toBeNull(); // echo rolled back
  });

  it("marks the connection down on transport failure with retry affordance", () => {
    let s: ViewState = reduce(initialState, { kind: "create_requested", instruction: "x", targetId: null });
    s = reduce(s, { kind: "request_failed", message: "fetch failed" });
    expect(s.connection).toBe("down");
    expect(s.banner?.retryable).toBe(true);
    expect(s.phase).toBe("idle"); // no session yet: back to start
  });
});

describe("api client", () => {
  afterEach(() => vi.unstubAllGlobals());

  it("raises ApiError with words on a 422 body", async () => {
    vi.stubGlobal("fetch", async () =>
      new Response(JSON.stringify({ detail: "out-of-lexicon words", words: ["glorp"] }), {
        status: 422,
        headers: { "content-type": "application/json" },
      }),
    );
    const client = new Client("");
    try {
      await client.createSession({ seed: 1, instruction: "the glorp" });
      expect.unreachable("should have thrown");
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      expect((error as ApiError).status).toBe(422);
      expect((error as ApiError).words).toEqual(["glorp"]);
    }
  });

  it("parses a session body", async () => {
    vi.stubGlobal("fetch", async () =>
      new Response(JSON.stringify(sessionBody()), { status: 200 }),
    );
    const client = new Client("");
    const body = await client.getSession("abc");
    expect(body.state).toBe("awaiting_answer");
    expect(body.turns).toHaveLength(1);
  });
});
