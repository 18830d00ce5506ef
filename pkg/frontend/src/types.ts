// Wire types mirroring the service JSON bodies.

export interface Turn {
  speaker: "questioner" | "oracle";
  text: string;
}

export interface RleMask {
  size: [number, number]; // [height, width]
  counts: number[]; // alternating zero/one run lengths, zeros first
}

export interface GraspInfo {
  center: [number, number]; // normalized (x, y)
  angle: number; // radians in [0, pi)
  width: number; // normalized opening
  score: number;
}

export interface SessionResult {
  stopped_by: "stop_yes" | "max_rounds";
  malformed: boolean;
  bbox: [number, number, number, number] | null;
  iou: number | null;
  mask: RleMask | null;
  grasp: GraspInfo | null;
  mask_pixels: number | null;
}

export interface SessionBody {
  session_id: string;
  scene_id: string;
  state: "awaiting_answer" | "asking" | "guessed" | "closed";
  instruction: string;
  max_rounds: number;
  rounds: number;
  turns: Turn[];
  question: string | null;
  result: SessionResult | null;
  image_base64: string | null;
}

export interface SceneObject {
  id: number;
  shape: string;
  color: string;
  size: string;
  cell: [number, number];
  bbox: [number, number, number, number];
}

export interface SceneBody {
  scene_id: string;
  grid: [number, number];
  seed: number;
  objects: SceneObject[];
}

export interface LexiconError {
  detail: string;
  words: string[];
}
