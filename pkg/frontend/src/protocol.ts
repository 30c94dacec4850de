// Wire protocol types and the canonical client-frame encoding.
//
// The session server speaks JSON text frames over a WebSocket. Outbound
// client frames are serialized canonically (sorted keys, compact separators,
// plain JS number formatting) so a recorded frame stream from this console is
// byte-comparable with one recorded from any other protocol client.

export interface Pose {
  north: number;
  east: number;
  heading: number;
  speed: number;
}

export interface EventEntry {
  event: string;
  [key: string]: unknown;
}

export interface CandidatePayload {
  id: number;
  world?: [number, number][];
  endpoint_pixel?: [number, number];
  hazard?: [number, number];
}

export interface DecisionPayload {
  event?: string;
  choice_id: number;
  parse_status: string;
  see: string;
  implications: string;
  action: string;
  confidence: number;
}

export interface StateFrame {
  type: "state";
  tick: number;
  t: number;
  pose: Pose;
  alpha: number;
  mode: "autonomy" | "shared" | "manual";
  phase: string;
  events: EventEntry[];
  candidates?: CandidatePayload[];
  decision?: DecisionPayload;
}

export interface OverlayFrame {
  type: "overlay";
  png_base64: string;
}

export type ServerFrame = StateFrame | OverlayFrame;

export interface JoystickAction {
  type: "joystick";
  surge: number;
  sway: number;
  yaw: number;
}

export type ClientAction = JoystickAction | { type: "alert" } | { type: "clear" };

export function clampAxis(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(-1, value));
}

// Stable stringify: object keys sorted at every level. Numbers fall through
// to JS default formatting (1.0 -> "1"), matching the server-side canon.
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const body = keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(obj[k]));
  return "{" + body.join(",") + "}";
}

export function encodeClientFrame(action: ClientAction): string {
  if (action.type === "joystick") {
    return canonicalJson({
      type: "joystick",
      surge: clampAxis(action.surge),
      sway: clampAxis(action.sway),
      yaw: clampAxis(action.yaw),
    });
  }
  if (action.type === "alert" || action.type === "clear") {
    return canonicalJson({ type: action.type });
  }
  throw new Error(`unknown client action type ${(action as { type: string }).type}`);
}

export interface TimelineEntry {
  at_tick: number;
  action: ClientAction;
}

// Pure encoding half of a scripted timeline run; the conformance test checks
// this against the golden frame stream recorded from the reference client.
export function framesForTimeline(timeline: TimelineEntry[]): string[] {
  return [...timeline]
    .sort((a, b) => a.at_tick - b.at_tick)
    .map((entry) => encodeClientFrame(entry.action));
}

export function parseServerFrame(text: string): ServerFrame | null {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof parsed !== "object" || parsed === null) return null;
  const frame = parsed as { type?: string };
  if (frame.type === "state" || frame.type === "overlay") {
    return parsed as ServerFrame;
  }
  return null;
}
