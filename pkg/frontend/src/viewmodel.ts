// Console view model: everything the panes render, reduced from server frames.
//
// No control logic lives here: alpha, mode, and phase are used exactly as
// streamed. The banner is derived solely from alpha; the client never blends
// or ramps anything.

import type {
  CandidatePayload,
  DecisionPayload,
  EventEntry,
  ServerFrame,
  StateFrame,
} from "./protocol.js";

export const STALE_AFTER_MS = 1000;
export const EVENT_FEED_LIMIT = 200;

export interface Banner {
  label: string; // "AUTONOMY" | "SHARED n%" | "MANUAL"
  kind: "autonomy" | "shared" | "manual";
}

export interface TrackPoint {
  north: number;
  east: number;
}

export interface ViewModel {
  lastState: StateFrame | null;
  lastFrameAtMs: number;
  connected: boolean;
  overlayPngBase64: string | null;
  candidates: CandidatePayload[];
  hazard: [number, number] | null;
  decision: DecisionPayload | null;
  showRawDecision: boolean; // expand-on-demand for the full raw text fields
  eventFeed: { tick: number; text: string }[];
  track: TrackPoint[];
  leaseWarning: boolean;
}

export function createViewModel(): ViewModel {
  return {
    lastState: null,
    lastFrameAtMs: 0,
    connected: false,
    overlayPngBase64: null,
    candidates: [],
    hazard: null,
    decision: null,
    showRawDecision: false,
    eventFeed: [],
    track: [],
    leaseWarning: false,
  };
}

export function bannerFromAlpha(alpha: number): Banner {
  if (alpha === 0) return { label: "AUTONOMY", kind: "autonomy" };
  if (alpha === 1) return { label: "MANUAL", kind: "manual" };
  const pct = Math.round(alpha * 100);
  return { label: `SHARED ${pct}%`, kind: "shared" };
}

export function banner(vm: ViewModel): Banner {
  if (!vm.lastState) return { label: "AUTONOMY", kind: "autonomy" };
  return bannerFromAlpha(vm.lastState.alpha);
}

export function isStale(vm: ViewModel, nowMs: number): boolean {
  if (!vm.connected || vm.lastState === null) return true;
  return nowMs - vm.lastFrameAtMs > STALE_AFTER_MS;
}

export function chosenId(vm: ViewModel): number | null {
  return vm.decision ? vm.decision.choice_id : null;
}

function eventText(e: EventEntry): string {
  const rest = Object.entries(e)
    .filter(([k]) => k !== "event")
    .map(([k, v]) => `${k}=${JSON.stringify(v)}`)
    .join(" ");
  return rest ? `${e.event} ${rest}` : e.event;
}

export function applyServerFrame(vm: ViewModel, frame: ServerFrame, nowMs: number): void {
  vm.lastFrameAtMs = nowMs;
  if (frame.type === "overlay") {
    vm.overlayPngBase64 = frame.png_base64;
    return;
  }
  vm.lastState = frame;
  vm.track.push({ north: frame.pose.north, east: frame.pose.east });
  if (vm.track.length > 4000) vm.track.splice(0, vm.track.length - 4000);
  if (frame.candidates) {
    vm.candidates = frame.candidates.filter((c) => c.world && c.world.length > 0);
    const hazardEntry = frame.candidates.find((c) => c.hazard);
    vm.hazard = hazardEntry?.hazard ?? null;
  }
  if (frame.decision) {
    vm.decision = frame.decision;
  }
  for (const e of frame.events) {
    vm.eventFeed.push({ tick: frame.tick, text: eventText(e) });
    if (e.event === "warning" && e["reason"] === "joystick_rejected_no_lease") {
      vm.leaseWarning = true;
    }
    if (e.event === "lease_acquired") {
      vm.leaseWarning = false;
    }
  }
  if (vm.eventFeed.length > EVENT_FEED_LIMIT) {
    vm.eventFeed.splice(0, vm.eventFeed.length - EVENT_FEED_LIMIT);
  }
}

// Decision text for the panes: the three short schema fields, with the raw
// payload available behind expand-on-demand.
export function decisionLines(vm: ViewModel): string[] {
  if (!vm.decision) return [];
  const d = vm.decision;
  return [`see: ${d.see}`, `implications: ${d.implications}`, `action: ${d.action}`];
}
