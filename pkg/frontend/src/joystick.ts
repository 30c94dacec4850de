// Joystick input: keyboard mapping plus the outbound send policy.
//
// While engaged the sender emits the CURRENT axes at a fixed rate (>= 20 Hz)
// and a single explicit zero frame on release; nothing is ever queued, so a
// stale stick value can never reach the vessel after the hand comes off.

import { clampAxis, encodeClientFrame } from "./protocol.js";

export interface Axes {
  surge: number;
  sway: number;
  yaw: number;
}

export const ZERO_AXES: Axes = { surge: 0, sway: 0, yaw: 0 };
export const SEND_INTERVAL_MS = 50; // 20 Hz

export function isEngaged(axes: Axes): boolean {
  return axes.surge !== 0 || axes.sway !== 0 || axes.yaw !== 0;
}

// Keyboard fallback for desk testing: WASD for surge/sway, Q/E for yaw.
const KEY_AXES: Record<string, Partial<Axes>> = {
  w: { surge: 1 },
  s: { surge: -1 },
  d: { sway: 1 },
  a: { sway: -1 },
  e: { yaw: 1 },
  q: { yaw: -1 },
  arrowup: { surge: 1 },
  arrowdown: { surge: -1 },
  arrowright: { yaw: 1 },
  arrowleft: { yaw: -1 },
};

export function axesFromKeys(pressed: Set<string>): Axes {
  const axes = { ...ZERO_AXES };
  for (const key of pressed) {
    const partial = KEY_AXES[key.toLowerCase()];
    if (!partial) continue;
    axes.surge = clampAxis(axes.surge + (partial.surge ?? 0));
    axes.sway = clampAxis(axes.sway + (partial.sway ?? 0));
    axes.yaw = clampAxis(axes.yaw + (partial.yaw ?? 0));
  }
  return axes;
}

export type SendFn = (frameText: string) => void;

// Pure send policy, driven by a clock so it is directly testable: call
// update() whenever the axes change and tickClock() from a timer.
export class JoystickSender {
  private axes: Axes = { ...ZERO_AXES };
  private engaged = false;
  private lastSentAtMs = -Infinity;
  private enabled = true;

  constructor(private send: SendFn) {}

  setEnabled(enabled: boolean): void {
    if (this.enabled && !enabled && this.engaged) {
      this.releaseNow();
    }
    this.enabled = enabled;
  }

  update(axes: Axes, nowMs: number): void {
    if (!this.enabled) return;
    this.axes = {
      surge: clampAxis(axes.surge),
      sway: clampAxis(axes.sway),
      yaw: clampAxis(axes.yaw),
    };
    const engagedNow = isEngaged(this.axes);
    if (engagedNow) {
      this.engaged = true;
      this.emit(nowMs); // immediate frame on change, no buffering
    } else if (this.engaged) {
      this.engaged = false;
      this.emit(nowMs); // exactly one explicit zero frame on release
    }
  }

  tickClock(nowMs: number): void {
    if (!this.enabled || !this.engaged) return;
    if (nowMs - this.lastSentAtMs >= SEND_INTERVAL_MS) {
      this.emit(nowMs);
    }
  }

  private releaseNow(): void {
    this.engaged = false;
    this.axes = { ...ZERO_AXES };
    this.send(encodeClientFrame({ type: "joystick", ...ZERO_AXES }));
  }

  private emit(nowMs: number): void {
    this.lastSentAtMs = nowMs;
    this.send(encodeClientFrame({ type: "joystick", ...this.axes }));
  }
}
