// Console entry point: WebSocket wiring, latest-frame mailbox, render loop.
//
// The network feed is decoupled from rendering by a single-slot mailbox: the
// render loop always consumes the newest frame and older frames are dropped,
// never queued.

import { JoystickSender, axesFromKeys } from "./joystick.js";
import { parseServerFrame } from "./protocol.js";
import type { ServerFrame } from "./protocol.js";
import { drawCamera, drawMap } from "./render.js";
import {
  applyServerFrame,
  banner,
  createViewModel,
  decisionLines,
  isStale,
} from "./viewmodel.js";

const vm = createViewModel();
const mailbox: ServerFrame[] = [];

const params = new URLSearchParams(window.location.search);
const token = params.get("token");
const wsUrl =
  (window.location.protocol === "https:" ? "wss://" : "ws://") +
  window.location.host +
  "/ws" +
  (token ? `?token=${encodeURIComponent(token)}` : "");

const cameraCanvas = document.getElementById("camera") as HTMLCanvasElement;
const mapCanvas = document.getElementById("map") as HTMLCanvasElement;
const bannerEl = document.getElementById("banner")!;
const decisionEl = document.getElementById("decision")!;
const rawEl = document.getElementById("decision-raw")!;
const expandEl = document.getElementById("decision-expand")!;
const feedEl = document.getElementById("events")!;
const healthEl = document.getElementById("health")!;
const alertBtn = document.getElementById("alert-btn") as HTMLButtonElement;
const clearBtn = document.getElementById("clear-btn") as HTMLButtonElement;

let socket: WebSocket | null = null;
let overlayImage: HTMLImageElement | null = null;

const sender = new JoystickSender((text) => {
  if (socket && socket.readyState === WebSocket.OPEN) {
    socket.send(text);
  }
});

function connect(): void {
  socket = new WebSocket(wsUrl);
  socket.onopen = () => {
    vm.connected = true;
    sender.setEnabled(true);
  };
  socket.onclose = () => {
    vm.connected = false;
    sender.setEnabled(false); // inputs disabled while disconnected
    setTimeout(connect, 1000);
  };
  socket.onmessage = (msg) => {
    const frame = parseServerFrame(String(msg.data));
    if (frame) {
      mailbox.push(frame);
      if (mailbox.length > 8) mailbox.splice(0, mailbox.length - 8);
    }
  };
}

const pressed = new Set<string>();
window.addEventListener("keydown", (e) => {
  pressed.add(e.key);
  sender.update(axesFromKeys(pressed), performance.now());
});
window.addEventListener("keyup", (e) => {
  pressed.delete(e.key);
  sender.update(axesFromKeys(pressed), performance.now());
});
window.setInterval(() => sender.tickClock(performance.now()), 25);

alertBtn.onclick = () => socket?.send(JSON.stringify({ type: "alert" }));
clearBtn.onclick = () => socket?.send(JSON.stringify({ type: "clear" }));
expandEl.onclick = () => {
  vm.showRawDecision = !vm.showRawDecision;
};

function drainMailbox(): void {
  const now = performance.now();
  while (mailbox.length > 0) {
    const frame = mailbox.shift()!;
    applyServerFrame(vm, frame, now);
    if (frame.type === "overlay") {
      const img = new Image();
      img.src = "data:image/png;base64," + frame.png_base64;
      img.onload = () => {
        overlayImage = img;
      };
    }
  }
}

function renderLoop(): void {
  drainMailbox();
  const now = performance.now();
  const b = banner(vm);
  const stale = isStale(vm, now);
  bannerEl.textContent = stale ? `${b.label} — STALE DATA` : b.label;
  bannerEl.className = stale ? "banner stale" : `banner ${b.kind}`;
  sender.setEnabled(!stale);

  decisionEl.textContent = decisionLines(vm).join("\n");
  rawEl.textContent =
    vm.showRawDecision && vm.decision ? JSON.stringify(vm.decision, null, 1) : "";
  const phase = vm.lastState?.phase ?? "—";
  healthEl.textContent = vm.connected
    ? `tick ${vm.lastState?.tick ?? 0} · phase ${phase}` + (vm.leaseWarning ? " · NO LEASE" : "")
    : "disconnected";

  const camCtx = cameraCanvas.getContext("2d");
  if (camCtx) drawCamera(camCtx, vm, overlayImage);
  const mapCtx = mapCanvas.getContext("2d");
  if (mapCtx) drawMap(mapCtx, vm);

  feedEl.textContent = vm.eventFeed
    .slice(-12)
    .map((e) => `#${e.tick} ${e.text}`)
    .join("\n");
  requestAnimationFrame(renderLoop);
}

connect();
requestAnimationFrame(renderLoop);
