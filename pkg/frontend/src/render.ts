// Canvas rendering for the two panes. Pure functions over a 2D context so
// tests can drive them with a recording stub.

import type { ViewModel } from "./viewmodel.js";
import { chosenId } from "./viewmodel.js";

// Matches the server-side overlay palette so map and camera colors agree.
export const PALETTE = [
  "#3cc83c", "#e6b428", "#468cf0", "#e65a3c", "#aa50dc", "#3cd2c8",
  "#f078b4", "#96c83c",
];

export function candidateColor(id: number): string {
  return PALETTE[(id - 1 + PALETTE.length * 8) % PALETTE.length];
}

interface Ctx2D {
  canvas: { width: number; height: number };
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  drawImage(img: unknown, x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  font: string;
}

// Camera pane: the overlay image (already labeled server-side) plus a ring
// around the chosen candidate's endpoint.
export function drawCamera(ctx: Ctx2D, vm: ViewModel, overlayImage: unknown | null): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  if (overlayImage) {
    ctx.drawImage(overlayImage, 0, 0, width, height);
  } else {
    ctx.fillStyle = "#10181f";
    ctx.fillRect(0, 0, width, height);
    ctx.fillStyle = "#8899aa";
    ctx.font = "14px sans-serif";
    ctx.fillText("no overlay yet — waiting for an alert", 12, 24);
  }
  const chosen = chosenId(vm);
  if (chosen !== null && chosen >= 1) {
    const cand = vm.candidates.find((c) => c.id === chosen);
    if (cand?.endpoint_pixel) {
      const [u, v] = cand.endpoint_pixel;
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 3;
      ctx.beginPath();
      ctx.arc(u, v, 20, 0, Math.PI * 2);
      ctx.stroke();
    }
  }
}

interface MapTransform {
  toX(east: number): number;
  toY(north: number): number;
}

export function mapTransform(vm: ViewModel, width: number, height: number): MapTransform {
  const pts: { north: number; east: number }[] = [...vm.track];
  for (const c of vm.candidates) {
    for (const [n, e] of c.world ?? []) pts.push({ north: n, east: e });
  }
  if (vm.hazard) pts.push({ north: vm.hazard[0], east: vm.hazard[1] });
  if (pts.length === 0) pts.push({ north: 0, east: 0 });
  let minN = Math.min(...pts.map((p) => p.north)) - 5;
  let maxN = Math.max(...pts.map((p) => p.north)) + 5;
  let minE = Math.min(...pts.map((p) => p.east)) - 5;
  let maxE = Math.max(...pts.map((p) => p.east)) + 5;
  const scale = Math.min(width / (maxE - minE), height / (maxN - minN));
  // North up: canvas y decreases as north increases.
  return {
    toX: (east: number) => (east - minE) * scale,
    toY: (north: number) => height - (north - minN) * scale,
  };
}

export function drawMap(ctx: Ctx2D, vm: ViewModel): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#0c141c";
  ctx.fillRect(0, 0, width, height);
  const tf = mapTransform(vm, width, height);
  const chosen = chosenId(vm);
  for (const cand of vm.candidates) {
    if (!cand.world) continue;
    ctx.strokeStyle = candidateColor(cand.id);
    ctx.lineWidth = cand.id === chosen ? 4 : 1.5;
    ctx.beginPath();
    cand.world.forEach(([n, e], i) => {
      if (i === 0) ctx.moveTo(tf.toX(e), tf.toY(n));
      else ctx.lineTo(tf.toX(e), tf.toY(n));
    });
    ctx.stroke();
  }
  if (vm.hazard) {
    ctx.fillStyle = "#ff4040";
    ctx.beginPath();
    ctx.arc(tf.toX(vm.hazard[1]), tf.toY(vm.hazard[0]), 6, 0, Math.PI * 2);
    ctx.fill();
    ctx.fillStyle = "#ff8080";
    ctx.font = "11px sans-serif";
    ctx.fillText("hazard", tf.toX(vm.hazard[1]) + 8, tf.toY(vm.hazard[0]) - 8);
  }
  // Vessel breadcrumb, newest point emphasized.
  ctx.strokeStyle = "#d0d8e0";
  ctx.lineWidth = 1;
  ctx.beginPath();
  vm.track.forEach((p, i) => {
    if (i === 0) ctx.moveTo(tf.toX(p.east), tf.toY(p.north));
    else ctx.lineTo(tf.toX(p.east), tf.toY(p.north));
  });
  ctx.stroke();
  const last = vm.track[vm.track.length - 1];
  if (last) {
    ctx.fillStyle = "#ffffff";
    ctx.beginPath();
    ctx.arc(tf.toX(last.east), tf.toY(last.north), 4, 0, Math.PI * 2);
    ctx.fill();
  }
}
