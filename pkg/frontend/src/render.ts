/** DOM panels and the canvas map. Renders only what the model holds. */

import { ViewModel } from "./model.js";
import { MapGeometry, Snapshot } from "./types.js";

const PHASE_CLASS: Record<string, string> = {
  PED_GREEN: "green",
  PED_CLEARANCE: "clearance",
  PED_RED: "red",
};

const PHASE_FILL: Record<string, string> = {
  PED_GREEN: "#2e9e44",
  PED_CLEARANCE: "#d8a013",
  PED_RED: "#c43131",
};

export interface StopPanel {
  root: HTMLElement;
  title: HTMLElement;
  count: HTMLElement;
}

export interface Panels {
  banner: HTMLElement;
  phaseGlyph: HTMLElement;
  countdown: HTMLElement;
  mode: HTMLElement;
  crossingPanel: HTMLElement;
  shuttlePanel: HTMLElement;
  speed: HTMLElement;
  soc: HTMLElement;
  drivingStatus: HTMLElement;
  mission: HTMLElement;
  stops: StopPanel[];
  commandChip: HTMLElement;
  endNote: HTMLElement;
}

function el(doc: Document, parent: HTMLElement, cls: string): HTMLElement {
  const node = doc.createElement("div");
  node.className = cls;
  parent.appendChild(node);
  return node;
}

/** Builds the static panel skeleton under `root` and returns the handles. */
export function buildPanels(doc: Document, root: HTMLElement): Panels {
  const banner = el(doc, root, "banner hidden");
  const row = el(doc, root, "panel-row");

  const crossingPanel = el(doc, row, "panel crossing");
  el(doc, crossingPanel, "panel-title").textContent = "crossing";
  const phaseGlyph = el(doc, crossingPanel, "glyph unknown");
  const countdown = el(doc, crossingPanel, "countdown");
  const mode = el(doc, crossingPanel, "mode");

  const shuttlePanel = el(doc, row, "panel shuttle");
  el(doc, shuttlePanel, "panel-title").textContent = "shuttle";
  const speed = el(doc, shuttlePanel, "gauge speed");
  const soc = el(doc, shuttlePanel, "gauge soc");
  const drivingStatus = el(doc, shuttlePanel, "gauge status");
  const mission = el(doc, shuttlePanel, "gauge mission");

  const stops: StopPanel[] = [];
  for (let i = 0; i < 2; i += 1) {
    const stopRoot = el(doc, row, `panel stop stop-${i}`);
    const title = el(doc, stopRoot, "panel-title");
    title.textContent = `bus_stop_${i}`;
    const count = el(doc, stopRoot, "gauge waiting");
    stops.push({ root: stopRoot, title, count });
  }

  const commandChip = el(doc, root, "command-chip idle");
  commandChip.textContent = "no command";
  const endNote = el(doc, root, "end-note hidden");
  endNote.textContent = "run finished";
  return {
    banner, phaseGlyph, countdown, mode, crossingPanel, shuttlePanel,
    speed, soc, drivingStatus, mission, stops, commandChip, endNote,
  };
}

function setStale(node: HTMLElement, stale: boolean): void {
  node.classList.toggle("stale", stale);
}

export function renderPanels(vm: ViewModel, p: Panels): void {
  p.banner.classList.toggle("hidden", vm.banner === null);
  p.banner.textContent = vm.banner ?? "";
  p.endNote.classList.toggle("hidden", !vm.ended);

  const snap = vm.snapshot;
  const crossing = snap?.crossing ?? null;
  const phase = crossing?.phase ?? null;
  p.phaseGlyph.className =
    `glyph ${phase !== null ? PHASE_CLASS[phase] ?? "unknown" : "unknown"}`;
  p.countdown.textContent =
    crossing !== null && crossing.countdown_s !== null
      ? crossing.countdown_s.toFixed(1)
      : "--";
  p.mode.textContent = crossing?.mode ?? "mode unknown";
  setStale(p.crossingPanel, crossing?.stale ?? true);

  const shuttle = snap?.shuttle ?? null;
  p.speed.textContent =
    shuttle !== null && shuttle.speed_mps !== null
      ? `${shuttle.speed_mps.toFixed(2)} m/s`
      : "speed ?";
  p.soc.textContent =
    shuttle !== null ? `SoC ${shuttle.soc_percent.toFixed(1)}%` : "SoC ?";
  p.drivingStatus.textContent = shuttle?.driving_status ?? "status ?";
  p.mission.textContent =
    shuttle !== null && shuttle.mission_id !== 0
      ? `mission ${shuttle.mission_id} at ${(shuttle.progress_permille / 10).toFixed(1)}%`
      : "no mission";
  setStale(p.shuttlePanel, shuttle?.stale ?? true);

  (snap?.bus_stops ?? []).forEach((stop, i) => {
    const panel = p.stops[i];
    if (panel === undefined) return;
    panel.title.textContent = stop.name;
    panel.count.textContent = `${stop.pedestrian_count} waiting`;
    setStale(panel.root, stop.stale);
  });
  if (snap === null) {
    for (const panel of p.stops) setStale(panel.root, true);
  }

  const cmd = vm.command;
  if (cmd === null) {
    p.commandChip.className = "command-chip idle";
    p.commandChip.textContent = "no command";
  } else {
    p.commandChip.className = `command-chip ${cmd.phase}`;
    p.commandChip.textContent =
      cmd.phase === "inflight"
        ? `${cmd.name} ...`
        : `${cmd.name}: ${cmd.phase}${cmd.reason ? ` (${cmd.reason})` : ""}`;
  }
}

interface Fit {
  scale: number;
  ox: number;
  oy: number;
  height: number;
}

function fitView(map: MapGeometry, width: number, height: number): Fit {
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  const take = (x: number, y: number) => {
    minX = Math.min(minX, x); maxX = Math.max(maxX, x);
    minY = Math.min(minY, y); maxY = Math.max(maxY, y);
  };
  for (const pts of Object.values(map.routes)) for (const [x, y] of pts) take(x, y);
  for (const [x, y] of map.crosswalk) take(x, y);
  for (const s of map.stops) { take(...s.position); take(...s.platform); }
  const pad = 6;
  minX -= pad; maxX += pad; minY -= pad; maxY += pad;
  const scale = Math.min(width / (maxX - minX), height / (maxY - minY));
  return { scale, ox: minX, oy: minY, height };
}

/** World ENU meters -> canvas pixels, y up. */
function px(f: Fit, x: number, y: number): [number, number] {
  return [(x - f.ox) * f.scale, f.height - (y - f.oy) * f.scale];
}

function poly(ctx: CanvasRenderingContext2D, f: Fit,
              pts: [number, number][], close: boolean): void {
  ctx.beginPath();
  pts.forEach(([x, y], i) => {
    const [cx, cy] = px(f, x, y);
    if (i === 0) ctx.moveTo(cx, cy); else ctx.lineTo(cx, cy);
  });
  if (close) ctx.closePath();
}

/** Draws the whole frame; a null 2d context (tests) is a no-op. */
export function drawMap(vm: ViewModel, map: MapGeometry,
                        canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const f = fitView(map, canvas.width, canvas.height);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#15191f";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  ctx.strokeStyle = "#4a5361";
  ctx.lineWidth = 3;
  for (const pts of Object.values(map.routes)) {
    poly(ctx, f, pts, false);
    ctx.stroke();
  }

  const snap: Snapshot | null = vm.snapshot;
  const phase = snap?.crossing.phase ?? null;
  ctx.fillStyle = phase !== null ? `${PHASE_FILL[phase] ?? "#666"}55` : "#66666633";
  poly(ctx, f, map.conflict_zone, true);
  ctx.fill();
  ctx.strokeStyle = phase !== null ? PHASE_FILL[phase] ?? "#888" : "#888";
  ctx.setLineDash([4, 3]);
  poly(ctx, f, map.crosswalk, false);
  ctx.stroke();
  ctx.setLineDash([]);

  for (const stop of map.stops) {
    const [sx, sy] = px(f, ...stop.platform);
    ctx.fillStyle = "#3b7bd4";
    ctx.fillRect(sx - 4, sy - 4, 8, 8);
  }

  if (snap === null) return;
  for (const stop of snap.bus_stops) {
    if (stop.stale) continue;
    ctx.strokeStyle = "#d4b53b";
    for (const box of stop.boxes) {
      const [bx, by] = px(f, box.x_m, box.y_m);
      ctx.beginPath();
      ctx.arc(bx, by, Math.max(2, box.radius_m * f.scale), 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  const shuttle = snap.shuttle;
  if (shuttle !== null) {
    const [cx, cy] = px(f, shuttle.x_m, shuttle.y_m);
    ctx.fillStyle = shuttle.stale ? "#777" : "#e4e8ee";
    if (shuttle.heading_rad === null) {
      ctx.beginPath();
      ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
      ctx.fill();
    } else {
      ctx.save();
      ctx.translate(cx, cy);
      ctx.rotate(-shuttle.heading_rad); // canvas y is down
      ctx.beginPath();
      ctx.moveTo(8, 0);
      ctx.lineTo(-5, 4);
      ctx.lineTo(-5, -4);
      ctx.closePath();
      ctx.fill();
      ctx.restore();
    }
  }
}
