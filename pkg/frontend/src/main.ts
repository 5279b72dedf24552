/** Dashboard entry point. Configuration is the server URL only
 * (`?server=http://host:port`, default: same origin).
 */

import { ViewModel } from "./model.js";
import { fetchMap, fetchScenario, openChannel } from "./net.js";
import { buildPanels, drawMap, renderPanels } from "./render.js";
import { MapGeometry } from "./types.js";

const COMMANDS: [string, string, Record<string, unknown>][] = [
  ["Prioritize shuttle", "set_intersection_mode", { mode: "SHUTTLE_PRIORITY" }],
  ["Prioritize pedestrians", "set_intersection_mode", { mode: "PEDESTRIAN_PRIORITY" }],
  ["Dispatch outbound", "dispatch_mission", { direction: "outbound" }],
  ["Dispatch return", "dispatch_mission", { direction: "return" }],
  ["Pause", "pause_shuttle", {}],
  ["Resume", "resume_shuttle", {}],
];

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("server") ?? window.location.origin;

  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app root");
  const vm = new ViewModel();
  const panels = buildPanels(document, root);

  const canvas = document.createElement("canvas");
  canvas.width = 960;
  canvas.height = 360;
  root.prepend(canvas);

  const buttons = document.createElement("div");
  buttons.className = "buttons";
  root.appendChild(buttons);

  let channel: ReturnType<typeof openChannel> | null = null;
  for (const [label, name, args] of COMMANDS) {
    const b = document.createElement("button");
    b.textContent = label;
    b.onclick = () => {
      const cmd = vm.startCommand(name, args, performance.now());
      if (cmd !== null && channel !== null) channel.send(cmd);
      renderPanels(vm, panels);
    };
    buttons.appendChild(b);
  }

  let map: MapGeometry | null = null;
  const repaint = () => {
    renderPanels(vm, panels);
    if (map !== null) drawMap(vm, map, canvas);
    for (const b of buttons.querySelectorAll("button")) {
      b.disabled = vm.commandLocked;
    }
  };

  const [geometry, scenario] = await Promise.all([
    fetchMap(base), fetchScenario(base),
  ]);
  map = geometry;
  document.title = `shuttlelab: ${scenario.name}`;

  channel = openChannel(base, (frame) => {
    vm.applyFrame(frame, performance.now());
    repaint();
  }, () => {
    vm.banner = vm.ended ? null : "connection lost";
    repaint();
  });

  window.setInterval(() => {
    vm.sweep(performance.now());
    repaint();
  }, 250);
}

start().catch((err) => {
  const root = document.getElementById("app");
  if (root !== null) root.textContent = `startup failed: ${err}`;
});
