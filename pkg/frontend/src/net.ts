/** Server transport: one websocket for frames, plain fetches for geometry. */

import { CommandRequest, Frame, MapGeometry, ScenarioInfo } from "./types.js";

export interface Channel {
  send(cmd: CommandRequest): void;
  close(): void;
}

export function openChannel(
  baseUrl: string,
  onFrame: (frame: Frame) => void,
  onClose: () => void,
): Channel {
  const wsUrl = baseUrl.replace(/^http/, "ws") + "/ws";
  const socket = new WebSocket(wsUrl);
  socket.onmessage = (event) => {
    onFrame(JSON.parse(String(event.data)) as Frame);
  };
  socket.onclose = onClose;
  return {
    send: (cmd) => socket.send(JSON.stringify(cmd)),
    close: () => socket.close(),
  };
}

export async function fetchMap(baseUrl: string): Promise<MapGeometry> {
  const res = await fetch(`${baseUrl}/map`);
  if (!res.ok) throw new Error(`map fetch failed: ${res.status}`);
  return (await res.json()) as MapGeometry;
}

export async function fetchScenario(baseUrl: string): Promise<ScenarioInfo> {
  const res = await fetch(`${baseUrl}/scenario`);
  if (!res.ok) throw new Error(`scenario fetch failed: ${res.status}`);
  return (await res.json()) as ScenarioInfo;
}
