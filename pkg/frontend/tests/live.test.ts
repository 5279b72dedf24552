/** End-to-end against a live telemetry server spawned from the sibling
 * Python package. Needs `shuttlelab` importable by `python3` (editable
 * install in the repo root).
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import http from "node:http";
import net from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ViewModel } from "../src/model.js";
import { buildPanels, renderPanels } from "../src/render.js";
import { Frame, SnapshotFrame } from "../src/types.js";

const TICK_NS = 100_000_000;
const BOOT =
  "import sys; from shuttlelab.cli import main; sys.exit(main(sys.argv[1:]))";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port"));
        return;
      }
      srv.close(() => resolve(address.port));
    });
  });
}

function healthy(port: number): Promise<boolean> {
  return new Promise((resolve) => {
    const req = http.get(
      { host: "127.0.0.1", port, path: "/health", timeout: 1000 },
      (res) => {
        res.resume();
        resolve(res.statusCode === 200);
      },
    );
    req.on("error", () => resolve(false));
    req.on("timeout", () => { req.destroy(); resolve(false); });
  });
}

interface Server {
  proc: ChildProcess;
  base: string;
  port: number;
  stderr: string;
}

async function startServer(dir: string, tag: string,
                           scenario: object): Promise<Server> {
  const path = join(dir, `${tag}.yaml`);
  writeFileSync(path, JSON.stringify(scenario)); // JSON is valid YAML
  const port = await freePort();
  const proc = spawn("python3", [
    "-c", BOOT, "telemetry", "serve",
    "--scenario", path, "--host", "127.0.0.1", "--port", String(port),
  ]);
  const server: Server = { proc, base: `http://127.0.0.1:${port}`, port,
                           stderr: "" };
  proc.stderr?.on("data", (chunk) => { server.stderr += String(chunk); });
  const deadline = Date.now() + 25_000;
  while (Date.now() < deadline) {
    if (await healthy(port)) return server;
    if (proc.exitCode !== null) break;
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`server ${tag} never became healthy:\n${server.stderr}`);
}

/** Serializes a websocket into awaitable frames. */
class FrameSource {
  private queue: Frame[] = [];
  private waiters: ((f: Frame) => void)[] = [];
  readonly ws: WebSocket;

  constructor(base: string) {
    this.ws = new WebSocket(base.replace("http", "ws") + "/ws");
    this.ws.on("message", (data) => {
      const frame = JSON.parse(String(data)) as Frame;
      const waiter = this.waiters.shift();
      if (waiter !== undefined) waiter(frame);
      else this.queue.push(frame);
    });
  }

  open(): Promise<void> {
    return new Promise((resolve) => this.ws.on("open", () => resolve()));
  }

  next(timeoutMs = 5000): Promise<Frame> {
    const head = this.queue.shift();
    if (head !== undefined) return Promise.resolve(head);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for a frame")), timeoutMs);
      this.waiters.push((frame) => {
        clearTimeout(timer);
        resolve(frame);
      });
    });
  }

  async until(pred: (f: Frame) => boolean, timeoutMs = 15_000): Promise<Frame> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const left = deadline - Date.now();
      if (left <= 0) throw new Error("condition never held");
      const frame = await this.next(left);
      if (pred(frame)) return frame;
    }
  }

  close(): void {
    this.ws.close();
  }
}

const QUIET = { crossing: { rate_per_s: 0.0 }, stops: { rate_per_s: 0.0 } };
let dir: string;
let live: Server;
let stale: Server;

beforeAll(async () => {
  dir = mkdtempSync(join(tmpdir(), "shuttlelab-dash-"));
  [live, stale] = await Promise.all([
    startServer(dir, "live", {
      name: "dash-live",
      rng_seed: 3,
      duration_s: 300.0,
      pedestrians: QUIET,
      trips: { round_trips: 3, headway_s: 5.0 },
    }),
    startServer(dir, "stale", {
      name: "dash-stale",
      rng_seed: 3,
      duration_s: 300.0,
      pedestrians: QUIET,
      // sender_in wall around the bus_stop_1 sensor: its CPM feed never leaves
      netbus: { base_loss: 0.0, zones: [{
        polygon: [[99, -5], [101, -5], [101, -3], [99, -3]],
        mode: "sender_in", extra_loss: 1.0,
      }] },
      trips: { round_trips: 1, headway_s: 5.0 },
    }),
  ]);
});

afterAll(() => {
  live?.proc.kill("SIGTERM");
  stale?.proc.kill("SIGTERM");
  rmSync(dir, { recursive: true, force: true });
});

describe("live telemetry", () => {
  it("streams snapshots at 5 Hz or better", async () => {
    const src = new FrameSource(live.base);
    try {
      await src.open();
      await src.until((f) => f.type === "snapshot");
      const t0 = performance.now();
      let frames = 0;
      let elapsed = 0;
      for (;;) {
        const frame = await src.next();
        elapsed = performance.now() - t0;
        if (frame.type === "snapshot") frames += 1;
        if (elapsed >= 2000) break;
      }
      const hz = (frames / elapsed) * 1000;
      expect(hz).toBeGreaterThanOrEqual(5);
    } finally {
      src.close();
    }
  });

  it("round-trips mode and pause/resume with a visible ack within 2 ticks",
     async () => {
    document.body.innerHTML = "<div id='app'></div>";
    const vm = new ViewModel();
    const panels = buildPanels(document, document.getElementById("app")!);
    const src = new FrameSource(live.base);
    const pump = (f: Frame): void => {
      vm.applyFrame(f, performance.now());
      renderPanels(vm, panels);
    };

    const roundTrip = async (name: string,
                             args: Record<string, unknown>): Promise<void> => {
      const sentAtSim = vm.snapshot!.sim_time_ns;
      const wire = vm.startCommand(name, args, performance.now());
      expect(wire).not.toBeNull();
      src.ws.send(JSON.stringify(wire));
      await src.until((f) => {
        pump(f);
        return vm.command?.phase === "acked";
      });
      expect(panels.commandChip.className).toContain("acked");
      const ack = vm.command!.ack!;
      expect(ack.ok).toBe(true);
      expect(ack.sim_time_ns - sentAtSim).toBeLessThanOrEqual(2 * TICK_NS);
    };

    try {
      await src.open();
      await src.until((f) => { pump(f); return vm.snapshot !== null; });

      await roundTrip("set_intersection_mode",
                      { mode: "PEDESTRIAN_PRIORITY" });
      await src.until((f) => {
        pump(f);
        return vm.snapshot?.crossing.mode === "PEDESTRIAN_PRIORITY";
      });

      // wait for the first mission so the pause is observable as standstill
      await src.until((f) => {
        pump(f);
        return vm.snapshot?.shuttle?.driving_status === "autonomous";
      }, 20_000);
      await roundTrip("pause_shuttle", {});
      await src.until((f) => {
        pump(f);
        return vm.snapshot?.shuttle?.driving_status === "paused";
      });
      await roundTrip("resume_shuttle", {});
      await src.until((f) => {
        pump(f);
        return vm.snapshot?.shuttle?.driving_status === "autonomous";
      });
    } finally {
      src.close();
    }
  });

  it("rejects a dispatch during an active trip with a visible reason",
     async () => {
    const vm = new ViewModel();
    document.body.innerHTML = "<div id='app'></div>";
    const panels = buildPanels(document, document.getElementById("app")!);
    const src = new FrameSource(live.base);
    const pump = (f: Frame): void => {
      vm.applyFrame(f, performance.now());
      renderPanels(vm, panels);
    };
    try {
      await src.open();
      await src.until((f) => {
        pump(f);
        return vm.snapshot?.shuttle !== null
          && vm.snapshot!.shuttle!.mission_id !== 0;
      }, 20_000);
      const wire = vm.startCommand("dispatch_mission",
                                   { direction: "outbound" },
                                   performance.now());
      src.ws.send(JSON.stringify(wire));
      await src.until((f) => {
        pump(f);
        return vm.command?.phase === "failed";
      });
      expect(vm.command?.reason).toContain("active");
      expect(panels.commandChip.className).toContain("failed");
    } finally {
      src.close();
    }
  });

  it("renders a killed bus-stop feed as stale while the rest stay live",
     async () => {
    const vm = new ViewModel();
    document.body.innerHTML = "<div id='app'></div>";
    const panels = buildPanels(document, document.getElementById("app")!);
    const src = new FrameSource(stale.base);
    try {
      await src.open();
      const frame = await src.until(
        (f) => f.type === "snapshot" && f.sim_time_ns >= 2_000_000_000,
        20_000) as SnapshotFrame;
      vm.applyFrame(frame, performance.now());
      renderPanels(vm, panels);

      expect(frame.bus_stops[1]!.stale).toBe(true);
      expect(frame.bus_stops[1]!.received_ns).toBeNull();
      expect(frame.bus_stops[0]!.stale).toBe(false);
      expect(frame.crossing.stale).toBe(false);
      expect(frame.health["4"]!.stale).toBe(true);
      expect(panels.stops[1]!.root.classList.contains("stale")).toBe(true);
      expect(panels.stops[0]!.root.classList.contains("stale")).toBe(false);
    } finally {
      src.close();
    }
  });
});
