/** Wire schema of the telemetry service, mirrored verbatim (snake_case). */

export const SCHEMA_V = 1;

export interface ShuttleSection {
  x_m: number;
  y_m: number;
  heading_rad: number | null;
  speed_mps: number | null;
  soc_percent: number;
  indicator: number;
  door_open: boolean;
  mission_id: number;
  progress_permille: number;
  driving_status: string;
  received_ns: number;
  stale: boolean;
}

export interface Movement {
  signal_group_id: number;
  event_state: number;
  time_to_change_s: number | null;
}

export interface CrossingSection {
  phase: string | null;
  mode: string;
  countdown_s: number | null;
  movements: Movement[];
  received_ns: number | null;
  stale: boolean;
}

export interface Box {
  x_m: number;
  y_m: number;
  radius_m: number;
}

export interface BusStopSection {
  station_id: number;
  name: string;
  pedestrian_count: number;
  boxes: Box[];
  received_ns: number | null;
  stale: boolean;
}

export interface HealthEntry {
  last_seen_ns: number | null;
  stale: boolean;
}

export interface Snapshot {
  v: number;
  sim_time_ns: number;
  shuttle: ShuttleSection | null;
  crossing: CrossingSection;
  bus_stops: BusStopSection[];
  health: Record<string, HealthEntry>;
}

export interface Ack {
  id: number | null;
  name: string;
  args?: Record<string, unknown>;
  ok: boolean;
  reason: string | null;
  applied_tick: number;
  sim_time_ns: number;
}

export type SnapshotFrame = { type: "snapshot" } & Snapshot;
export type AckFrame = { type: "ack" } & Ack;
export interface QueuedFrame {
  type: "queued";
  id: number | null;
  name: string;
  status: "queued" | "rejected";
}
export interface ErrorFrame {
  type: "error";
  reason: string;
}
export interface EndFrame {
  type: "end";
  sim_time_ns: number;
}

export type Frame =
  | SnapshotFrame
  | AckFrame
  | QueuedFrame
  | ErrorFrame
  | EndFrame;

export interface StopGeometry {
  station_id: number;
  name: string;
  position: [number, number];
  platform: [number, number];
}

export interface MapGeometry {
  routes: Record<string, [number, number][]>;
  crosswalk: [number, number][];
  conflict_zone: [number, number][];
  crossing_center: [number, number];
  stops: StopGeometry[];
}

export interface ScenarioInfo {
  name: string;
  duration_s: number;
  tick_ms: number;
  schema_v: number;
}

export interface CommandRequest {
  name: string;
  args: Record<string, unknown>;
}
