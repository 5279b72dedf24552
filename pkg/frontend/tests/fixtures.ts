import { Snapshot, SnapshotFrame } from "../src/types.js";

export function snapshot(over: Partial<Snapshot> = {}): Snapshot {
  return {
    v: 1,
    sim_time_ns: 5_000_000_000,
    shuttle: {
      x_m: 12.5,
      y_m: 0.0,
      heading_rad: 0.0,
      speed_mps: 2.5,
      soc_percent: 80.0,
      indicator: 0,
      door_open: false,
      mission_id: 1,
      progress_permille: 125,
      driving_status: "autonomous",
      received_ns: 4_950_000_000,
      stale: false,
    },
    crossing: {
      phase: "PED_RED",
      mode: "SHUTTLE_PRIORITY",
      countdown_s: 3.0,
      movements: [
        { signal_group_id: 1, event_state: 6, time_to_change_s: null },
        { signal_group_id: 2, event_state: 3, time_to_change_s: 3.0 },
      ],
      received_ns: 4_960_000_000,
      stale: false,
    },
    bus_stops: [
      { station_id: 3, name: "bus_stop_0", pedestrian_count: 2,
        boxes: [{ x_m: 0.4, y_m: 3.8, radius_m: 0.25 }],
        received_ns: 4_970_000_000, stale: false },
      { station_id: 4, name: "bus_stop_1", pedestrian_count: 0,
        boxes: [], received_ns: null, stale: true },
    ],
    health: {
      "1": { last_seen_ns: 4_950_000_000, stale: false },
      "2": { last_seen_ns: 4_960_000_000, stale: false },
      "3": { last_seen_ns: 4_970_000_000, stale: false },
      "4": { last_seen_ns: null, stale: true },
    },
    ...over,
  };
}

export function snapshotFrame(over: Partial<Snapshot> = {}): SnapshotFrame {
  return { type: "snapshot", ...snapshot(over) };
}
