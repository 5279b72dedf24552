/** View model: the only state the UI renders from.
 *
 * Every rendered value traces to a received frame or an explicit
 * unknown/stale marker; nothing is extrapolated. A snapshot is applied
 * atomically (last good frame kept on schema mismatch), and at most one
 * command is in flight at a time: the lock releases on ack or timeout.
 */

import {
  Ack,
  CommandRequest,
  Frame,
  SCHEMA_V,
  Snapshot,
} from "./types.js";

export const COMMAND_TIMEOUT_MS = 2000;

export type CommandPhase = "inflight" | "acked" | "failed" | "timeout";

export interface CommandState {
  name: string;
  phase: CommandPhase;
  wireId: number | null;
  reason: string | null;
  sentAtMs: number;
  ack: Ack | null;
}

export class ViewModel {
  snapshot: Snapshot | null = null;
  banner: string | null = null;
  ended = false;
  lastFrameAtMs: number | null = null;
  command: CommandState | null = null;
  selectedStation: number | null = null;

  get commandLocked(): boolean {
    return this.command !== null && this.command.phase === "inflight";
  }

  /** Builds the wire message for a user action, or null while locked. */
  startCommand(
    name: string,
    args: Record<string, unknown>,
    nowMs: number,
  ): CommandRequest | null {
    if (this.commandLocked) return null;
    this.command = {
      name,
      phase: "inflight",
      wireId: null,
      reason: null,
      sentAtMs: nowMs,
      ack: null,
    };
    return { name, args };
  }

  applyFrame(frame: Frame, nowMs: number): void {
    switch (frame.type) {
      case "snapshot": {
        if (frame.v !== SCHEMA_V) {
          this.banner = `unsupported snapshot schema v${frame.v}, showing last good frame`;
          return;
        }
        const { type: _ignored, ...snapshot } = frame;
        this.snapshot = snapshot;
        this.banner = null;
        this.lastFrameAtMs = nowMs;
        return;
      }
      case "queued": {
        const cmd = this.command;
        if (cmd === null || cmd.phase !== "inflight") return;
        if (frame.status === "rejected") {
          cmd.phase = "failed";
          cmd.reason = "rejected";
        } else {
          cmd.wireId = frame.id;
        }
        return;
      }
      case "ack": {
        const cmd = this.command;
        if (cmd === null || cmd.phase !== "inflight") return;
        if (frame.id !== cmd.wireId) return; // someone else's command
        cmd.ack = frame;
        cmd.phase = frame.ok ? "acked" : "failed";
        cmd.reason = frame.reason;
        return;
      }
      case "error": {
        const cmd = this.command;
        if (cmd !== null && cmd.phase === "inflight") {
          cmd.phase = "failed";
          cmd.reason = frame.reason;
        }
        return;
      }
      case "end": {
        this.ended = true;
        return;
      }
    }
  }

  /** Periodic bookkeeping: releases the command lock after 2 s of silence. */
  sweep(nowMs: number): void {
    const cmd = this.command;
    if (cmd !== null && cmd.phase === "inflight"
        && nowMs - cmd.sentAtMs >= COMMAND_TIMEOUT_MS) {
      cmd.phase = "timeout";
      cmd.reason = `no ack within ${COMMAND_TIMEOUT_MS} ms`;
    }
  }
}
