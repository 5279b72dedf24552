"""Switch box: hierarchical trajectory broker.

Selects the highest-priority candidate whose compute time and handover
continuity fit the configured windows; otherwise keeps the active
trajectory, or orders a controlled stop when nothing is left to follow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from ..geometry import angle_diff
from .planning import Trajectory, TrajectorySource, VehicleState

PRIORITY = {
    TrajectorySource.EXTERNAL: 0,
    TrajectorySource.DOCKING: 1,
    TrajectorySource.CRUISE: 2,
}


@dataclass(frozen=True)
class BrokerConfig:
    max_compute_s: float = 0.3
    eps_pos_m: float = 0.3
    eps_heading_rad: float = math.radians(10.0)


class Outcome(enum.Enum):
    SELECTED = "selected"
    RETAINED = "retained"
    CONTROLLED_STOP = "controlled_stop"


@dataclass(frozen=True)
class BrokerDecision:
    outcome: Outcome
    trajectory: Trajectory | None
    rejected: tuple[tuple[TrajectorySource, str], ...] = ()


def qualifies(candidate: Trajectory, state: VehicleState,
              cfg: BrokerConfig) -> str | None:
    """None when acceptable, else the violated constraint."""
    if candidate.compute_duration > cfg.max_compute_s:
        return (f"compute_duration {candidate.compute_duration:.3f}s "
                f"> {cfg.max_compute_s}s")
    start = candidate.start
    jump = math.hypot(start.x - state.x, start.y - state.y)
    if jump > cfg.eps_pos_m:
        return f"position jump {jump:.2f}m > {cfg.eps_pos_m}m"
    dh = abs(angle_diff(start.heading, state.heading))
    if dh > cfg.eps_heading_rad:
        return (f"heading jump {math.degrees(dh):.1f}deg "
                f"> {math.degrees(cfg.eps_heading_rad):.0f}deg")
    return None


def switch_box(active: Trajectory | None, candidates: list[Trajectory],
               state: VehicleState, now_s: float,
               cfg: BrokerConfig | None = None) -> BrokerDecision:
    cfg = cfg or BrokerConfig()
    rejected = []
    for cand in sorted(candidates, key=lambda c: PRIORITY[c.source]):
        why = qualifies(cand, state, cfg)
        if why is None:
            return BrokerDecision(Outcome.SELECTED, cand, tuple(rejected))
        rejected.append((cand.source, why))
    if active is not None and active.end_time > now_s:
        return BrokerDecision(Outcome.RETAINED, active, tuple(rejected))
    return BrokerDecision(Outcome.CONTROLLED_STOP, None, tuple(rejected))
