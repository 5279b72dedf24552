"""Automated shuttle agent: planners, trajectory broker, per-tick pipeline."""

from .planning import (  # noqa: F401
    Direction,
    NoPath,
    OffRoute,
    RoutePlan,
    Trajectory,
    TrajectorySample,
    TrajectorySource,
    VehicleState,
    cruise_plan,
    docking_plan,
)
from .broker import BrokerConfig, BrokerDecision, switch_box  # noqa: F401
from .agent import (  # noqa: F401
    DrivingStatus,
    Obstacle,
    ObstacleSource,
    ObstacleStore,
    ShuttleAgent,
    ShuttleConfig,
    yield_decision,
)
