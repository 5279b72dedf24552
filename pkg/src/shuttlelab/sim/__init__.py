"""Deterministic fixed-step world: scenario config, pedestrians, orchestration."""

from .scenario import (  # noqa: F401
    ConfigError,
    ScenarioConfig,
    build_scenario,
    load_scenario,
    with_seed,
)
from .pedestrians import (  # noqa: F401
    PedGoal,
    PedState,
    PedestrianAgent,
    PedestrianField,
    PedEvent,
)
from .world import (  # noqa: F401
    IncompleteTrip,
    RunLog,
    TrackSnapshot,
    TripSummary,
    World,
    WorldRow,
    measure_stop_delay,
    run,
)
