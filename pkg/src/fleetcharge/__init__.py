"""Two-stage charging management for an electric ride-hailing fleet.

The package splits into a day-ahead charge scheduling stage (one plan per
vehicle over the discretised operating day), an online per-epoch
vehicle-charger assignment stage that anticipates public charger occupancy,
and a discrete-event simulator for comparing charging policies on seeded
scenarios.
"""

__version__ = "0.1.0"

from .core import (
    ChargerSpec,
    PriceSchedule,
    ScenarioConfig,
    TimeGrid,
    VehicleSpec,
    epoch_of,
    travel,
)

__all__ = [
    "ChargerSpec",
    "PriceSchedule",
    "ScenarioConfig",
    "TimeGrid",
    "VehicleSpec",
    "epoch_of",
    "travel",
]
