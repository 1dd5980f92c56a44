"""Core domain types shared by every stage of the charging pipeline.

Conventions used throughout the package:

* time is measured in minutes (floats), clock times as minutes from midnight;
* energy is measured in kWh (64-bit floats), feasibility checks use an
  absolute tolerance of ``ENERGY_EPS`` kWh;
* geometry is a flat Euclidean plane with coordinates in km and a single
  constant vehicle speed in km/h.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

ENERGY_EPS = 1e-6           # kWh tolerance for all energy feasibility checks
TIME_EPS = 1e-6             # minutes tolerance for strict time inequalities


class FleetChargeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FleetChargeError):
    """Invalid scenario configuration or config file."""


class OutOfRangeError(FleetChargeError):
    """A clock time falls outside the operating window."""


def parse_clock(value) -> float:
    """Parse a clock time into minutes from midnight.

    Accepts "HH:MM" strings or plain numbers (already minutes).
    """
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"bad clock time {value!r}, expected HH:MM")
        try:
            hours, minutes = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ConfigError(f"bad clock time {value!r}") from exc
        if not (0 <= hours < 24 and 0 <= minutes < 60):
            raise ConfigError(f"clock time {value!r} out of range")
        return float(hours * 60 + minutes)
    return float(value)


def format_clock(minutes: float) -> str:
    m = int(round(minutes))
    return f"{m // 60:02d}:{m % 60:02d}"


@dataclass(frozen=True)
class TimeGrid:
    """Discretisation of the operating day into charging decision epochs.

    Epoch h (1-based) covers the half-open interval
    [day_start + (h-1)*epoch_minutes, day_start + h*epoch_minutes).
    """

    day_start: float = 390.0        # 06:30
    day_end: float = 1320.0         # 22:00
    epoch_minutes: float = 30.0

    def __post_init__(self):
        if not self.day_start < self.day_end:
            raise ConfigError("day_start must precede day_end")
        if self.epoch_minutes <= 0:
            raise ConfigError("epoch_minutes must be positive")

    @property
    def epoch_count(self) -> int:
        return math.ceil((self.day_end - self.day_start) / self.epoch_minutes - TIME_EPS)

    def epoch_start(self, h: int) -> float:
        """Clock time at which epoch h (1-based) begins."""
        return self.day_start + (h - 1) * self.epoch_minutes

    def epoch_of(self, t: float) -> int:
        """Return the 1-based epoch containing clock time t.

        t must lie in [day_start, day_end); the end of the day is exclusive.
        """
        if t < self.day_start or t >= self.day_end:
            raise OutOfRangeError(
                f"t={t} outside operating window "
                f"[{format_clock(self.day_start)}, {format_clock(self.day_end)})"
            )
        return int((t - self.day_start) // self.epoch_minutes) + 1


def epoch_of(t: float, grid: TimeGrid) -> int:
    """Module-level alias for :meth:`TimeGrid.epoch_of`."""
    return grid.epoch_of(t)


Location = tuple[float, float]


def travel(a: Location, b: Location, speed_kmh: float) -> tuple[float, float]:
    """Euclidean distance (km) and travel time (minutes) between two points."""
    dist = math.hypot(b[0] - a[0], b[1] - a[1])
    return dist, dist / speed_kmh * 60.0


@dataclass(frozen=True)
class VehicleSpec:
    """Static parameters shared by every vehicle in the fleet."""

    battery_kwh: float = 62.0
    e_min: float = 0.2 * 62.0
    e_max: float = 0.8 * 62.0
    consumption_kwh_per_km: float = 0.204
    seats: int = 4
    speed_kmh: float = 65.0
    e_init: float = 0.8 * 62.0      # vehicles start the day at the max allowed level

    def __post_init__(self):
        if not (0 <= self.e_min < self.e_max <= self.battery_kwh + ENERGY_EPS):
            raise ConfigError("require 0 <= e_min < e_max <= battery capacity")
        if not (self.e_min - ENERGY_EPS <= self.e_init <= self.battery_kwh + ENERGY_EPS):
            raise ConfigError("e_init must lie in [e_min, battery capacity]")
        if self.consumption_kwh_per_km <= 0:
            raise ConfigError("consumption rate must be positive")
        if self.speed_kmh <= 0:
            raise ConfigError("speed must be positive")


@dataclass(frozen=True)
class ChargerSpec:
    """One rapid charger (one plug) at a fixed location."""

    charger_id: int
    location: Location
    rate_kwh_per_min: float = 50.0 / 60.0

    def __post_init__(self):
        if self.rate_kwh_per_min <= 0:
            raise ConfigError("charging rate must be positive")


@dataclass(frozen=True)
class PriceSchedule:
    """Per-epoch energy prices plus a fixed cost per recharge operation."""

    per_epoch: tuple[float, ...]
    fixed_cost: float = 0.3

    def __post_init__(self):
        if any(p < 0 for p in self.per_epoch):
            raise ConfigError("energy prices must be non-negative")
        if self.fixed_cost < 0:
            raise ConfigError("fixed recharge cost must be non-negative")

    @classmethod
    def flat(cls, price: float, epochs: int, fixed_cost: float = 0.3) -> "PriceSchedule":
        return cls(per_epoch=(price,) * epochs, fixed_cost=fixed_cost)

    def price(self, h: int) -> float:
        """Energy price for 1-based epoch h."""
        return self.per_epoch[h - 1]


# Default charger layout: 9 rapid chargers spread over 6 sites of a
# 20 km x 12 km service area, with the depot at the centre.
DEFAULT_REGION = (20.0, 12.0)
DEFAULT_DEPOT: Location = (10.0, 6.0)
DEFAULT_CHARGER_SITES: tuple[tuple[Location, int], ...] = (
    ((4.0, 3.0), 2),
    ((16.0, 3.0), 2),
    ((10.0, 9.0), 2),
    ((4.0, 9.0), 1),
    ((16.0, 9.0), 1),
    ((10.0, 3.0), 1),
)


def default_chargers(rate_kwh_per_min: float = 50.0 / 60.0) -> tuple[ChargerSpec, ...]:
    chargers = []
    cid = 0
    for loc, count in DEFAULT_CHARGER_SITES:
        for _ in range(count):
            chargers.append(ChargerSpec(charger_id=cid, location=loc, rate_kwh_per_min=rate_kwh_per_min))
            cid += 1
    return tuple(chargers)


POLICIES = ("NP", "OCP0", "OCP*")
PREDICTORS = ("always_free", "profile", "noisy_oracle", "perfect_oracle")


@dataclass
class ExogenousConfig:
    """Synthetic background (non-fleet) charging demand on the public chargers."""

    mean_sessions_per_charger: float = 9.0
    duration_min: tuple[float, float] = (20.0, 50.0)
    peak_factor: float = 2.0            # arrival intensity multiplier inside demand peaks


@dataclass
class DemandConfig:
    """Synthetic ride-request generation parameters."""

    # piecewise-constant arrival weights as (start_min, end_min, weight)
    profile: tuple[tuple[float, float, float], ...] = (
        (390.0, 480.0, 1.0),
        (480.0, 570.0, 2.5),     # morning peak 08:00-09:30
        (570.0, 990.0, 1.0),
        (990.0, 1110.0, 2.5),    # evening peak 16:30-18:30
        (1110.0, 1320.0, 1.0),
    )
    notice_min: float = 10.0            # desired pickup = request arrival + notice
    party_size: int = 1


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one simulated service day."""

    fleet_size: int = 40
    customer_count: int = 800
    chargers: tuple[ChargerSpec, ...] = field(default_factory=default_chargers)
    depot: Location = DEFAULT_DEPOT
    region: tuple[float, float] = DEFAULT_REGION
    grid: TimeGrid = field(default_factory=TimeGrid)
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    prices: PriceSchedule | None = None
    policy: str = "OCP*"
    predictor: str = "noisy_oracle"
    flip_probability: float = 0.18
    prediction_horizon_min: float = 60.0
    u_max: float = 25.0                 # kWh per epoch (rapid charger x 30 min)
    theta1: float = 0.025
    theta2: float = 0.5
    big_m: float | None = None          # Eq-style M for the day-ahead stage
    big_m1: float | None = None
    big_m2: float | None = None
    seed: int = 0
    rejection_deadline_min: float = 30.0
    route_reserve_kwh: float = 2.0      # slack above e_min required of any route
    demand: DemandConfig = field(default_factory=DemandConfig)
    exogenous: ExogenousConfig = field(default_factory=ExogenousConfig)
    p2_exact_limit: int = 6             # use enumeration when |I| and |J| both fit

    def __post_init__(self):
        if self.prices is None:
            self.prices = PriceSchedule.flat(0.25, self.grid.epoch_count)
        if len(self.prices.per_epoch) != self.grid.epoch_count:
            raise ConfigError(
                f"price schedule has {len(self.prices.per_epoch)} entries, "
                f"grid has {self.grid.epoch_count} epochs"
            )
        if self.u_max <= 0:
            raise ConfigError("u_max must be positive")
        if self.theta1 < 0 or self.theta2 < 0:
            raise ConfigError("theta weights must be non-negative")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}")
        if self.big_m is None:
            self.big_m = self.u_max
        if self.big_m1 is None:
            self.big_m1 = self.vehicle.battery_kwh
        if self.big_m2 is None:
            self.big_m2 = self.grid.day_end - self.grid.day_start
        if self.big_m < self.u_max - ENERGY_EPS:
            raise ConfigError("big_m must be at least u_max")
        if self.big_m1 < self.vehicle.battery_kwh - ENERGY_EPS:
            raise ConfigError("big_m1 must be at least the battery capacity")
        if self.region[0] <= 0 or self.region[1] <= 0:
            raise ConfigError("region dimensions must be positive")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "fleet_size": self.fleet_size,
            "customer_count": self.customer_count,
            "depot": list(self.depot),
            "region": list(self.region),
            "time": {
                "day_start": format_clock(self.grid.day_start),
                "day_end": format_clock(self.grid.day_end),
                "epoch_minutes": self.grid.epoch_minutes,
            },
            "vehicle": asdict(self.vehicle),
            "chargers": [
                {"charger_id": c.charger_id, "x": c.location[0], "y": c.location[1],
                 "rate_kwh_per_min": c.rate_kwh_per_min}
                for c in self.chargers
            ],
            "prices": {"per_epoch": list(self.prices.per_epoch),
                       "fixed_cost": self.prices.fixed_cost},
            "policy": self.policy,
            "predictor": self.predictor,
            "flip_probability": self.flip_probability,
            "prediction_horizon_min": self.prediction_horizon_min,
            "u_max": self.u_max,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "big_m": self.big_m,
            "big_m1": self.big_m1,
            "big_m2": self.big_m2,
            "seed": self.seed,
            "rejection_deadline_min": self.rejection_deadline_min,
            "route_reserve_kwh": self.route_reserve_kwh,
            "demand": {
                "profile": [list(seg) for seg in self.demand.profile],
                "notice_min": self.demand.notice_min,
                "party_size": self.demand.party_size,
            },
            "exogenous": {
                "mean_sessions_per_charger": self.exogenous.mean_sessions_per_charger,
                "duration_min": list(self.exogenous.duration_min),
                "peak_factor": self.exogenous.peak_factor,
            },
            "p2_exact_limit": self.p2_exact_limit,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        kwargs: dict = {}
        simple = ("fleet_size", "customer_count", "policy", "predictor",
                  "flip_probability", "prediction_horizon_min", "u_max",
                  "theta1", "theta2", "big_m", "big_m1", "big_m2", "seed",
                  "rejection_deadline_min", "route_reserve_kwh", "p2_exact_limit")
        for key in simple:
            if key in d:
                kwargs[key] = d[key]
        if "depot" in d:
            kwargs["depot"] = tuple(d["depot"])
        if "region" in d:
            kwargs["region"] = tuple(d["region"])
        if "time" in d:
            t = d["time"]
            kwargs["grid"] = TimeGrid(
                day_start=parse_clock(t.get("day_start", "06:30")),
                day_end=parse_clock(t.get("day_end", "22:00")),
                epoch_minutes=float(t.get("epoch_minutes", 30)),
            )
        if "vehicle" in d:
            kwargs["vehicle"] = VehicleSpec(**d["vehicle"])
        if "chargers" in d:
            kwargs["chargers"] = tuple(
                ChargerSpec(charger_id=int(c["charger_id"]),
                            location=(float(c["x"]), float(c["y"])),
                            rate_kwh_per_min=float(c.get("rate_kwh_per_min", 50.0 / 60.0)))
                for c in d["chargers"]
            )
        if "prices" in d:
            p = d["prices"]
            grid = kwargs.get("grid", TimeGrid())
            if "per_epoch" in p:
                per_epoch = tuple(float(x) for x in p["per_epoch"])
            else:
                per_epoch = (float(p.get("flat", 0.25)),) * grid.epoch_count
            kwargs["prices"] = PriceSchedule(per_epoch=per_epoch,
                                             fixed_cost=float(p.get("fixed_cost", 0.3)))
        if "demand" in d:
            dm = d["demand"]
            dc = DemandConfig()
            if "profile" in dm:
                dc.profile = tuple(tuple(float(x) for x in seg) for seg in dm["profile"])
            if "notice_min" in dm:
                dc.notice_min = float(dm["notice_min"])
            if "party_size" in dm:
                dc.party_size = int(dm["party_size"])
            kwargs["demand"] = dc
        if "exogenous" in d:
            ex = d["exogenous"]
            ec = ExogenousConfig()
            if "mean_sessions_per_charger" in ex:
                ec.mean_sessions_per_charger = float(ex["mean_sessions_per_charger"])
            if "duration_min" in ex:
                ec.duration_min = tuple(float(x) for x in ex["duration_min"])
            if "peak_factor" in ex:
                ec.peak_factor = float(ex["peak_factor"])
            kwargs["exogenous"] = ec
        return cls(**kwargs)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def charger_by_id(self, charger_id: int) -> ChargerSpec:
        for c in self.chargers:
            if c.charger_id == charger_id:
                return c
        raise ConfigError(f"unknown charger id {charger_id}")
