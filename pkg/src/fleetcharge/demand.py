"""Seeded synthetic ride-request generation.

Request arrival times follow a configurable piecewise-constant intensity
over the operating day (default: commuter-shaped, with morning and evening
peaks at 2.5x the off-peak rate); pickup and dropoff locations are uniform
over the rectangular service area.  Generation is a pure function of
(seed, config) so the same demand can replay across charging policies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DemandConfig, FleetChargeError, Location, TimeGrid


@dataclass(frozen=True)
class RideRequest:
    request_id: int
    arrival_time: float             # when the request is placed, minutes
    desired_pickup_time: float
    pickup: Location
    dropoff: Location
    party_size: int = 1

    def __post_init__(self):
        if self.arrival_time > self.desired_pickup_time:
            raise FleetChargeError("desired pickup precedes request arrival")
        if self.party_size < 1:
            raise FleetChargeError("party size must be at least 1")


@dataclass(frozen=True)
class ArrivalProfile:
    """Piecewise-constant arrival intensity; weights normalized to 1."""

    segments: tuple[tuple[float, float, float], ...]   # (start, end, weight)

    def __post_init__(self):
        if not self.segments:
            raise FleetChargeError("profile needs at least one segment")
        for s, e, w in self.segments:
            if e <= s or w < 0:
                raise FleetChargeError(f"bad profile segment ({s}, {e}, {w})")

    @property
    def masses(self) -> np.ndarray:
        raw = np.array([(e - s) * w for s, e, w in self.segments])
        total = raw.sum()
        if total <= 0:
            raise FleetChargeError("profile has zero total mass")
        return raw / total

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Inverse-CDF sampling of arrival minutes."""
        masses = self.masses
        seg_idx = rng.choice(len(self.segments), size=count, p=masses)
        u = rng.random(count)
        starts = np.array([s for s, _, _ in self.segments])
        ends = np.array([e for _, e, _ in self.segments])
        return starts[seg_idx] + u * (ends[seg_idx] - starts[seg_idx])


def generate(seed: int, count: int, config: DemandConfig, region: tuple[float, float],
             grid: TimeGrid | None = None) -> list[RideRequest]:
    """Seeded request set, sorted by arrival time."""
    if count < 0:
        raise FleetChargeError("count must be non-negative")
    if region[0] <= 0 or region[1] <= 0:
        raise FleetChargeError("degenerate service region")
    profile = ArrivalProfile(config.profile)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDE)))
    arrivals = np.sort(profile.sample(rng, count))
    if grid is not None:
        arrivals = np.clip(arrivals, grid.day_start, None)
    xs = rng.uniform(0.0, region[0], size=(count, 2))
    ys = rng.uniform(0.0, region[1], size=(count, 2))
    requests = []
    for k in range(count):
        requests.append(RideRequest(
            request_id=k,
            arrival_time=float(arrivals[k]),
            desired_pickup_time=float(arrivals[k] + config.notice_min),
            pickup=(float(xs[k, 0]), float(ys[k, 0])),
            dropoff=(float(xs[k, 1]), float(ys[k, 1])),
            party_size=config.party_size,
        ))
    return requests


REQUEST_COLUMNS = ("request_id", "arrival_min", "pickup_min", "pickup_x",
                   "pickup_y", "dropoff_x", "dropoff_y", "party_size")


def write_requests(requests: Sequence[RideRequest], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(REQUEST_COLUMNS)
        for r in requests:
            out.writerow([r.request_id, repr(r.arrival_time),
                          repr(r.desired_pickup_time),
                          repr(r.pickup[0]), repr(r.pickup[1]),
                          repr(r.dropoff[0]), repr(r.dropoff[1]), r.party_size])


def read_requests(path: str | Path) -> list[RideRequest]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(RideRequest(
                request_id=int(rec["request_id"]),
                arrival_time=float(rec["arrival_min"]),
                desired_pickup_time=float(rec["pickup_min"]),
                pickup=(float(rec["pickup_x"]), float(rec["pickup_y"])),
                dropoff=(float(rec["dropoff_x"]), float(rec["dropoff_y"])),
                party_size=int(rec["party_size"]),
            ))
    out.sort(key=lambda r: (r.arrival_time, r.request_id))
    return out
