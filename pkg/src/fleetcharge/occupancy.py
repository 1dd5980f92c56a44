"""Charging-session data, occupancy series, and charger-availability prediction.

A charger's availability over a prediction horizon is summarised as a
session-boundary sequence: ordered times (g_1, ..., g_s) spanning the
horizon, with an occupied/free state per slot [g_r, g_{r+1}).  An arriving
vehicle's expected wait derives from the slot its arrival time lands in:
occupied slots imply waiting until the slot's predicted end, free slots
imply none.

Slots are half-open: an arrival exactly at an occupied slot's end is free,
an arrival exactly at its start waits.  Arrivals past the horizon end are
treated as free (no information beyond the horizon).

Prediction backends:

* ``AlwaysFreePredictor`` - no predictive information (drives policy OCP0);
* ``HistoricalProfilePredictor`` - thresholded per-charger, per-day-type,
  per-minute occupancy frequencies from historical sessions;
* ``NoisyOraclePredictor`` - reads a ground-truth schedule and flips each
  minute independently with a fixed probability (0.18 emulates the roughly
  82%-accurate reference predictor); flip probability 0 gives a perfect
  oracle.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime, date
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import FleetChargeError, TimeGrid

ChargerId = Hashable
MinuteInterval = tuple[float, float]


class PredictionError(FleetChargeError):
    """Bad predictor query (unknown charger, empty horizon, ...)."""


@dataclass(frozen=True)
class ChargingSessionRecord:
    """One normalized charging session on one charger."""

    charger_id: ChargerId
    start: datetime
    end: datetime
    energy_kwh: float | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise FleetChargeError("session end must be after start")


@dataclass
class IngestReport:
    accepted: int = 0
    merged: int = 0
    rejected: list[tuple[int, str]] = None

    def __post_init__(self):
        if self.rejected is None:
            self.rejected = []


def ingest_sessions(rows: Iterable[Mapping]) -> tuple[list[ChargingSessionRecord], IngestReport]:
    """Normalize raw session rows: parse, sort per charger, merge overlaps.

    Each row needs ``charger_id``, ``start`` and ``end`` (ISO-8601 strings or
    datetimes); ``energy_kwh`` is optional.  Malformed rows are rejected with
    a reason and counted in the report rather than raising.
    """
    report = IngestReport()
    parsed: list[ChargingSessionRecord] = []
    for idx, row in enumerate(rows):
        cid = row.get("charger_id")
        if cid is None or cid == "":
            report.rejected.append((idx, "missing charger_id"))
            continue
        try:
            start = _parse_ts(row["start"])
            end = _parse_ts(row["end"])
        except (KeyError, ValueError) as exc:
            report.rejected.append((idx, f"unparseable timestamp: {exc}"))
            continue
        if end <= start:
            report.rejected.append((idx, "end not after start"))
            continue
        energy = row.get("energy_kwh")
        if energy in (None, ""):
            energy = None
        else:
            try:
                energy = float(energy)
            except ValueError:
                report.rejected.append((idx, f"bad energy value {energy!r}"))
                continue
        parsed.append(ChargingSessionRecord(cid, start, end, energy))

    by_charger: dict[ChargerId, list[ChargingSessionRecord]] = {}
    for rec in parsed:
        by_charger.setdefault(rec.charger_id, []).append(rec)

    merged: list[ChargingSessionRecord] = []
    for cid in sorted(by_charger, key=str):
        sessions = sorted(by_charger[cid], key=lambda r: (r.start, r.end))
        current = sessions[0]
        for nxt in sessions[1:]:
            if nxt.start < current.end:      # strict overlap; abutting kept apart
                energy = (None if current.energy_kwh is None or nxt.energy_kwh is None
                          else current.energy_kwh + nxt.energy_kwh)
                current = ChargingSessionRecord(cid, current.start,
                                                max(current.end, nxt.end), energy)
                report.merged += 1
            else:
                merged.append(current)
                current = nxt
        merged.append(current)
    report.accepted = len(merged)
    return merged, report


def _parse_ts(value) -> datetime:
    if isinstance(value, datetime):
        return value
    return datetime.fromisoformat(str(value))


SESSION_COLUMNS = ("charger_id", "start", "end", "energy_kwh")


def read_sessions_csv(path: str | Path) -> tuple[list[ChargingSessionRecord], IngestReport]:
    """Delimited session file: header row, ISO-8601 local timestamps."""
    with open(path, newline="") as fh:
        return ingest_sessions(list(csv.DictReader(fh)))


def write_sessions_csv(records: Sequence[ChargingSessionRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SESSION_COLUMNS)
        for r in records:
            out.writerow([r.charger_id, r.start.isoformat(), r.end.isoformat(),
                          "" if r.energy_kwh is None else repr(r.energy_kwh)])


# ---------------------------------------------------------------------------
# Minute-domain occupancy series
# ---------------------------------------------------------------------------

def sessions_for_date(records: Sequence[ChargingSessionRecord], day: date
                      ) -> dict[ChargerId, list[MinuteInterval]]:
    """Per-charger minute intervals (from midnight) of sessions touching a date."""
    day_start = datetime.combine(day, datetime.min.time())
    out: dict[ChargerId, list[MinuteInterval]] = {}
    for rec in records:
        s = (rec.start - day_start).total_seconds() / 60.0
        e = (rec.end - day_start).total_seconds() / 60.0
        s, e = max(s, 0.0), min(e, 1440.0)
        if e > s:
            out.setdefault(rec.charger_id, []).append((s, e))
    for intervals in out.values():
        intervals.sort()
    return out


def occupied_at(intervals: Sequence[MinuteInterval], t: float) -> bool:
    """State at time t under the half-open [start, end) convention."""
    idx = bisect_right(intervals, (t, float("inf"))) - 1
    return idx >= 0 and intervals[idx][0] <= t < intervals[idx][1]


def occupancy_series(intervals: Sequence[MinuteInterval], start_min: float,
                     minutes: int) -> np.ndarray:
    """Per-minute boolean series sampled at whole-minute marks."""
    series = np.zeros(minutes, dtype=bool)
    for s, e in intervals:
        lo = max(0, math.ceil(s - start_min))
        hi = min(minutes, math.ceil(e - start_min))
        if lo < hi:
            series[lo:hi] = True
    return series


def intervals_from_series(series: np.ndarray, start_min: float) -> list[MinuteInterval]:
    """Maximal occupied runs of a per-minute series, as minute intervals."""
    out: list[MinuteInterval] = []
    run_start = None
    for k, state in enumerate(series):
        if state and run_start is None:
            run_start = k
        elif not state and run_start is not None:
            out.append((start_min + run_start, start_min + k))
            run_start = None
    if run_start is not None:
        out.append((start_min + run_start, start_min + len(series)))
    return out


# ---------------------------------------------------------------------------
# Boundary sequences and arrival windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionBoundarySequence:
    """Predicted start/end times of sessions on one charger over a horizon."""

    charger_id: ChargerId
    boundaries: tuple[float, ...]
    slot_occupied: tuple[bool, ...]

    def __post_init__(self):
        if len(self.boundaries) < 2:
            raise FleetChargeError("sequence needs at least two boundaries")
        if len(self.slot_occupied) != len(self.boundaries) - 1:
            raise FleetChargeError("need exactly one state per slot")
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise FleetChargeError("boundaries must be strictly increasing")

    @property
    def horizon_start(self) -> float:
        return self.boundaries[0]

    @property
    def horizon_end(self) -> float:
        return self.boundaries[-1]


@dataclass(frozen=True)
class ArrivalWindow:
    """Predicted occupied-slot bounds at a vehicle's arrival time."""

    a: float
    b: float
    occupied_on_arrival: bool

    def __post_init__(self):
        if self.a > self.b:
            raise FleetChargeError("window start must not exceed its end")

    @property
    def wait_from(self) -> float:
        """Implied waiting if arriving at time t: max(0, b - t) when occupied."""
        return self.b


def arrival_window(seq: SessionBoundarySequence, t: float) -> ArrivalWindow:
    """Locate the slot containing arrival time t and derive (a, b, occupied).

    Arrivals at or beyond the horizon end are clamped to the horizon end and
    treated as free.  Boundary arrivals belong to the later slot.
    """
    g_end = seq.horizon_end
    if t < seq.horizon_start:
        raise PredictionError(
            f"arrival {t} before horizon start {seq.horizon_start}")
    if t >= g_end:
        return ArrivalWindow(g_end, g_end, False)
    r = bisect_right(seq.boundaries, t) - 1
    if seq.slot_occupied[r]:
        return ArrivalWindow(seq.boundaries[r], seq.boundaries[r + 1], True)
    return ArrivalWindow(g_end, g_end, False)


def sequence_from_series(charger_id: ChargerId, start: float,
                         series: Sequence[bool]) -> SessionBoundarySequence:
    """Compress a per-minute occupancy vector into a boundary sequence."""
    if len(series) == 0:
        raise PredictionError("empty occupancy series")
    bounds = [float(start)]
    states: list[bool] = []
    current = bool(series[0])
    for k in range(1, len(series)):
        if bool(series[k]) != current:
            bounds.append(float(start + k))
            states.append(current)
            current = bool(series[k])
    bounds.append(float(start + len(series)))
    states.append(current)
    return SessionBoundarySequence(charger_id, tuple(bounds), tuple(states))


def predictor_accuracy(predicted: Sequence[bool], actual: Sequence[bool]) -> float:
    """Fraction of minutes on which the two binary series agree."""
    p = np.asarray(predicted, dtype=bool)
    a = np.asarray(actual, dtype=bool)
    if p.shape != a.shape:
        raise FleetChargeError(f"series length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise FleetChargeError("empty series")
    return float(np.mean(p == a))


# ---------------------------------------------------------------------------
# Prediction backends
# ---------------------------------------------------------------------------

class Predictor:
    """Read-only availability forecaster; safe for concurrent queries."""

    name = "base"

    def __init__(self, charger_ids: Sequence[ChargerId]):
        self._charger_ids = list(charger_ids)

    def _check(self, charger_id: ChargerId, horizon: float) -> None:
        if charger_id not in self._charger_ids:
            raise PredictionError(f"unknown charger {charger_id!r}")
        if horizon <= 0:
            raise PredictionError("horizon must be positive")

    def predict(self, charger_id: ChargerId, now: float,
                horizon: float = 60.0) -> SessionBoundarySequence:
        raise NotImplementedError


class AlwaysFreePredictor(Predictor):
    """Every charger forecast free for the whole horizon."""

    name = "always_free"

    def predict(self, charger_id, now, horizon=60.0):
        self._check(charger_id, horizon)
        return SessionBoundarySequence(charger_id, (now, now + horizon), (False,))


class NoisyOraclePredictor(Predictor):
    """Ground-truth schedule with independent per-minute state flips.

    The flip stream is keyed by (charger, absolute minute) via one cached
    seeded draw per charger, so predictions are deterministic and
    independent of query order.
    """

    name = "noisy_oracle"

    def __init__(self, truth: Mapping[ChargerId, Sequence[MinuteInterval]],
                 charger_ids: Sequence[ChargerId], flip_probability: float = 0.18,
                 seed: int = 0, max_minute: int = 2 * 1440):
        super().__init__(charger_ids)
        if not 0.0 <= flip_probability <= 1.0:
            raise PredictionError("flip probability must lie in [0, 1]")
        self.flip_probability = flip_probability
        self._truth = {cid: sorted(truth.get(cid, [])) for cid in charger_ids}
        self._max_minute = max_minute
        self._flips: dict[ChargerId, np.ndarray] = {}
        for idx, cid in enumerate(charger_ids):
            rng = np.random.default_rng(np.random.SeedSequence((seed, idx)))
            self._flips[cid] = rng.random(max_minute) < flip_probability

    def predict(self, charger_id, now, horizon=60.0):
        self._check(charger_id, horizon)
        minutes = int(round(horizon))
        intervals = self._truth[charger_id]
        flips = self._flips[charger_id]
        series = np.empty(minutes, dtype=bool)
        for k in range(minutes):
            t = now + k
            state = occupied_at(intervals, t)
            m = int(t)
            if 0 <= m < len(flips) and flips[m]:
                state = not state
            series[k] = state
        return sequence_from_series(charger_id, now, series)


def perfect_oracle(truth: Mapping[ChargerId, Sequence[MinuteInterval]],
                   charger_ids: Sequence[ChargerId]) -> NoisyOraclePredictor:
    """Oracle that transcribes the ground truth exactly."""
    return NoisyOraclePredictor(truth, charger_ids, flip_probability=0.0)


class HistoricalProfilePredictor(Predictor):
    """Per-minute occupancy frequencies from history, thresholded at 0.5.

    Frequencies are kept separately for weekdays and weekends; a minute is
    forecast occupied when its historical occupancy probability exceeds the
    threshold.  Days without sessions still count as observed free days.
    """

    name = "profile"

    def __init__(self, records: Sequence[ChargingSessionRecord],
                 charger_ids: Sequence[ChargerId], day_type: str = "weekday",
                 threshold: float = 0.5):
        super().__init__(charger_ids)
        if day_type not in ("weekday", "weekend"):
            raise PredictionError(f"unknown day type {day_type!r}")
        self.day_type = day_type
        self.threshold = threshold
        dates: dict[str, set[date]] = {"weekday": set(), "weekend": set()}
        for rec in records:
            dates[_day_type(rec.start.date())].add(rec.start.date())
            dates[_day_type(rec.end.date())].add(rec.end.date())
        counts = {cid: {dt: np.zeros(1440) for dt in dates} for cid in charger_ids}
        for rec in records:
            if rec.charger_id not in counts:
                continue
            for day in sorted({rec.start.date(), rec.end.date()}):
                intervals = sessions_for_date([rec], day).get(rec.charger_id, [])
                series = occupancy_series(intervals, 0.0, 1440)
                counts[rec.charger_id][_day_type(day)] += series
        self._profiles: dict[ChargerId, dict[str, np.ndarray]] = {}
        for cid in charger_ids:
            self._profiles[cid] = {}
            for dt, days in dates.items():
                n = max(1, len(days))
                self._profiles[cid][dt] = counts[cid][dt] / n

    def probability(self, charger_id: ChargerId, minute_of_day: int) -> float:
        return float(self._profiles[charger_id][self.day_type][minute_of_day % 1440])

    def predict(self, charger_id, now, horizon=60.0):
        self._check(charger_id, horizon)
        minutes = int(round(horizon))
        profile = self._profiles[charger_id][self.day_type]
        series = [profile[int(now + k) % 1440] > self.threshold for k in range(minutes)]
        return sequence_from_series(charger_id, now, series)


def _day_type(day: date) -> str:
    return "weekend" if day.weekday() >= 5 else "weekday"


# ---------------------------------------------------------------------------
# Synthetic background (non-fleet) charging demand
# ---------------------------------------------------------------------------

def generate_exogenous_sessions(seed: int, charger_ids: Sequence[ChargerId],
                                grid: TimeGrid, mean_sessions: float = 9.0,
                                duration_min: tuple[float, float] = (20.0, 50.0),
                                peak_factor: float = 2.0,
                                peaks: tuple[tuple[float, float], ...] = ((480.0, 570.0), (990.0, 1110.0)),
                                ) -> dict[ChargerId, list[MinuteInterval]]:
    """Seeded non-overlapping public charging sessions per charger.

    Session starts follow a piecewise-constant intensity that is
    ``peak_factor`` times higher inside the peak windows; durations are
    uniform over ``duration_min`` and rounded to whole minutes.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xEC0)))
    edges = sorted({grid.day_start, grid.day_end,
                    *(x for p in peaks for x in p if grid.day_start < x < grid.day_end)})
    segs = list(zip(edges, edges[1:]))
    weights = np.array([
        (peak_factor if any(p[0] <= s and e <= p[1] for p in peaks) else 1.0) * (e - s)
        for s, e in segs])
    weights = weights / weights.sum()

    out: dict[ChargerId, list[MinuteInterval]] = {}
    for cid in charger_ids:
        n = int(rng.poisson(mean_sessions))
        starts = []
        for _ in range(n):
            seg = segs[int(rng.choice(len(segs), p=weights))]
            starts.append(float(int(rng.uniform(seg[0], seg[1]))))
        sessions: list[MinuteInterval] = []
        last_end = -1.0
        for s in sorted(starts):
            if s < last_end:
                continue
            dur = float(int(rng.uniform(*duration_min)))
            e = min(s + dur, grid.day_end)
            if e > s:
                sessions.append((s, e))
                last_end = e
        out[cid] = sessions
    return out
