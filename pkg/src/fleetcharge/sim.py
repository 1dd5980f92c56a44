"""Discrete-event simulation of one service day.

The event loop realises ride dispatch, the charging policies, and FIFO
queueing at public chargers.  Event kinds and their equal-time priority:

    LEAVE_CHARGER < ARRIVAL_AT_CHARGER < EPOCH_BOUNDARY < ARRIVAL_NEW_REQUEST

with ties broken by entity id and finally by scheduling order.  Vehicle
motion is continuous between events: positions and SOC advance lazily to
each event time, and between ride stops the vehicle travels straight lines
at constant speed.

Charging policies:

* ``NP``   - need-based: whenever an idle vehicle's SOC drops below 25% of
  capacity it heads to the nearest charger and charges to the allowed max.
* ``OCP0`` - planned charging epochs from the day-ahead schedule, chargers
  assigned each epoch by the online matching with no availability
  information (all chargers forecast free).
* ``OCP*`` - same, with the configured occupancy predictor feeding the
  matching's waiting-time terms.

Background (non-fleet) sessions are replayed onto the chargers as ordinary
FIFO occupants, so fleet vehicles can queue behind public demand and vice
versa.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Mapping, Sequence

import numpy as np

from .assignment import (
    AssignmentInstance,
    AssignmentSizeError,
    InfeasibleAssignmentError,
    solve_p2_exact,
    solve_p2_lagrangian,
)
from .core import ENERGY_EPS, FleetChargeError, Location, ScenarioConfig, travel
from .day_ahead import ChargingPlan
from .demand import RideRequest
from .occupancy import (
    AlwaysFreePredictor,
    HistoricalProfilePredictor,
    MinuteInterval,
    NoisyOraclePredictor,
    Predictor,
    arrival_window,
)

NP_THRESHOLD_FRACTION = 0.25


class SimulationFault(FleetChargeError):
    """Impossible physical state: indicates a bug, not a scenario outcome."""


class EventKind(IntEnum):
    # enum values encode the equal-time processing priority
    LEAVE_CHARGER = 0
    ARRIVAL_AT_CHARGER = 1
    EPOCH_BOUNDARY = 2
    ARRIVAL_NEW_REQUEST = 3


class VehicleStatus(str, Enum):
    AVAILABLE = "AVAILABLE"
    SERVING = "SERVING"
    GO_CHARGING = "GO_CHARGING"
    CHARGING = "CHARGING"
    WAITING_AT_CHARGER = "WAITING_AT_CHARGER"


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    entity: tuple            # (type_code, id) tie-break after kind priority
    payload: dict


@dataclass
class Stop:
    kind: str                # "pickup" | "dropoff"
    request: RideRequest
    location: Location
    arrive: float = 0.0
    service: float = 0.0     # pickups wait for the desired time


@dataclass
class ChargeVisit:
    vehicle_id: int
    charger_id: int
    depart_min: float
    arrive_min: float
    access_min: float
    wait_min: float
    charge_min: float
    energy_kwh: float
    soc_before: float
    soc_after: float
    target_kwh: float
    epoch: int
    cause: str               # "plan" | "need" | "emergency"


@dataclass
class SessionLog:
    charger_id: int
    start_min: float
    end_min: float
    vehicle_id: int | None   # None marks a background (non-fleet) session
    energy_kwh: float


@dataclass
class TraceRow:
    time: float
    kind: str
    vehicle_id: int | None
    charger_id: int | None
    request_id: int | None
    epoch: int | None
    soc_kwh: float | None


@dataclass
class RequestOutcome:
    request_id: int
    status: str              # "served" | "rejected"
    vehicle_id: int | None = None
    pickup_min: float | None = None
    dropoff_min: float | None = None
    decided_min: float | None = None


@dataclass
class SimResult:
    policy: str
    seed: int
    trace: list[TraceRow]
    visits: list[ChargeVisit]
    skipped_visits: list[tuple[float, int, str]]
    sessions: list[SessionLog]
    outcomes: dict[int, RequestOutcome]
    consumption: np.ndarray              # fleet x epochs, kWh driven per epoch
    vehicle_rows: list[dict]             # per-vehicle day summary
    soft_violations: list[tuple[float, int, float]]
    postponements: list[tuple[int, int]]
    warnings: list[str]

    @property
    def served(self) -> int:
        return sum(1 for o in self.outcomes.values() if o.status == "served")

    @property
    def rejected(self) -> int:
        return sum(1 for o in self.outcomes.values() if o.status == "rejected")


# ---------------------------------------------------------------------------
# Mutable entity state
# ---------------------------------------------------------------------------

@dataclass
class _Vehicle:
    vid: int
    pos: Location
    soc: float
    as_of: float
    seats: int
    speed: float
    mu: float
    stops: list[Stop] = field(default_factory=list)
    transit: tuple[float, Location, float, Location, int] | None = None
    passengers: int = 0
    km: float = 0.0
    charge_mark: bool = False        # scheduled to charge once empty
    pending_charger: int | None = None
    pending_target: float = 0.0
    pending_cause: str = "plan"
    depart_for_charger: float = 0.0
    session: tuple[float, float, int] | None = None   # (start, end, charger)
    below_reserve: bool = False

    def status(self, now: float) -> VehicleStatus:
        if self.session is not None:
            start, _, _ = self.session
            return (VehicleStatus.WAITING_AT_CHARGER if now < start
                    else VehicleStatus.CHARGING)
        if self.transit is not None or self.charge_mark:
            return VehicleStatus.GO_CHARGING
        if self.stops:
            return VehicleStatus.SERVING
        return VehicleStatus.AVAILABLE

    @property
    def idle_empty(self) -> bool:
        return (not self.stops and self.passengers == 0 and self.transit is None
                and self.session is None)

    def insertable(self) -> bool:
        return (self.transit is None and self.session is None
                and not self.charge_mark)


@dataclass
class _Charger:
    cid: int
    location: Location
    rate: float
    busy_until: float = 0.0


class _Engine:
    def __init__(self, config: ScenarioConfig, plans: Mapping[int, ChargingPlan],
                 requests: Sequence[RideRequest],
                 exogenous: Mapping[int, Sequence[MinuteInterval]],
                 predictor: Predictor | None):
        self.cfg = config
        self.grid = config.grid
        self.plans = dict(plans)
        self.predictor = predictor
        self.exogenous = {cid: list(exogenous.get(cid, [])) for cid in
                          (c.charger_id for c in config.chargers)}
        spec = config.vehicle
        self.vehicles = [
            _Vehicle(vid=k, pos=config.depot, soc=spec.e_init,
                     as_of=self.grid.day_start, seats=spec.seats,
                     speed=spec.speed_kmh, mu=spec.consumption_kwh_per_km)
            for k in range(config.fleet_size)]
        self.chargers = [_Charger(c.charger_id, c.location, c.rate_kwh_per_min,
                                  busy_until=self.grid.day_start)
                         for c in config.chargers]
        self.cidx = {c.cid: i for i, c in enumerate(self.chargers)}

        self.heap: list[tuple] = []
        self._seq = 0
        self.now = self.grid.day_start
        self.pending: list[RideRequest] = []
        self.carryover: dict[int, float] = {}

        self.trace: list[TraceRow] = []
        self.visits: list[ChargeVisit] = []
        self.skipped: list[tuple[float, int, str]] = []
        self.sessions: list[SessionLog] = []
        self.outcomes: dict[int, RequestOutcome] = {}
        self.consumption = np.zeros((config.fleet_size, self.grid.epoch_count))
        self.soft: list[tuple[float, int, float]] = []
        self.postponements: list[tuple[int, int]] = []
        self.warnings: list[str] = []

        for h in range(1, self.grid.epoch_count + 1):
            self._push(self.grid.epoch_start(h), EventKind.EPOCH_BOUNDARY,
                       (0, h), {"epoch": h})
        for r in requests:
            self._push(max(r.arrival_time, self.grid.day_start),
                       EventKind.ARRIVAL_NEW_REQUEST, (0, r.request_id),
                       {"request": r})
        for cid, sessions in self.exogenous.items():
            for n, (s, e) in enumerate(sessions):
                self._push(s, EventKind.ARRIVAL_AT_CHARGER, (1, cid, n),
                           {"exo": True, "charger": cid, "duration": e - s})

    # -- event plumbing ----------------------------------------------------

    def _push(self, time: float, kind: EventKind, entity: tuple, payload: dict):
        self._seq += 1
        heapq.heappush(self.heap, (time, int(kind), entity, self._seq,
                                   SimEvent(time, kind, entity, payload)))

    # -- vehicle motion ----------------------------------------------------

    def _burn(self, v: _Vehicle, km: float, t0: float, t1: float):
        """Consume energy for km driven over [t0, t1], attributed per epoch."""
        if km <= 0:
            return
        kwh = v.mu * km
        v.soc -= kwh
        v.km += km
        if v.soc < -1e-9:
            raise SimulationFault(f"vehicle {v.vid} SOC {v.soc} below zero at {t1}")
        if v.soc < self.cfg.vehicle.e_min - 1e-9 and not v.below_reserve:
            v.below_reserve = True
            self.soft.append((t1, v.vid, v.soc))
        elif v.soc >= self.cfg.vehicle.e_min and v.below_reserve:
            v.below_reserve = False
        self._attribute(v.vid, t0, t1, kwh)

    def _attribute(self, vid: int, t0: float, t1: float, kwh: float):
        g = self.grid
        lo = min(max(t0, g.day_start), g.day_end)
        hi = min(max(t1, g.day_start), g.day_end)
        if t1 > g.day_end:            # wrap-up driving counts toward the last epoch
            self.consumption[vid, g.epoch_count - 1] += kwh * (t1 - max(hi, t0)) / max(t1 - t0, 1e-12)
        if hi <= lo:
            if hi == g.day_start:
                self.consumption[vid, 0] += kwh
            return
        share = kwh / (t1 - t0) if t1 > t0 else 0.0
        h = g.epoch_of(lo)
        t = lo
        while t < hi - 1e-12:
            seg_end = min(hi, g.epoch_start(h) + g.epoch_minutes)
            self.consumption[vid, h - 1] += share * (seg_end - t)
            t = seg_end
            h += 1

    def _advance_vehicle(self, v: _Vehicle, t: float):
        if t <= v.as_of:
            return
        if v.transit is not None:
            t0, p0, t1, p1, _ = v.transit
            a, b = max(t0, v.as_of), min(t, t1)
            if b > a and t1 > t0:
                frac0 = (a - t0) / (t1 - t0)
                frac1 = (b - t0) / (t1 - t0)
                km_leg, _ = travel(p0, p1, v.speed)
                self._burn(v, km_leg * (frac1 - frac0), a, b)
                v.pos = (p0[0] + (p1[0] - p0[0]) * frac1,
                         p0[1] + (p1[1] - p0[1]) * frac1)
            v.as_of = t
            return
        while v.stops and t >= v.stops[0].service - 1e-12:
            stop = v.stops.pop(0)
            km_leg, _ = travel(v.pos, stop.location, v.speed)
            self._burn(v, km_leg, v.as_of, stop.arrive)
            v.pos = stop.location
            v.as_of = stop.service
            self._complete_stop(v, stop)
        if v.stops and t > v.as_of:
            stop = v.stops[0]
            if t >= stop.arrive:
                km_leg, _ = travel(v.pos, stop.location, v.speed)
                self._burn(v, km_leg, v.as_of, stop.arrive)
                v.pos = stop.location
            else:
                t0 = v.as_of
                km_leg, leg_min = travel(v.pos, stop.location, v.speed)
                frac = (t - t0) / (stop.arrive - t0)
                self._burn(v, km_leg * frac, t0, t)
                v.pos = (v.pos[0] + (stop.location[0] - v.pos[0]) * frac,
                         v.pos[1] + (stop.location[1] - v.pos[1]) * frac)
        v.as_of = max(v.as_of, t)

    def _complete_stop(self, v: _Vehicle, stop: Stop):
        r = stop.request
        if stop.kind == "pickup":
            v.passengers += r.party_size
            if v.passengers > v.seats:
                raise SimulationFault(f"vehicle {v.vid} over capacity")
            self.outcomes[r.request_id].pickup_min = stop.service
        else:
            v.passengers -= r.party_size
            out = self.outcomes[r.request_id]
            out.dropoff_min = stop.service
            out.status = "served"

    def _advance_all(self, t: float):
        for v in self.vehicles:
            self._advance_vehicle(v, t)
        self.now = t

    # -- route planning ----------------------------------------------------

    def _schedule_stops(self, v: _Vehicle, stops: list[Stop]) -> list[Stop]:
        t, pos = v.as_of, v.pos
        planned = []
        for s in stops:
            _, leg_min = travel(pos, s.location, v.speed)
            arrive = t + leg_min
            service = max(arrive, s.request.desired_pickup_time) if s.kind == "pickup" else arrive
            planned.append(Stop(s.kind, s.request, s.location, arrive, service))
            t, pos = service, s.location
        return planned

    def _route_km(self, v: _Vehicle, stops: Sequence[Stop]) -> float:
        total, pos = 0.0, v.pos
        for s in stops:
            km, _ = travel(pos, s.location, v.speed)
            total += km
            pos = s.location
        return total

    def _try_insert(self, r: RideRequest) -> bool:
        best = None
        pu = Stop("pickup", r, r.pickup)
        do = Stop("dropoff", r, r.dropoff)
        for v in self.vehicles:
            if not v.insertable():
                continue
            base_km = self._route_km(v, v.stops)
            n = len(v.stops)
            for p in range(n + 1):
                for q in range(p, n + 1):
                    cand = v.stops[:p] + [pu] + v.stops[p:q] + [do] + v.stops[q:]
                    pax = v.passengers
                    ok = True
                    for s in cand:
                        pax += s.request.party_size if s.kind == "pickup" else -s.request.party_size
                        if pax > v.seats:
                            ok = False
                            break
                    if not ok:
                        continue
                    km = self._route_km(v, cand)
                    if (v.soc - v.mu * km
                            < self.cfg.vehicle.e_min + self.cfg.route_reserve_kwh - ENERGY_EPS):
                        continue
                    added = km - base_km
                    key = (added, v.vid, p, q)
                    if best is None or key < best[0]:
                        best = (key, v, cand)
        if best is None:
            return False
        _, v, cand = best
        v.stops = self._schedule_stops(v, cand)
        self.outcomes[r.request_id].vehicle_id = v.vid
        return True

    # -- charging ----------------------------------------------------------

    def _nearest_charger(self, pos: Location) -> _Charger:
        return min(self.chargers,
                   key=lambda c: (travel(pos, c.location, 1.0)[0], c.cid))

    def _dispatch_to_charger(self, v: _Vehicle, t: float, charger: _Charger,
                             target: float, cause: str):
        _, leg_min = travel(v.pos, charger.location, v.speed)
        v.transit = (t, v.pos, t + leg_min, charger.location, charger.cid)
        v.charge_mark = False
        v.pending_charger = None
        v.pending_target = target
        v.pending_cause = cause
        v.depart_for_charger = t
        self._push(t + leg_min, EventKind.ARRIVAL_AT_CHARGER, (0, v.vid),
                   {"vehicle": v.vid, "charger": charger.cid, "target": target,
                    "cause": cause})

    def _emergency_target(self, v: _Vehicle) -> float:
        """Pull the next planned charge forward instead of filling up.

        An off-plan visit charges to the vehicle's next scheduled post-charge
        level (so the plan's later epoch is skipped as already satisfied), or
        to a quarter of the usable band when nothing is scheduled.
        """
        spec = self.cfg.vehicle
        fallback = min(spec.e_max, max(spec.e_min + 0.25 * (spec.e_max - spec.e_min),
                                       v.soc + 0.25 * (spec.e_max - spec.e_min)))
        plan = self.plans.get(v.vid)
        if plan is None:
            return fallback
        h_now = self._epoch_or_last(self.now)
        for h in range(h_now, plan.epochs + 1):
            if plan.y[h - 1] == 1:
                return min(spec.e_max, max(plan.target_after_charge(h), fallback))
        return fallback

    def _mark_for_charging(self, v: _Vehicle, t: float, charger_id: int,
                           target: float, cause: str):
        if v.idle_empty:
            self._dispatch_to_charger(v, t, self.chargers[self.cidx[charger_id]],
                                      target, cause)
        else:
            v.charge_mark = True
            v.pending_charger = charger_id
            v.pending_target = target
            v.pending_cause = cause

    def _handle_arrival_at_charger(self, ev: SimEvent):
        if ev.payload.get("exo"):
            charger = self.chargers[self.cidx[ev.payload["charger"]]]
            start = max(ev.time, charger.busy_until)
            end = start + ev.payload["duration"]
            charger.busy_until = end
            self.sessions.append(SessionLog(charger.cid, start, end, None, 0.0))
            self._push(end, EventKind.LEAVE_CHARGER, (1, charger.cid),
                       {"exo": True, "charger": charger.cid})
            self._trace(ev, charger_id=charger.cid)
            return
        v = self.vehicles[ev.payload["vehicle"]]
        charger = self.chargers[self.cidx[ev.payload["charger"]]]
        v.transit = None
        v.pos = charger.location
        target = ev.payload["target"]
        if v.soc >= target - ENERGY_EPS:
            self.skipped.append((ev.time, v.vid, "target already met on arrival"))
            self._trace(ev, vehicle=v)
            return
        wait = max(0.0, charger.busy_until - ev.time)
        charge_min = (target - v.soc) / charger.rate
        start = ev.time + wait
        end = start + charge_min
        charger.busy_until = end
        v.session = (start, end, charger.cid)
        energy = target - v.soc
        self.sessions.append(SessionLog(charger.cid, start, end, v.vid, energy))
        self.visits.append(ChargeVisit(
            vehicle_id=v.vid, charger_id=charger.cid,
            depart_min=v.depart_for_charger, arrive_min=ev.time,
            access_min=ev.time - v.depart_for_charger, wait_min=wait,
            charge_min=charge_min, energy_kwh=energy, soc_before=v.soc,
            soc_after=target, target_kwh=target,
            epoch=self._epoch_or_last(v.depart_for_charger),
            cause=ev.payload["cause"]))
        self._push(end, EventKind.LEAVE_CHARGER, (0, v.vid),
                   {"vehicle": v.vid, "charger": charger.cid, "target": target})
        self._trace(ev, vehicle=v)

    def _epoch_or_last(self, t: float) -> int:
        g = self.grid
        if t >= g.day_end:
            return g.epoch_count
        if t < g.day_start:
            return 1
        return g.epoch_of(t)

    def _handle_leave_charger(self, ev: SimEvent):
        if ev.payload.get("exo"):
            self._trace(ev, charger_id=ev.payload["charger"])
            return
        v = self.vehicles[ev.payload["vehicle"]]
        v.soc = min(ev.payload["target"], self.cfg.vehicle.e_max)
        v.session = None
        v.below_reserve = False
        self._trace(ev, vehicle=v)

    # -- epoch boundary (planned charging) ----------------------------------

    def _handle_epoch_boundary(self, ev: SimEvent):
        h = ev.payload["epoch"]
        self._trace(ev)
        if self.cfg.policy == "NP":
            return
        candidates: dict[int, float] = {}
        for vid, plan in self.plans.items():
            if h <= plan.epochs and plan.y[h - 1] == 1:
                candidates[vid] = plan.target_after_charge(h)
        for vid, target in self.carryover.items():
            candidates.setdefault(vid, target)
        self.carryover = {}

        ready: dict[int, float] = {}
        for vid in sorted(candidates):
            v = self.vehicles[vid]
            if v.session is not None or v.transit is not None or v.charge_mark:
                self.skipped.append((ev.time, vid, "already charging-bound"))
                continue
            if v.soc >= candidates[vid] - ENERGY_EPS:
                self.skipped.append((ev.time, vid, "SOC already at planned target"))
                continue
            ready[vid] = candidates[vid]

        if not ready:
            return
        if len(ready) > len(self.chargers):
            by_priority = sorted(ready, key=lambda vid: (self.vehicles[vid].soc, vid))
            for vid in by_priority[len(self.chargers):]:
                self.carryover[vid] = ready.pop(vid)
                self.postponements.append((h, vid))

        inst, id_list = self._build_instance(list(ready.items()), ev.time)
        if inst is None:
            # _build_instance already carried the dropped vehicles over
            self.warnings.append(f"epoch {h}: no reserve-feasible pairs, all postponed")
            return
        try:
            if (inst.n_vehicles <= self.cfg.p2_exact_limit
                    and inst.n_chargers <= self.cfg.p2_exact_limit):
                sol = solve_p2_exact(inst)
            else:
                sol = solve_p2_lagrangian(inst)
        except (InfeasibleAssignmentError, AssignmentSizeError) as exc:
            for vid in ready:
                self.carryover[vid] = ready[vid]
                self.postponements.append((h, vid))
            self.warnings.append(f"epoch {h}: assignment infeasible ({exc}); postponed")
            return
        for i, j in sol.pairs():
            vid = id_list[i]
            self._mark_for_charging(self.vehicles[vid], ev.time,
                                    inst.charger_ids[j], ready[vid], "plan")

    def _build_instance(self, scheduled: list[tuple[int, float]], now: float):
        """Assignment instance for (vehicle, target) pairs; drops vehicles
        with no reserve-feasible charger (they are postponed)."""
        spec = self.cfg.vehicle
        predictions = {}
        if self.predictor is not None:
            for c in self.chargers:
                predictions[c.cid] = self.predictor.predict(
                    c.cid, now, self.cfg.prediction_horizon_min)
        rows = []
        for vid, target in scheduled:
            v = self.vehicles[vid]
            feasible = False
            row_t, row_d, row_a, row_b = [], [], [], []
            for c in self.chargers:
                km, minutes = travel(v.pos, c.location, v.speed)
                if self.predictor is not None:
                    w = arrival_window(predictions[c.cid], now + minutes)
                    a, b = w.a - now, w.b - now
                else:
                    a = b = self.cfg.prediction_horizon_min
                row_t.append(minutes)
                row_d.append(km)
                row_a.append(a)
                row_b.append(b)
                if v.soc - v.mu * km >= spec.e_min - ENERGY_EPS:
                    feasible = True
            if feasible:
                rows.append((vid, target, row_t, row_d, row_a, row_b))
            else:
                self.carryover[vid] = target
                self.postponements.append((self._epoch_or_last(now), vid))
        if not rows:
            return None, []
        id_list = [r[0] for r in rows]
        inst = AssignmentInstance(
            vehicle_ids=tuple(id_list),
            charger_ids=tuple(c.cid for c in self.chargers),
            travel_min=np.array([r[2] for r in rows]),
            dist_km=np.array([r[3] for r in rows]),
            e=np.array([self.vehicles[r[0]].soc for r in rows]),
            e_star=np.array([r[1] for r in rows]),
            window_a=np.array([r[4] for r in rows]),
            window_b=np.array([r[5] for r in rows]),
            rates=np.array([c.rate for c in self.chargers]),
            consumption_kwh_per_km=spec.consumption_kwh_per_km,
            theta1=self.cfg.theta1, theta2=self.cfg.theta2,
            e_min=spec.e_min, big_m1=self.cfg.big_m1, big_m2=self.cfg.big_m2)
        return inst, id_list

    # -- requests ------------------------------------------------------------

    def _handle_new_request(self, ev: SimEvent):
        r: RideRequest = ev.payload["request"]
        self.outcomes[r.request_id] = RequestOutcome(r.request_id, "pending")
        self.pending.append(r)
        self._trace(ev, request_id=r.request_id)

    def _retry_pending(self, t: float):
        still = []
        for r in self.pending:
            if t > r.desired_pickup_time + self.cfg.rejection_deadline_min:
                out = self.outcomes[r.request_id]
                out.status = "rejected"
                out.decided_min = t
            elif self._try_insert(r):
                pass
            else:
                still.append(r)
        self.pending = still

    # -- post-event hooks ----------------------------------------------------

    def _hooks(self, t: float):
        spec = self.cfg.vehicle
        for v in self.vehicles:
            if not v.idle_empty:
                continue
            if v.charge_mark and v.pending_charger is not None:
                self._dispatch_to_charger(v, t, self.chargers[self.cidx[v.pending_charger]],
                                          v.pending_target, v.pending_cause)
            elif t < self.grid.day_end:
                if (self.cfg.policy == "NP"
                        and v.soc < NP_THRESHOLD_FRACTION * spec.battery_kwh):
                    self._mark_for_charging(v, t, self._nearest_charger(v.pos).cid,
                                            spec.e_max, "need")
                elif self.cfg.policy != "NP":
                    # off-plan safety net: fires exactly when the assignment
                    # stage would drop the vehicle (no reserve-feasible charger
                    # left), so nobody strands idle below the reserve line
                    nearest = self._nearest_charger(v.pos)
                    km, _ = travel(v.pos, nearest.location, v.speed)
                    if v.soc - v.mu * km < spec.e_min - ENERGY_EPS:
                        self._mark_for_charging(v, t, nearest.cid,
                                                self._emergency_target(v),
                                                "emergency")
        self._retry_pending(t)

    # -- trace -----------------------------------------------------------------

    def _trace(self, ev: SimEvent, vehicle: _Vehicle | None = None,
               charger_id: int | None = None, request_id: int | None = None):
        if vehicle is not None:
            self.trace.append(TraceRow(ev.time, ev.kind.name, vehicle.vid,
                                       ev.payload.get("charger"), None,
                                       None, vehicle.soc))
        else:
            self.trace.append(TraceRow(ev.time, ev.kind.name, None, charger_id,
                                       request_id, ev.payload.get("epoch"), None))

    # -- main loop ---------------------------------------------------------------

    def run(self) -> SimResult:
        e_init = self.cfg.vehicle.e_init
        while True:
            if self.heap:
                _, _, _, _, ev = heapq.heappop(self.heap)
                self._advance_all(ev.time)
                if ev.kind == EventKind.LEAVE_CHARGER:
                    self._handle_leave_charger(ev)
                elif ev.kind == EventKind.ARRIVAL_AT_CHARGER:
                    self._handle_arrival_at_charger(ev)
                elif ev.kind == EventKind.EPOCH_BOUNDARY:
                    self._handle_epoch_boundary(ev)
                else:
                    self._handle_new_request(ev)
                self._hooks(ev.time)
                continue
            # queue drained: let vehicles finish tours, then retry or reject
            next_times = [v.stops[0].service for v in self.vehicles if v.stops]
            if next_times:
                t = min(next_times)
                self._advance_all(t)
                self._hooks(t)
                continue
            if self.pending:
                t = max(self.now, max(r.desired_pickup_time +
                                      self.cfg.rejection_deadline_min
                                      for r in self.pending))
                self._advance_all(t)
                self._retry_pending(t)
                continue
            break

        # every vehicle returns to its depot after its final dropoff
        for v in self.vehicles:
            km, minutes = travel(v.pos, self.cfg.depot, v.speed)
            if km > 0:
                self._burn(v, km, v.as_of, v.as_of + minutes)
                v.pos = self.cfg.depot
                v.as_of += minutes

        vehicle_rows = [{
            "vehicle_id": v.vid, "e_init": e_init, "e_final": v.soc,
            "km": v.km,
            "kwh_charged": sum(x.energy_kwh for x in self.visits
                               if x.vehicle_id == v.vid),
        } for v in self.vehicles]
        return SimResult(
            policy=self.cfg.policy, seed=self.cfg.seed, trace=self.trace,
            visits=self.visits, skipped_visits=self.skipped,
            sessions=sorted(self.sessions, key=lambda s: (s.charger_id, s.start_min)),
            outcomes=self.outcomes, consumption=self.consumption,
            vehicle_rows=vehicle_rows, soft_violations=self.soft,
            postponements=self.postponements, warnings=self.warnings)


def build_predictor(config: ScenarioConfig,
                    exogenous: Mapping[int, Sequence[MinuteInterval]],
                    history=None) -> Predictor | None:
    """Predictor used by the epoch-boundary assignment, or None for NP."""
    charger_ids = [c.charger_id for c in config.chargers]
    if config.policy == "NP":
        return None
    if config.policy == "OCP0":
        return AlwaysFreePredictor(charger_ids)
    name = config.predictor
    if name == "always_free":
        return AlwaysFreePredictor(charger_ids)
    if name == "noisy_oracle":
        return NoisyOraclePredictor(exogenous, charger_ids,
                                    flip_probability=config.flip_probability,
                                    seed=config.seed)
    if name == "perfect_oracle":
        return NoisyOraclePredictor(exogenous, charger_ids,
                                    flip_probability=0.0, seed=config.seed)
    if name == "profile":
        if history is None:
            raise FleetChargeError("profile predictor needs historical sessions")
        return HistoricalProfilePredictor(history, charger_ids)
    raise FleetChargeError(f"unknown predictor {name!r}")


def run_day(config: ScenarioConfig, plans: Mapping[int, ChargingPlan],
            requests: Sequence[RideRequest],
            exogenous: Mapping[int, Sequence[MinuteInterval]] | None = None,
            history=None) -> SimResult:
    """Simulate one full service day under the configured charging policy.

    ``plans`` may be empty for the need-based policy.  ``exogenous`` holds
    background public sessions as per-charger minute intervals; the same
    schedule feeds the oracle predictors.
    """
    exogenous = exogenous or {}
    predictor = build_predictor(config, exogenous, history)
    engine = _Engine(config, plans, requests, exogenous, predictor)
    return engine.run()
