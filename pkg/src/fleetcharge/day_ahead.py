"""Day-ahead charge scheduling: one cost-minimal charging plan per vehicle.

Each vehicle independently decides, for every epoch of the operating day,
whether to charge and how much, so that its state of charge stays inside
[e_min, e_max] while covering the expected per-epoch consumption, at minimal
energy cost plus a fixed cost per recharge operation.  The fleet problem
decomposes exactly by vehicle, so the fleet solver is a loop.

Two independent solution routes are provided:

* ``solve_p1_vehicle`` - dynamic program over epochs with the charge amount
  restricted to multiples of ``soc_step`` kWh.  States live on a lattice
  anchored at the vehicle's initial SOC, so all feasibility bounds are
  evaluated exactly; the only approximation is the amount granularity.
* ``p1_oracle`` - exhaustive enumeration of charge-epoch subsets with a
  greedy amount allocation, exact for small horizons.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ENERGY_EPS, FleetChargeError, PriceSchedule

TIE_EPS = 1e-9          # treat plan costs within this as equal
_SNAP = 1e-7            # lattice index snapping tolerance (in grid units)


class InfeasibleProfileError(FleetChargeError):
    """No charging schedule can cover the given consumption profile."""

    def __init__(self, epoch: int, message: str, vehicle_id=None):
        self.epoch = epoch
        self.vehicle_id = vehicle_id
        super().__init__(message)


class GridResolutionError(FleetChargeError):
    """Feasible in continuous amounts but not at the configured soc_step."""


class OracleSizeError(FleetChargeError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class ChargeLimits:
    """SOC bounds and per-epoch charge cap shared by solver and checker."""

    e_min: float
    e_max: float
    u_max: float

    def __post_init__(self):
        if not self.e_min < self.e_max:
            raise FleetChargeError("require e_min < e_max")
        if self.u_max <= 0:
            raise FleetChargeError("u_max must be positive")


@dataclass(frozen=True)
class VehicleDayProfile:
    """Expected per-epoch consumption of one vehicle plus its starting SOC."""

    vehicle_id: int
    e_init: float
    d: tuple[float, ...]

    def __post_init__(self):
        if any(x < 0 for x in self.d):
            raise FleetChargeError("consumption entries must be non-negative")


@dataclass(frozen=True)
class ChargingPlan:
    """Planned charging decisions and the implied SOC trajectory.

    ``e`` has one more entry than ``y``/``u``: e[h] is the SOC at the
    beginning of epoch h+1 (0-based), e[-1] the end-of-day level.
    """

    vehicle_id: int
    y: tuple[int, ...]
    u: tuple[float, ...]
    e: tuple[float, ...]
    cost: float

    @property
    def epochs(self) -> int:
        return len(self.y)

    def target_after_charge(self, h: int) -> float:
        """Planned post-charge SOC for 1-based epoch h (e_h + u_h)."""
        return self.e[h - 1] + self.u[h - 1]


def plan_cost(y: Sequence[int], u: Sequence[float], prices: PriceSchedule) -> float:
    return float(sum(prices.per_epoch[h] * u[h] + prices.fixed_cost * y[h]
                     for h in range(len(y))))


def _precheck(profile: VehicleDayProfile, limits: ChargeLimits) -> None:
    """Continuous-amount feasibility check; raises at the first bad epoch."""
    e = profile.e_init
    if e < limits.e_min - ENERGY_EPS or e > limits.e_max + ENERGY_EPS:
        raise InfeasibleProfileError(
            1, f"initial SOC {e} outside [{limits.e_min}, {limits.e_max}]",
            profile.vehicle_id)
    reach = e   # maximum achievable SOC at the current epoch start
    for h, dh in enumerate(profile.d, start=1):
        if reach + limits.u_max < dh + limits.e_min - ENERGY_EPS:
            raise InfeasibleProfileError(
                h,
                f"epoch {h}: demand {dh} kWh unreachable even charging "
                f"u_max={limits.u_max} every epoch (max SOC {reach})",
                profile.vehicle_id)
        reach = min(limits.e_max, reach + limits.u_max - dh)


def check_plan(plan: ChargingPlan, profile: VehicleDayProfile,
               prices: PriceSchedule, limits: ChargeLimits,
               tol: float = ENERGY_EPS) -> list[str]:
    """Literal re-check of every scheduling constraint; empty list iff feasible."""
    H = len(profile.d)
    v: list[str] = []
    if len(plan.y) != H or len(plan.u) != H or len(plan.e) != H + 1:
        return [f"shape mismatch: horizon {H}, plan ({len(plan.y)}, {len(plan.u)}, {len(plan.e)})"]
    if abs(plan.e[0] - profile.e_init) > tol:
        v.append(f"initial SOC {plan.e[0]} != e_init {profile.e_init}")
    for h in range(H):
        eh, uh, yh, dh = plan.e[h], plan.u[h], plan.y[h], profile.d[h]
        if yh not in (0, 1):
            v.append(f"epoch {h + 1}: y={yh} not binary")
        if abs(plan.e[h + 1] - (eh + uh - dh)) > tol:
            v.append(f"epoch {h + 1}: SOC balance off by "
                     f"{plan.e[h + 1] - (eh + uh - dh):.3g}")
        if eh + uh < dh + limits.e_min - tol:
            v.append(f"epoch {h + 1}: post-charge SOC {eh + uh} below "
                     f"demand+reserve {dh + limits.e_min}")
        if uh > limits.u_max * yh + tol:
            v.append(f"epoch {h + 1}: u={uh} exceeds cap {limits.u_max}*y")
        if uh < -tol or uh > limits.u_max + tol:
            v.append(f"epoch {h + 1}: u={uh} outside [0, {limits.u_max}]")
    for h in range(H + 1):
        if plan.e[h] < limits.e_min - tol or plan.e[h] > limits.e_max + tol:
            v.append(f"state {h}: SOC {plan.e[h]} outside "
                     f"[{limits.e_min}, {limits.e_max}]")
    expected = plan_cost(plan.y, plan.u, prices)
    if abs(plan.cost - expected) > tol:
        v.append(f"cost {plan.cost} != recomputed {expected}")
    return v


# ---------------------------------------------------------------------------
# Dynamic-programming solver
# ---------------------------------------------------------------------------

def solve_p1_vehicle(profile: VehicleDayProfile, prices: PriceSchedule,
                     limits: ChargeLimits, soc_step: float = 0.1) -> ChargingPlan:
    """Cost-minimal charging plan for one vehicle.

    Charge amounts are restricted to multiples of ``soc_step``; every SOC
    bound is evaluated exactly on the lattice e_init - sum(d) + n*soc_step.
    Ties are broken toward fewer charging epochs, then charging as early
    (and as much per early epoch) as possible.
    """
    H = len(profile.d)
    _precheck(profile, limits)
    if H == 0:
        return ChargingPlan(profile.vehicle_id, (), (), (profile.e_init,), 0.0)
    if len(prices.per_epoch) < H:
        raise FleetChargeError("price schedule shorter than the horizon")

    delta = soc_step
    mu = int(math.floor(limits.u_max / delta + _SNAP))   # units chargeable per epoch
    if mu < 1:
        raise GridResolutionError(f"soc_step {delta} exceeds u_max {limits.u_max}")
    cumd = np.concatenate(([0.0], np.cumsum(np.asarray(profile.d, dtype=float))))

    # state at epoch h (1-based): total units charged so far; SOC is
    # e_init - cumd[h-1] + n*delta.  Window of lattice states kept per epoch.
    def window(h: int) -> tuple[int, int]:
        base = profile.e_init - cumd[h - 1]
        lo = max(0, int(math.ceil((limits.e_min - base) / delta - _SNAP)))
        hi = int(math.floor((limits.e_max - base) / delta + _SNAP))
        return lo, hi

    lows = [0] * (H + 2)
    highs = [0] * (H + 2)
    for h in range(1, H + 2):
        lows[h], highs[h] = window(h)

    INF = float("inf")
    money = [None] * (H + 2)   # cost-to-go per state window
    count = [None] * (H + 2)   # charging-epoch count among money-optimal plans
    wlast = highs[H + 1] - lows[H + 1] + 1
    if wlast <= 0:
        raise GridResolutionError("no lattice state satisfies the terminal SOC bounds")
    money[H + 1] = np.zeros(wlast)
    count[H + 1] = np.zeros(wlast)

    for h in range(H, 0, -1):
        lo, hi = lows[h], highs[h]
        w = hi - lo + 1
        if w <= 0:
            raise GridResolutionError(f"no lattice state inside SOC bounds at epoch {h}")
        nlo, nhi = lows[h + 1], highs[h + 1]
        wn = nhi - nlo + 1
        pad = np.full(wn + 2 * (mu + 1), INF)
        pad[mu + 1:mu + 1 + wn] = money[h + 1]
        padc = np.full(wn + 2 * (mu + 1), INF)
        padc[mu + 1:mu + 1 + wn] = count[h + 1]

        price = prices.per_epoch[h - 1]
        cand = np.empty((mu + 1, w))
        candc = np.empty((mu + 1, w))
        for m in range(mu + 1):
            # state n=lo+i moves to n+m; index into padded next-window array
            off = lo - nlo + m + mu + 1
            cand[m] = pad[off:off + w]
            candc[m] = padc[off:off + w]
            if m > 0:
                cand[m] += price * m * delta + prices.fixed_cost
                candc[m] += 1.0
        best = cand.min(axis=0)
        if not np.isfinite(best).any():
            raise GridResolutionError(f"no feasible lattice transition at epoch {h}")
        tied = cand <= best + TIE_EPS
        candc[~tied] = INF
        money[h] = best
        count[h] = candc.min(axis=0)

    if not (lows[1] <= 0 <= highs[1]) or not np.isfinite(money[1][0 - lows[1]]):
        raise GridResolutionError(
            "feasible in continuous amounts but not at the configured soc_step")

    # forward reconstruction: among (cost, count)-optimal actions prefer
    # charging now, and then the largest amount, so charge lands early.
    n = 0
    y: list[int] = []
    u: list[float] = []
    for h in range(1, H + 1):
        price = prices.per_epoch[h - 1]
        nlo, nhi = lows[h + 1], highs[h + 1]
        options = []
        for m in range(mu + 1):
            p = n + m
            if p < nlo or p > nhi:
                continue
            cost_m = 0.0 if m == 0 else price * m * delta + prices.fixed_cost
            options.append((m, cost_m + money[h + 1][p - nlo],
                            (1 if m else 0) + count[h + 1][p - nlo]))
        best_money = min(o[1] for o in options)
        options = [o for o in options if o[1] <= best_money + TIE_EPS]
        best_count = min(o[2] for o in options)
        options = [o for o in options if o[2] <= best_count + TIE_EPS]
        m = max(o[0] for o in options)
        y.append(1 if m else 0)
        u.append(m * delta)
        n += m

    e = [profile.e_init]
    for h in range(H):
        e.append(e[-1] + u[h] - profile.d[h])
    return ChargingPlan(profile.vehicle_id, tuple(y), tuple(u), tuple(e),
                        plan_cost(y, u, prices))


def solve_p1_fleet(profiles: Sequence[VehicleDayProfile], prices: PriceSchedule,
                   limits: ChargeLimits, soc_step: float = 0.1) -> list[ChargingPlan]:
    """Per-vehicle solves; the scheduling MILP has no cross-vehicle coupling."""
    plans = []
    for profile in profiles:
        try:
            plans.append(solve_p1_vehicle(profile, prices, limits, soc_step))
        except InfeasibleProfileError as exc:
            raise InfeasibleProfileError(
                exc.epoch, f"vehicle {profile.vehicle_id}: {exc}",
                profile.vehicle_id) from exc
    return plans


def fleet_cost(plans: Sequence[ChargingPlan]) -> float:
    return float(sum(p.cost for p in plans))


# ---------------------------------------------------------------------------
# Enumeration oracle
# ---------------------------------------------------------------------------

def _greedy_amounts(open_epochs: tuple[int, ...], profile: VehicleDayProfile,
                    prices: PriceSchedule, limits: ChargeLimits) -> list[float] | None:
    """Min-cost amounts for a fixed set of charge epochs, or None if infeasible.

    Walks the cumulative-charge requirements in time order and serves each
    shortfall from the cheapest open epoch that still has per-epoch capacity
    and cumulative (battery-cap) headroom.
    """
    H = len(profile.d)
    cumd = list(itertools.accumulate(profile.d))
    req = [limits.e_min + cumd[h] - profile.e_init for h in range(H)]
    cap = [limits.e_max + cumd[h] - profile.e_init for h in range(H)]
    u = [0.0] * H
    cum = [0.0] * H

    open_sorted = sorted(open_epochs, key=lambda t: (prices.per_epoch[t], t))
    for h in range(H):
        while cum[h] < req[h] - ENERGY_EPS:
            shortfall = req[h] - cum[h]
            placed = False
            for tau in open_sorted:
                if tau > h or u[tau] >= limits.u_max - ENERGY_EPS:
                    continue
                headroom = min(cap[k] - cum[k] for k in range(tau, H))
                if headroom <= ENERGY_EPS:
                    continue
                amount = min(shortfall, limits.u_max - u[tau], headroom)
                u[tau] += amount
                for k in range(tau, H):
                    cum[k] += amount
                placed = True
                break
            if not placed:
                return None
    return u


def p1_oracle(profile: VehicleDayProfile, prices: PriceSchedule,
              limits: ChargeLimits, max_epochs: int = 12) -> ChargingPlan:
    """Exact optimum by enumerating every subset of charging epochs."""
    H = len(profile.d)
    if H > max_epochs:
        raise OracleSizeError(f"horizon {H} exceeds oracle limit {max_epochs}")
    _precheck(profile, limits)

    best_cost = float("inf")
    best_u: list[float] | None = None
    for k in range(H + 1):
        for subset in itertools.combinations(range(H), k):
            u = _greedy_amounts(subset, profile, prices, limits)
            if u is None:
                continue
            y = [1 if x > ENERGY_EPS else 0 for x in u]
            cost = plan_cost(y, u, prices)
            if cost < best_cost - TIE_EPS:
                best_cost = cost
                best_u = u
    if best_u is None:
        raise InfeasibleProfileError(1, "no charge-epoch subset is feasible",
                                     profile.vehicle_id)
    y = tuple(1 if x > ENERGY_EPS else 0 for x in best_u)
    e = [profile.e_init]
    for h in range(H):
        e.append(e[-1] + best_u[h] - profile.d[h])
    return ChargingPlan(profile.vehicle_id, y, tuple(best_u), tuple(e),
                        plan_cost(y, best_u, prices))


# ---------------------------------------------------------------------------
# Tabular export / import
# ---------------------------------------------------------------------------

PLAN_COLUMNS = ("vehicle_id", "epoch", "y", "u_kwh", "e_kwh")


def write_plans(plans: Sequence[ChargingPlan], path: str | Path) -> None:
    """One row per (vehicle, epoch) plus a terminal row carrying the final SOC."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PLAN_COLUMNS)
        for plan in plans:
            for h in range(plan.epochs):
                out.writerow([plan.vehicle_id, h + 1, plan.y[h],
                              repr(plan.u[h]), repr(plan.e[h])])
            out.writerow([plan.vehicle_id, plan.epochs + 1, 0, repr(0.0),
                          repr(plan.e[plan.epochs])])


def read_plans(path: str | Path, prices: PriceSchedule) -> list[ChargingPlan]:
    rows: dict[int, list[tuple[int, int, float, float]]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["vehicle_id"]), []).append(
                (int(rec["epoch"]), int(rec["y"]),
                 float(rec["u_kwh"]), float(rec["e_kwh"])))
    plans = []
    for vid in sorted(rows):
        entries = sorted(rows[vid])
        y = tuple(r[1] for r in entries[:-1])
        u = tuple(r[2] for r in entries[:-1])
        e = tuple(r[3] for r in entries)
        plans.append(ChargingPlan(vid, y, u, e, plan_cost(y, u, prices)))
    return plans


PROFILE_COLUMNS = ("vehicle_id", "epoch", "kwh")


def write_profiles(profiles: Sequence[VehicleDayProfile], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PROFILE_COLUMNS + ("e_init",))
        for p in profiles:
            for h, dkh in enumerate(p.d, start=1):
                out.writerow([p.vehicle_id, h, repr(dkh), repr(p.e_init)])


def read_profiles(path: str | Path) -> list[VehicleDayProfile]:
    rows: dict[int, list[tuple[int, float]]] = {}
    inits: dict[int, float] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            vid = int(rec["vehicle_id"])
            rows.setdefault(vid, []).append((int(rec["epoch"]), float(rec["kwh"])))
            inits[vid] = float(rec["e_init"])
    return [VehicleDayProfile(vid, inits[vid],
                              tuple(x for _, x in sorted(rows[vid])))
            for vid in sorted(rows)]
