"""Per-epoch vehicle-charger assignment with predicted availability.

Each scheduled-to-charge vehicle is matched to exactly one charger (at most
one vehicle per charger) minimizing

    Z = sum t_ij X_ij + theta1 * sum Y_ij / phi_j + theta2 * sum S_ij

where t_ij is access time, Y_ij the energy to recharge, and S_ij the
expected wait when the arrival lands inside a predicted-occupied slot.
Because the objective strictly increases in Y, the energy variable is
eliminated in closed form (Y_ij = max(0, e*_i - e_i + mu*d_ij)), turning
the problem into a pure assignment over composite edge costs.

``solve_p2_exact`` enumerates injective assignments for small instances;
``solve_p2_lagrangian`` relaxes the charger-capacity constraints with
multipliers and a subgradient loop plus greedy primal repair, reporting a
dual-bound gap.  ``verify_solution`` re-evaluates every constraint of the
assignment model literally and reports violations with slack values.

All times are minutes relative to the decision instant: t_ij is the
arrival time (equal to travel time), and window bounds (a_ij, b_ij) are
shifted the same way.
"""

from __future__ import annotations

import itertools
import json
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ENERGY_EPS, FleetChargeError

EPS_T = 1e-6            # minutes; strict-inequality tightening for Eq-17 style check
FEAS_TOL = 1e-9
TIE_TOL = 1e-9


class AssignmentSizeError(FleetChargeError):
    """Instance too large for the exact enumeration solver."""


class InfeasibleAssignmentError(FleetChargeError):
    def __init__(self, blocked: Sequence, message: str):
        self.blocked = list(blocked)
        super().__init__(message)


@dataclass
class AssignmentInstance:
    """One epoch's matching problem between vehicles and chargers."""

    vehicle_ids: tuple
    charger_ids: tuple
    travel_min: np.ndarray          # |I| x |J| arrival times (minutes from now)
    dist_km: np.ndarray             # |I| x |J|
    e: np.ndarray                   # SOC per vehicle, kWh
    e_star: np.ndarray              # planned post-charge SOC per vehicle, kWh
    window_a: np.ndarray            # |I| x |J| predicted occupied-slot start
    window_b: np.ndarray            # |I| x |J| predicted occupied-slot end
    rates: np.ndarray               # kWh per minute per charger
    consumption_kwh_per_km: float
    theta1: float
    theta2: float
    e_min: float
    big_m1: float
    big_m2: float

    def __post_init__(self):
        self.travel_min = np.asarray(self.travel_min, dtype=float)
        self.dist_km = np.asarray(self.dist_km, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        self.e_star = np.asarray(self.e_star, dtype=float)
        self.window_a = np.asarray(self.window_a, dtype=float)
        self.window_b = np.asarray(self.window_b, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        n_i, n_j = len(self.vehicle_ids), len(self.charger_ids)
        if n_i > n_j:
            raise FleetChargeError(
                f"{n_i} vehicles exceed {n_j} chargers; postpone before assigning")
        for name in ("travel_min", "dist_km", "window_a", "window_b"):
            if getattr(self, name).shape != (n_i, n_j):
                raise FleetChargeError(f"{name} must be a complete |I|x|J| matrix")
        if np.any(self.travel_min < 0) or np.any(self.dist_km < 0):
            raise FleetChargeError("travel times and distances must be non-negative")
        if np.any(self.window_a > self.window_b):
            raise FleetChargeError("window starts must not exceed window ends")
        if n_i and self.travel_min.size and self.travel_min.max() >= self.big_m1 - 2 * EPS_T:
            raise FleetChargeError("big_m1 too small for the instance's travel times")
        if n_i and self.window_a.size and self.window_a.max() > self.big_m1:
            raise FleetChargeError("big_m1 too small for the prediction horizon")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)

    @property
    def n_chargers(self) -> int:
        return len(self.charger_ids)

    def feasible_pairs(self) -> np.ndarray:
        """Reserve-level feasibility per pair: SOC at arrival stays >= e_min."""
        reach = self.e[:, None] - self.consumption_kwh_per_km * self.dist_km
        return reach >= self.e_min - ENERGY_EPS

    def required_energy(self) -> np.ndarray:
        """Minimal recharge amount per pair meeting the planned target."""
        need = (self.e_star[:, None] - self.e[:, None]
                + self.consumption_kwh_per_km * self.dist_km)
        return np.maximum(0.0, need)

    def wait_indicator(self) -> np.ndarray:
        """Whether arrival t_ij lands at or after the predicted slot start."""
        return self.travel_min >= self.window_a

    def expected_wait(self) -> np.ndarray:
        """Expected wait per pair: until the occupying session's predicted end."""
        wait = np.where(self.wait_indicator(),
                        np.maximum(0.0, self.window_b - self.travel_min), 0.0)
        return wait

    def pair_costs(self) -> np.ndarray:
        """Composite edge costs; infeasible pairs are +inf."""
        cost = (self.travel_min
                + self.theta1 * self.required_energy() / self.rates[None, :]
                + self.theta2 * self.expected_wait())
        return np.where(self.feasible_pairs(), cost, np.inf)


@dataclass
class AssignmentSolution:
    vehicle_ids: tuple
    charger_ids: tuple
    x: np.ndarray                   # |I| x |J| binary
    y: np.ndarray                   # |I| x |J| kWh
    s: np.ndarray                   # |I| x |J| minutes
    w: np.ndarray                   # |J| binary
    objective: float
    optimality: str                 # "exact" or "lagrangian"
    gap: float | None = None

    def assigned_charger(self, i: int) -> int:
        """Column index of the charger serving vehicle row i."""
        return int(np.argmax(self.x[i]))

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, self.assigned_charger(i)) for i in range(self.x.shape[0])]


def _blocked_vehicles(inst: AssignmentInstance) -> list:
    feasible = inst.feasible_pairs()
    return [inst.vehicle_ids[i] for i in range(inst.n_vehicles)
            if not feasible[i].any()]


def _build_solution(inst: AssignmentInstance, assign: Sequence[int],
                    optimality: str, gap: float | None = None) -> AssignmentSolution:
    n_i, n_j = inst.n_vehicles, inst.n_chargers
    x = np.zeros((n_i, n_j), dtype=int)
    y = np.zeros((n_i, n_j))
    s = np.zeros((n_i, n_j))
    w = np.zeros(n_j, dtype=int)
    need = inst.required_energy()
    wait = inst.expected_wait()
    indicator = inst.wait_indicator()
    for i, j in enumerate(assign):
        x[i, j] = 1
        y[i, j] = need[i, j]
        s[i, j] = wait[i, j]
        w[j] = 1 if indicator[i, j] else 0
    z = float((inst.travel_min * x).sum()
              + inst.theta1 * (y / inst.rates[None, :]).sum()
              + inst.theta2 * s.sum())
    return AssignmentSolution(inst.vehicle_ids, inst.charger_ids,
                              x, y, s, w, z, optimality, gap)


def solve_p2_exact(inst: AssignmentInstance, max_size: int = 8) -> AssignmentSolution:
    """Optimal assignment by enumerating every injective vehicle->charger map."""
    n_i, n_j = inst.n_vehicles, inst.n_chargers
    if n_i > max_size or n_j > max_size:
        raise AssignmentSizeError(
            f"instance {n_i}x{n_j} exceeds enumeration limit {max_size}")
    if n_i == 0:
        return _build_solution(inst, [], "exact")
    blocked = _blocked_vehicles(inst)
    if blocked:
        raise InfeasibleAssignmentError(
            blocked, f"vehicles {blocked} have no reserve-feasible charger")
    costs = inst.pair_costs()
    best = None
    best_z = np.inf
    for perm in itertools.permutations(range(n_j), n_i):
        z = 0.0
        for i, j in enumerate(perm):
            z += costs[i, j]
            if z >= best_z - TIE_TOL:
                break
        else:
            if z < best_z - TIE_TOL:
                best_z, best = z, perm
    if best is None:
        raise InfeasibleAssignmentError(
            [], "no injective assignment satisfies the reserve constraints")
    return _build_solution(inst, best, "exact")


def _greedy_construction(inst: AssignmentInstance, costs: np.ndarray) -> list[int] | None:
    """Feasible assignment, most-constrained vehicle first, cheapest charger."""
    n_i = inst.n_vehicles
    order = sorted(range(n_i), key=lambda i: (np.isfinite(costs[i]).sum(), i))
    taken: set[int] = set()
    assign = [-1] * n_i
    for i in order:
        options = [(costs[i, j], j) for j in range(inst.n_chargers)
                   if j not in taken and np.isfinite(costs[i, j])]
        if not options:
            return None
        _, j = min(options)
        assign[i] = j
        taken.add(j)
    return assign


def _repair(inst: AssignmentInstance, costs: np.ndarray,
            choice: np.ndarray) -> list[int] | None:
    """Resolve charger conflicts: largest-regret vehicle keeps, rest move."""
    n_i, n_j = inst.n_vehicles, inst.n_chargers

    def regret(i: int) -> float:
        j = choice[i]
        alternatives = [costs[i, k] for k in range(n_j)
                        if k != j and np.isfinite(costs[i, k])]
        if not alternatives:
            return np.inf
        return min(alternatives) - costs[i, j]

    assign = [-1] * n_i
    displaced: list[int] = []
    for j in range(n_j):
        contenders = [i for i in range(n_i) if choice[i] == j]
        if not contenders:
            continue
        keeper = max(contenders, key=lambda i: (regret(i), -i))
        assign[keeper] = j
        displaced.extend(i for i in contenders if i != keeper)
    taken = {j for j in assign if j >= 0}
    for i in sorted(displaced, key=lambda i: (-regret(i), i)):
        options = [(costs[i, j], j) for j in range(n_j)
                   if j not in taken and np.isfinite(costs[i, j])]
        if not options:
            return None
        _, j = min(options)
        assign[i] = j
        taken.add(j)
    return assign


def solve_p2_lagrangian(inst: AssignmentInstance, max_iters: int = 200,
                        gap_target: float = 0.005) -> AssignmentSolution:
    """Near-optimal assignment via relaxation of the charger-capacity rows.

    With multipliers lambda_j on the at-most-one-vehicle constraints the
    relaxed problem separates by vehicle (each picks its cheapest charger
    under reduced costs); multipliers follow a diminishing subgradient step
    and every iterate is repaired into a feasible matching.  Returns the
    best feasible solution with its dual-bound gap.
    """
    n_i, n_j = inst.n_vehicles, inst.n_chargers
    if n_i == 0:
        return _build_solution(inst, [], "lagrangian", 0.0)
    blocked = _blocked_vehicles(inst)
    if blocked:
        raise InfeasibleAssignmentError(
            blocked, f"vehicles {blocked} have no reserve-feasible charger")
    costs = inst.pair_costs()

    def z_of(assign: Sequence[int]) -> float:
        return float(sum(costs[i, j] for i, j in enumerate(assign)))

    best_assign = _greedy_construction(inst, costs)
    best_z = z_of(best_assign) if best_assign is not None else np.inf

    lam = np.zeros(n_j)
    best_dual = -np.inf
    step_scale = None
    for k in range(1, max_iters + 1):
        reduced = costs + lam[None, :]
        choice = np.argmin(reduced, axis=1)
        dual = float(reduced[np.arange(n_i), choice].sum() - lam.sum())
        best_dual = max(best_dual, dual)

        counts = np.bincount(choice, minlength=n_j)
        g = counts - 1.0
        norm2 = float((g * g).sum())

        repaired = _repair(inst, costs, choice)
        if repaired is not None:
            z = z_of(repaired)
            if z < best_z - TIE_TOL or (abs(z - best_z) <= TIE_TOL
                                        and (best_assign is None or repaired < best_assign)):
                best_z, best_assign = z, repaired

        if norm2 == 0.0:
            break
        gap = (best_z - best_dual) / max(1.0, abs(best_dual))
        if np.isfinite(best_z) and gap < gap_target:
            break
        if step_scale is None:
            ref = best_z if np.isfinite(best_z) else dual + 1.0
            step_scale = max((ref - dual) / norm2, 1e-3)
        lam = np.maximum(0.0, lam + (step_scale / k) * g)

    if best_assign is None or not np.isfinite(best_z):
        raise InfeasibleAssignmentError(
            [], "repair and greedy construction found no feasible matching")
    gap = max(0.0, (best_z - best_dual) / max(1.0, abs(best_dual)))
    return _build_solution(inst, best_assign, "lagrangian", gap)


# ---------------------------------------------------------------------------
# Literal constraint verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintViolation:
    constraint: str
    i: int | None
    j: int | None
    slack: float

    def __str__(self):
        where = f" (i={self.i}, j={self.j})" if self.i is not None else ""
        return f"{self.constraint}{where}: slack {self.slack:.3g}"


def verify_solution(inst: AssignmentInstance, sol: AssignmentSolution,
                    tol: float = 1e-9) -> list[ConstraintViolation]:
    """Evaluate every assignment constraint on a candidate solution.

    Returns one entry per violated constraint instance with its (negative)
    slack; an empty list means the solution is feasible.  The strict
    availability inequality is checked with an epsilon tightening of
    ``EPS_T`` minutes.
    """
    n_i, n_j = inst.n_vehicles, inst.n_chargers
    x, y, s, w = sol.x, sol.y, sol.s, sol.w
    mu = inst.consumption_kwh_per_km
    m1, m2 = inst.big_m1, inst.big_m2
    out: list[ConstraintViolation] = []

    def check(name, i, j, slack):
        if slack < -tol:
            out.append(ConstraintViolation(name, i, j, float(slack)))

    for i in range(n_i):
        check("assign-each-vehicle-once", i, None, -abs(x[i].sum() - 1))
    for j in range(n_j):
        check("charger-capacity", None, j, 1 - x[:, j].sum())
        if w[j] not in (0, 1):
            out.append(ConstraintViolation("w-binary", None, j, -abs(w[j])))
    for i in range(n_i):
        for j in range(n_j):
            if x[i, j] not in (0, 1):
                out.append(ConstraintViolation("x-binary", i, j, -abs(x[i, j])))
            check("reserve-at-arrival", i, j,
                  inst.e[i] - mu * inst.dist_km[i, j] * x[i, j]
                  + m1 * (1 - x[i, j]) - inst.e_min)
            check("recharge-to-target", i, j,
                  y[i, j] + inst.e[i] - mu * inst.dist_km[i, j] * x[i, j]
                  + m1 * (1 - x[i, j]) - inst.e_star[i])
            check("energy-only-if-assigned", i, j, m1 * x[i, j] - y[i, j])
            check("wait-flag-upper", i, j,
                  m2 * (1 - w[j]) - (inst.window_a[i, j] - inst.travel_min[i, j]
                                     - m1 * (1 - x[i, j])))
            check("wait-covers-session-end", i, j,
                  s[i, j] + m2 * (1 - w[j])
                  - (inst.window_b[i, j] - inst.travel_min[i, j] * x[i, j]
                     - m1 * (1 - x[i, j])))
            check("wait-flag-lower-strict", i, j,
                  inst.window_a[i, j] - inst.travel_min[i, j]
                  + m1 * (1 - x[i, j]) + m2 * w[j] - EPS_T)
            check("energy-nonnegative", i, j, y[i, j])
            check("wait-nonnegative", i, j, s[i, j])

    z = float((inst.travel_min * x).sum()
              + inst.theta1 * (y / inst.rates[None, :]).sum()
              + inst.theta2 * s.sum())
    if abs(z - sol.objective) > max(tol, 1e-9 * max(1.0, abs(z))):
        out.append(ConstraintViolation("objective-value", None, None,
                                       -abs(z - sol.objective)))
    return out


# ---------------------------------------------------------------------------
# Tabular replay files
# ---------------------------------------------------------------------------

def save_instance(inst: AssignmentInstance, prefix: str | Path) -> None:
    """Write <prefix>.pairs.csv (per-pair data) and <prefix>.meta.json."""
    prefix = Path(prefix)
    with open(prefix.with_suffix(".pairs.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["vehicle_id", "charger_id", "travel_min", "dist_km",
                      "window_a", "window_b", "e", "e_star", "rate_kwh_per_min"])
        for i, vid in enumerate(inst.vehicle_ids):
            for j, cid in enumerate(inst.charger_ids):
                out.writerow([vid, cid, repr(float(inst.travel_min[i, j])),
                              repr(float(inst.dist_km[i, j])), repr(float(inst.window_a[i, j])),
                              repr(float(inst.window_b[i, j])), repr(float(inst.e[i])),
                              repr(float(inst.e_star[i])), repr(float(inst.rates[j]))])
    meta = {"consumption_kwh_per_km": inst.consumption_kwh_per_km,
            "theta1": inst.theta1, "theta2": inst.theta2, "e_min": inst.e_min,
            "big_m1": inst.big_m1, "big_m2": inst.big_m2}
    prefix.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))


def load_instance(prefix: str | Path) -> AssignmentInstance:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".meta.json").read_text())
    rows = list(csv.DictReader(open(prefix.with_suffix(".pairs.csv"), newline="")))
    vids = sorted({int(r["vehicle_id"]) for r in rows})
    cids = sorted({int(r["charger_id"]) for r in rows})
    vi = {v: i for i, v in enumerate(vids)}
    cj = {c: j for j, c in enumerate(cids)}
    shape = (len(vids), len(cids))
    t, d, a, b = (np.zeros(shape) for _ in range(4))
    e, e_star = np.zeros(len(vids)), np.zeros(len(vids))
    rates = np.zeros(len(cids))
    for r in rows:
        i, j = vi[int(r["vehicle_id"])], cj[int(r["charger_id"])]
        t[i, j], d[i, j] = float(r["travel_min"]), float(r["dist_km"])
        a[i, j], b[i, j] = float(r["window_a"]), float(r["window_b"])
        e[i], e_star[i] = float(r["e"]), float(r["e_star"])
        rates[j] = float(r["rate_kwh_per_min"])
    return AssignmentInstance(tuple(vids), tuple(cids), t, d, e, e_star, a, b,
                              rates, **meta)


def save_solution(sol: AssignmentSolution, prefix: str | Path) -> None:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".assign.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["vehicle_id", "charger_id", "x", "y_kwh", "s_min", "w"])
        for i, vid in enumerate(sol.vehicle_ids):
            for j, cid in enumerate(sol.charger_ids):
                out.writerow([vid, cid, int(sol.x[i, j]), repr(float(sol.y[i, j])),
                              repr(float(sol.s[i, j])), int(sol.w[j])])
    meta = {"objective": sol.objective, "optimality": sol.optimality,
            "gap": sol.gap}
    prefix.with_suffix(".solution.json").write_text(json.dumps(meta, indent=2))


def load_solution(prefix: str | Path) -> AssignmentSolution:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".solution.json").read_text())
    rows = list(csv.DictReader(open(prefix.with_suffix(".assign.csv"), newline="")))
    vids = sorted({int(r["vehicle_id"]) for r in rows})
    cids = sorted({int(r["charger_id"]) for r in rows})
    vi = {v: i for i, v in enumerate(vids)}
    cj = {c: j for j, c in enumerate(cids)}
    shape = (len(vids), len(cids))
    x = np.zeros(shape, dtype=int)
    y, s = np.zeros(shape), np.zeros(shape)
    w = np.zeros(len(cids), dtype=int)
    for r in rows:
        i, j = vi[int(r["vehicle_id"])], cj[int(r["charger_id"])]
        x[i, j] = int(r["x"])
        y[i, j], s[i, j] = float(r["y_kwh"]), float(r["s_min"])
        w[j] = int(r["w"])
    return AssignmentSolution(tuple(vids), tuple(cids), x, y, s, w,
                              meta["objective"], meta["optimality"], meta["gap"])
