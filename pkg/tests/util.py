"""Shared helpers for building seeded random test instances."""

from __future__ import annotations

import numpy as np

from fleetcharge.core import PriceSchedule
from fleetcharge.day_ahead import ChargeLimits, VehicleDayProfile


def random_p1_instance(seed: int, max_epochs: int = 8, soc_step: float = 0.1):
    """Feasible-by-construction scheduling instance on the amount lattice.

    All energies are multiples of ``soc_step`` so the DP solver is exact and
    comparable to the enumeration oracle.
    """
    rng = np.random.default_rng(seed)
    H = int(rng.integers(1, max_epochs + 1))
    grid = lambda lo, hi: soc_step * int(rng.integers(round(lo / soc_step),
                                                      round(hi / soc_step) + 1))
    e_min = grid(0.5, 2.0)
    e_max = e_min + grid(3.0, 12.0)
    u_max = grid(1.0, 5.0)
    e_init = e_min + soc_step * int(rng.integers(0, round((e_max - e_min) / soc_step) + 1))
    # keep per-epoch demand below what one epoch of charging can replenish so
    # instances stay feasible regardless of the draw
    d = tuple(soc_step * int(rng.integers(0, round(u_max / soc_step)))
              for _ in range(H))
    prices = PriceSchedule(
        per_epoch=tuple(float(np.round(rng.uniform(0.05, 0.6), 3)) for _ in range(H)),
        fixed_cost=float(rng.choice([0.0, 0.1, 0.3, 0.5])))
    profile = VehicleDayProfile(vehicle_id=0, e_init=e_init, d=d)
    limits = ChargeLimits(e_min=e_min, e_max=e_max, u_max=u_max)
    return profile, prices, limits


def random_p2_instance(seed: int, max_vehicles: int = 6, max_chargers: int = 6):
    """Random assignment instance with a mix of free and occupied windows."""
    from fleetcharge.assignment import AssignmentInstance

    rng = np.random.default_rng(seed)
    n_i = int(rng.integers(1, max_vehicles + 1))
    n_j = int(rng.integers(n_i, max_chargers + 1))
    horizon = 60.0
    e_min = 12.4
    mu = 0.204
    t = rng.uniform(1.0, 25.0, size=(n_i, n_j))
    d = t / 60.0 * 65.0
    e = rng.uniform(e_min + 8.0, 30.0, size=n_i)
    e_star = e + rng.uniform(5.0, 20.0, size=n_i)
    a = np.empty((n_i, n_j))
    b = np.empty((n_i, n_j))
    occupied = np.zeros((n_i, n_j), dtype=bool)
    for i in range(n_i):
        for j in range(n_j):
            if rng.random() < 0.45:
                start = rng.uniform(0.0, t[i, j])
                end = rng.uniform(t[i, j], horizon)
                a[i, j], b[i, j], occupied[i, j] = start, end, True
            else:
                a[i, j] = b[i, j] = horizon
    return AssignmentInstance(
        vehicle_ids=tuple(range(n_i)),
        charger_ids=tuple(range(n_j)),
        travel_min=t,
        dist_km=d,
        e=e,
        e_star=e_star,
        window_a=a,
        window_b=b,
        rates=np.full(n_j, 50.0 / 60.0),
        consumption_kwh_per_km=mu,
        theta1=0.025,
        theta2=0.5,
        e_min=e_min,
        big_m1=62.0,
        big_m2=930.0,
    )


def sequence_from_minutes(charger_id: int, start: float, occupied: list[bool]):
    """Build a boundary sequence from a per-minute occupancy vector."""
    from fleetcharge.occupancy import SessionBoundarySequence

    bounds = [start]
    states = []
    current = occupied[0]
    for k, state in enumerate(occupied[1:], start=1):
        if state != current:
            bounds.append(start + k)
            states.append(current)
            current = state
    bounds.append(start + len(occupied))
    states.append(current)
    return SessionBoundarySequence(charger_id=charger_id,
                                   boundaries=tuple(float(x) for x in bounds),
                                   slot_occupied=tuple(states))
