"""Reference dispatchers: myopic matching, uniform random, unconstrained ablation."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import sim

INFEASIBLE = 1e6


def _feasible_costs(order_ids, driver_ids, world: sim.WorldState) -> np.ndarray:
    """Pickup travel time in slots; INFEASIBLE outside the candidate radius."""
    scen = world.scenario
    pos = world.driver_pos[driver_ids]
    origins = np.array([world.orders[oid].origin for oid in order_ids])
    dist = np.hypot(origins[:, None, 0] - pos[None, :, 0],
                    origins[:, None, 1] - pos[None, :, 1])
    tt = np.ceil(dist / scen.speed_kmh * 3600.0 / scen.slot_seconds)
    tt[dist == 0.0] = 0.0
    return np.where(dist <= scen.pickup_radius_km, tt, INFEASIBLE)


def md_dispatch(open_order_ids, world: sim.WorldState,
                exact_cap: int = 64) -> list[tuple[int, int]]:
    """Single-slot matching minimizing total pickup travel time, no lookahead.

    Exact rectangular assignment up to ``exact_cap`` participants per side,
    greedy nearest-pair beyond. Infeasible pairs are never returned.
    """
    order_ids = sorted(open_order_ids)
    driver_ids = [int(k) for k in
                  np.flatnonzero(np.isin(world.driver_status, sim.AVAILABLE))]
    if not order_ids or not driver_ids:
        return []
    costs = _feasible_costs(order_ids, driver_ids, world)
    if min(len(order_ids), len(driver_ids)) <= exact_cap:
        rows, cols = linear_sum_assignment(costs)
        pairs = [(order_ids[i], driver_ids[j]) for i, j in zip(rows, cols)
                 if costs[i, j] < INFEASIBLE]
        return sorted(pairs)
    # greedy: repeatedly take the cheapest remaining feasible pair
    pairs = []
    open_rows = set(range(len(order_ids)))
    open_cols = set(range(len(driver_ids)))
    while open_rows and open_cols:
        best = None
        for i in sorted(open_rows):
            for j in sorted(open_cols):
                if costs[i, j] < INFEASIBLE and (best is None or costs[i, j] < best[0]):
                    best = (costs[i, j], i, j)
        if best is None:
            break
        _, i, j = best
        pairs.append((order_ids[i], driver_ids[j]))
        open_rows.remove(i)
        open_cols.remove(j)
    return sorted(pairs)


def random_dispatch(open_order_ids, world: sim.WorldState,
                    rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform candidate choice per order, sequential without replacement."""
    pairs = []
    taken: set[int] = set()
    for oid in sorted(open_order_ids):
        order = world.orders[oid]
        cands = [k for k in sim.candidate_set(order, world) if k not in taken]
        if not cands:
            continue
        k = cands[int(rng.integers(len(cands)))]
        pairs.append((oid, k))
        taken.add(k)
    return pairs


def unconstrained_ablation(cfg: dict) -> dict:
    """Trainer configuration with the multiplier frozen at 0 and no cost critic."""
    out = dict(cfg)
    out["freeze_lambda"] = True
    out["use_cost_critic"] = False
    return out


class MdPolicy:
    per_order = False

    def __init__(self, exact_cap: int = 64):
        self.exact_cap = exact_cap

    def assign(self, open_order_ids, world, rng):
        return md_dispatch(open_order_ids, world, self.exact_cap)


class RandomPolicy:
    per_order = False

    def assign(self, open_order_ids, world, rng):
        return random_dispatch(open_order_ids, world, rng)
