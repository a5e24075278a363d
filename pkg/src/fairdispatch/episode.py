"""Episode runtime: profile/benchmark assembly, feature encoding, rollouts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import human_factors, sim
from .human_factors import (FairnessBenchmark, PreferenceProfile, WaitStats,
                            compute_metrics, dispatch_cost, order_reward)
from .sim import WorldState, advance_slot, apply_dispatch, candidate_set, init_world

STATE_DIM = 5


@dataclass
class Runtime:
    """Immutable per-scenario context shared across episodes."""

    scenario: object
    grid: sim.Grid
    profiles: list[PreferenceProfile]
    benchmark: FairnessBenchmark
    features: "FeatureBuilder"
    alpha: float


def build_runtime(scenario, cfg: dict) -> Runtime:
    grid = scenario.grid()
    profiles = [
        human_factors.build_preference_profile(
            scenario.visit_counts[k], scenario.pref_threshold,
            scenario.pref_radius_km, grid.centers,
            neutral_quantifier=cfg.get("neutral_quantifier", "any"),
        )
        for k in range(scenario.n_drivers)
    ]
    # supply per region = drivers preferring it, floored at 1
    n_driver = np.zeros(grid.n_regions)
    for p in profiles:
        for u in p.h_plus:
            n_driver[u] += 1
    n_driver = np.maximum(n_driver, 1.0)
    benchmark = human_factors.build_fairness_benchmark(
        scenario.expected_demand(), n_driver,
        np.full(grid.n_regions, float(cfg.get("beta", 1.0))),
        float(cfg.get("w_base", 300.0)),
    )
    fb = FeatureBuilder(grid, profiles)
    return Runtime(scenario, grid, profiles, benchmark, fb, float(cfg.get("alpha", 0.5)))


class FeatureBuilder:
    """Encodes candidate (driver, order) pairs and global critic states.

    All components are scaled into [-1, 1]. Per-driver region tables are
    precomputed once per scenario.
    """

    def __init__(self, grid: sim.Grid, profiles: list[PreferenceProfile]):
        self.grid = grid
        n, r = len(profiles), grid.n_regions
        self.h_plus = np.zeros((n, r))
        self.h_zero = np.zeros((n, r))
        self.h_minus = np.zeros((n, r))
        self.dist_to_plus = np.zeros((n, r))
        self.cost_matrix = np.zeros((n, r))
        for k, p in enumerate(profiles):
            for u in p.h_plus:
                self.h_plus[k, u] = 1.0
            for u in p.h_zero:
                self.h_zero[k, u] = 1.0
            for u in p.h_minus:
                self.h_minus[k, u] = 1.0
            if len(p.positive_centers):
                delta = grid.centers[:, None, :] - p.positive_centers[None, :, :]
                dmin = np.sqrt((delta ** 2).sum(axis=2)).min(axis=1)
                self.dist_to_plus[k] = dmin / grid.diameter_km
                self.cost_matrix[k] = self.dist_to_plus[k] * self.h_minus[k]
        self.feature_dim = 15

    def matching_features(self, world: WorldState, candidate_ids: list[int],
                          order: sim.Order) -> np.ndarray:
        ids = np.asarray(candidate_ids, dtype=np.int64)
        g = self.grid
        n = ids.size
        f = np.empty((n, self.feature_dim))
        pos = world.driver_pos[ids]
        f[:, 0] = 2.0 * pos[:, 0] / g.width_km - 1.0
        f[:, 1] = 2.0 * pos[:, 1] / g.height_km - 1.0
        f[:, 2] = 2.0 * world.clock.period_of_day / 23.0 - 1.0
        dest = order.dest_region
        f[:, 3] = self.h_plus[ids, dest]
        f[:, 4] = self.h_zero[ids, dest]
        f[:, 5] = self.h_minus[ids, dest]
        f[:, 6] = self.dist_to_plus[ids, dest]
        f[:, 7] = 2.0 * world.n_available / world.n_drivers - 1.0
        f[:, 8] = np.tanh(len(world.open_orders) / 20.0)
        f[:, 9] = 2.0 * order.origin[0] / g.width_km - 1.0
        f[:, 10] = 2.0 * order.origin[1] / g.height_km - 1.0
        f[:, 11] = 2.0 * order.dest[0] / g.width_km - 1.0
        f[:, 12] = 2.0 * order.dest[1] / g.height_km - 1.0
        f[:, 13] = 2.0 * dest / max(g.n_regions - 1, 1) - 1.0
        pickup = np.hypot(pos[:, 0] - order.origin[0], pos[:, 1] - order.origin[1])
        f[:, 14] = 2.0 * pickup / world.scenario.pickup_radius_km - 1.0
        return f

    def state_vec(self, world: WorldState) -> np.ndarray:
        t = world.clock.slot
        horizon = max(world.scenario.episode_slots - 1, 1)
        h = world.clock.period_of_day
        return np.array([
            2.0 * t / horizon - 1.0,
            np.sin(2.0 * np.pi * h / 24.0),
            np.cos(2.0 * np.pi * h / 24.0),
            2.0 * world.n_available / world.n_drivers - 1.0,
            np.tanh(len(world.open_orders) / 20.0),
        ])


@dataclass
class Decision:
    features: np.ndarray       # (n_candidates, feature_dim)
    chosen: int                # index into the candidate list
    old_logp: float
    reward: float
    cost: float
    state: np.ndarray
    next_state: np.ndarray | None = None
    terminal: bool = False
    adv_r: float = 0.0
    adv_c: float = 0.0


@dataclass
class EpisodeResult:
    metrics: human_factors.MetricsReport
    transitions: list[Decision]
    rewards: list[float]
    costs: list[float]
    n_dispatches: int
    region_mean_waits: dict[int, float]
    wait_spread: float  # 90th - 10th percentile of per-region mean waits, seconds

    @property
    def episode_cost(self) -> float:
        return float(sum(self.costs))


def rollout(runtime: Runtime, policy, seed, collect_transitions: bool = False,
            order_trace=None) -> EpisodeResult:
    """Run one episode under ``policy``; deterministic for a fixed seed.

    Per-order policies expose ``choose(features, candidate_ids, rng)``; per-slot
    policies expose ``assign(open_orders, world, rng)``.
    """
    scenario = runtime.scenario
    env_rng = np.random.default_rng([_as_entropy(seed), 0])
    policy_rng = np.random.default_rng([_as_entropy(seed), 1])
    world = init_world(scenario, seed=[_as_entropy(seed), 2], grid=runtime.grid,
                       profiles=runtime.profiles)
    if order_trace is not None:
        trace: dict[int, list[sim.Order]] = {}
        for o in order_trace:
            trace.setdefault(o.creation_slot, []).append(o)
        world.order_trace = trace
        for o in trace.get(0, []):
            world.orders[o.id] = o
            world.open_orders.append(o.id)
    world.wait_stats = WaitStats()
    transitions: list[Decision] = []
    rewards: list[float] = []
    costs: list[float] = []
    per_order = getattr(policy, "per_order", True)
    for t in range(scenario.episode_slots):
        if per_order:
            for oid in list(world.open_orders):
                order = world.orders[oid]
                cands = candidate_set(order, world)
                if not cands:
                    continue
                feats = runtime.features.matching_features(world, cands, order)
                state = runtime.features.state_vec(world) if collect_transitions else None
                idx, logp = policy.choose(feats, cands, policy_rng)
                reward, cost = _execute(runtime, world, order, cands[idx])
                rewards.append(reward)
                costs.append(cost)
                if collect_transitions:
                    transitions.append(Decision(feats, idx, logp, reward, cost, state))
        else:
            for oid, k in policy.assign(list(world.open_orders), world, policy_rng):
                reward, cost = _execute(runtime, world, world.orders[oid], k)
                rewards.append(reward)
                costs.append(cost)
        if t < scenario.episode_slots - 1:
            advance_slot(world, env_rng)
    if collect_transitions and transitions:
        for a, b in zip(transitions, transitions[1:]):
            a.next_state = b.state
        transitions[-1].terminal = True
        transitions[-1].next_state = np.zeros(STATE_DIM)
    metrics = compute_metrics(world.orders.values(), world.dispatch_log,
                              runtime.profiles, runtime.benchmark,
                              scenario.slot_seconds)
    region_waits: dict[int, list[float]] = {}
    for order in world.orders.values():
        if order.wait_seconds is not None:
            region_waits.setdefault(order.origin_region, []).append(order.wait_seconds)
    region_means = {u: float(np.mean(w)) for u, w in sorted(region_waits.items())}
    means = np.array(list(region_means.values()))
    spread = float(np.percentile(means, 90) - np.percentile(means, 10)) if means.size else 0.0
    return EpisodeResult(metrics, transitions, rewards, costs,
                         len(world.dispatch_log), region_means, spread)


def _execute(runtime: Runtime, world: WorldState, order: sim.Order,
             driver_id: int) -> tuple[float, float]:
    apply_dispatch(world, order, driver_id)
    u = order.origin_region
    v = sim._period_of(order.creation_slot, runtime.scenario.slot_seconds)
    reward = order_reward(order.wait_seconds, world.wait_stats.waits(u, v),
                          runtime.benchmark.wt_c[u, v], runtime.alpha)
    cost = float(runtime.features.cost_matrix[driver_id, order.dest_region])
    return reward, cost


def _as_entropy(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise TypeError(f"seed must be an integer, got {type(seed)}")
