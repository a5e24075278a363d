"""Discrete-time city world: grid regions, drivers, order arrivals, dispatch execution.

One tick = one slot (default 60 s). All geometry is Euclidean on a rectangular
grid of square cells; there is no road network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# driver status codes
IDLE = 0
ENROUTE_PICKUP = 1
OCCUPIED = 2
CRUISING = 3

AVAILABLE = (IDLE, CRUISING)

# order statuses
OPEN = "open"
ASSIGNED = "assigned"
PICKED_UP = "picked_up"
COMPLETED = "completed"
EXPIRED = "expired"


class Grid:
    """Rectangular grid of square cells; region ids are row-major 0..R-1."""

    def __init__(self, rows: int, cols: int, cell_km: float):
        if rows < 1 or cols < 1:
            raise ValueError("grid must have at least one cell")
        if cell_km <= 0:
            raise ValueError("cell_km must be positive")
        self.rows = rows
        self.cols = cols
        self.cell_km = cell_km
        self.n_regions = rows * cols
        self.width_km = cols * cell_km
        self.height_km = rows * cell_km
        self.diameter_km = math.hypot(self.width_km, self.height_km)
        xs = (np.arange(cols) + 0.5) * cell_km
        ys = (np.arange(rows) + 0.5) * cell_km
        cx, cy = np.meshgrid(xs, ys)
        self.centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # (R, 2)
        # padded 8-neighborhoods for vectorized cruising
        neigh = []
        for r in range(rows):
            for c in range(cols):
                ids = [
                    rr * cols + cc
                    for rr in range(max(0, r - 1), min(rows, r + 2))
                    for cc in range(max(0, c - 1), min(cols, c + 2))
                    if (rr, cc) != (r, c)
                ]
                neigh.append(ids)
        self.neighbor_counts = np.array([len(n) for n in neigh], dtype=np.int64)
        maxn = int(self.neighbor_counts.max()) if neigh else 0
        self.neighbors = np.zeros((self.n_regions, max(maxn, 1)), dtype=np.int64)
        for u, ids in enumerate(neigh):
            self.neighbors[u, : len(ids)] = ids

    def region_of(self, xy) -> int:
        return int(self.region_of_many(np.asarray(xy, dtype=float)[None, :])[0])

    def region_of_many(self, xy: np.ndarray) -> np.ndarray:
        col = np.clip((xy[:, 0] // self.cell_km).astype(np.int64), 0, self.cols - 1)
        row = np.clip((xy[:, 1] // self.cell_km).astype(np.int64), 0, self.rows - 1)
        return row * self.cols + col

    def random_point_in(self, region: int, rng: np.random.Generator) -> np.ndarray:
        row, col = divmod(region, self.cols)
        return np.array(
            [(col + rng.random()) * self.cell_km, (row + rng.random()) * self.cell_km]
        )


@dataclass
class Region:
    id: int
    center: tuple[float, float]
    intensity: np.ndarray  # expected orders per slot, indexed by period 0..23

    def __post_init__(self):
        if np.any(self.intensity < 0):
            raise ValueError("demand intensity must be non-negative")


@dataclass
class SimClock:
    slot: int = 0
    slot_seconds: int = 60

    @property
    def period(self) -> int:
        return self.slot * self.slot_seconds // 3600

    @property
    def period_of_day(self) -> int:
        return self.period % 24


@dataclass
class Order:
    id: int
    creation_slot: int
    origin: tuple[float, float]
    origin_region: int
    dest: tuple[float, float]
    dest_region: int
    status: str = OPEN
    pickup_slot: int | None = None
    completion_slot: int | None = None
    assigned_driver: int | None = None
    wait_seconds: float | None = None


@dataclass
class DriverState:
    """Read-only snapshot of one driver; the world stores drivers as arrays."""

    id: int
    position: tuple[float, float]
    current_region: int
    status: int
    busy_until_slot: int
    assigned_order: int | None


def travel_time(from_xy, to_xy, speed_kmh: float, slot_seconds: int = 60) -> int:
    if speed_kmh <= 0:
        raise ValueError("speed must be positive")
    fx, fy = float(from_xy[0]), float(from_xy[1])
    tx, ty = float(to_xy[0]), float(to_xy[1])
    if not all(math.isfinite(v) for v in (fx, fy, tx, ty)):
        raise ValueError("non-finite coordinates")
    dist = math.hypot(tx - fx, ty - fy)
    if dist == 0.0:
        return 0
    return math.ceil(dist / speed_kmh * 3600.0 / slot_seconds)


class WorldState:
    """Full simulator snapshot; mutated single-threaded by the episode runner."""

    def __init__(self, scenario, grid: Grid, profiles, seed: int):
        if grid.n_regions < 1:
            raise ValueError("empty region set")
        if scenario.n_drivers < 1:
            raise ValueError("need at least one driver")
        weights = np.asarray(scenario.placement, dtype=float)
        total = weights.sum()
        if total <= 0:
            raise ValueError("placement weights sum to zero")
        self.scenario = scenario
        self.grid = grid
        self.profiles = profiles
        self.clock = SimClock(0, scenario.slot_seconds)
        n = scenario.n_drivers
        rng = np.random.default_rng(seed)
        home = rng.choice(grid.n_regions, size=n, p=weights / total)
        self.driver_pos = np.empty((n, 2), dtype=float)
        for k in range(n):
            self.driver_pos[k] = grid.random_point_in(int(home[k]), rng)
        self.driver_region = grid.region_of_many(self.driver_pos)
        self.driver_status = np.full(n, IDLE, dtype=np.int64)
        self.driver_busy_until = np.zeros(n, dtype=np.int64)
        self.driver_order = np.full(n, -1, dtype=np.int64)
        self.n_drivers = n
        self.orders: dict[int, Order] = {}
        self.open_orders: list[int] = []
        self.next_order_id = 0
        self._events: dict[int, list[tuple[str, int]]] = {}
        self.dispatch_log: list[tuple[int, int, int]] = []  # (order, driver, dest region)
        self.wait_stats = None  # attached by the episode runner
        self.order_trace: dict[int, list[Order]] | None = None
        # precomputed cruise targets: padded preferred-region centers per driver
        maxh = max((len(p.positive_centers) for p in profiles), default=0)
        self._home_centers = np.full((n, max(maxh, 1), 2), np.inf)
        self._has_home = np.zeros(n, dtype=bool)
        for k, p in enumerate(profiles):
            m = len(p.positive_centers)
            if m:
                self._home_centers[k, :m] = p.positive_centers
                self._has_home[k] = True
        self._step_km = scenario.speed_kmh * scenario.slot_seconds / 3600.0

    # -- queries ----------------------------------------------------------

    def driver(self, k: int) -> DriverState:
        oid = int(self.driver_order[k])
        return DriverState(
            id=k,
            position=(float(self.driver_pos[k, 0]), float(self.driver_pos[k, 1])),
            current_region=int(self.driver_region[k]),
            status=int(self.driver_status[k]),
            busy_until_slot=int(self.driver_busy_until[k]),
            assigned_order=oid if oid >= 0 else None,
        )

    @property
    def n_available(self) -> int:
        return int(np.isin(self.driver_status, AVAILABLE).sum())

    def state_fingerprint(self) -> tuple:
        return (
            self.clock.slot,
            self.driver_pos.tobytes(),
            self.driver_status.tobytes(),
            self.driver_busy_until.tobytes(),
            self.driver_order.tobytes(),
            tuple(self.open_orders),
        )

    # -- dispatch ---------------------------------------------------------

    def _available_within(self, point, radius_km: float) -> np.ndarray:
        d2 = np.sum((self.driver_pos - np.asarray(point, dtype=float)) ** 2, axis=1)
        mask = np.isin(self.driver_status, AVAILABLE) & (d2 <= radius_km * radius_km)
        return np.flatnonzero(mask)  # ascending driver id

    def _schedule(self, slot: int, kind: str, oid: int) -> None:
        self._events.setdefault(slot, []).append((kind, oid))

    def _run_event(self, kind: str, oid: int) -> None:
        order = self.orders[oid]
        k = order.assigned_driver
        if kind == "pickup":
            order.status = PICKED_UP
            self.driver_status[k] = OCCUPIED
            self.driver_pos[k] = order.origin
            self.driver_region[k] = order.origin_region
        elif kind == "complete":
            order.status = COMPLETED
            self.driver_status[k] = IDLE
            self.driver_pos[k] = order.dest
            self.driver_region[k] = order.dest_region
            self.driver_order[k] = -1
            self.driver_busy_until[k] = self.clock.slot

    def _flush_events_at(self, slot: int) -> None:
        for kind, oid in self._events.pop(slot, []):
            self._run_event(kind, oid)

    def add_order(self, origin_region: int, origin, dest_region: int, dest,
                  creation_slot: int | None = None) -> Order:
        oid = self.next_order_id
        self.next_order_id += 1
        order = Order(
            id=oid,
            creation_slot=self.clock.slot if creation_slot is None else creation_slot,
            origin=(float(origin[0]), float(origin[1])),
            origin_region=int(origin_region),
            dest=(float(dest[0]), float(dest[1])),
            dest_region=int(dest_region),
        )
        self.orders[oid] = order
        self.open_orders.append(oid)
        return order


def init_world(scenario, seed: int, grid: Grid | None = None, profiles=None) -> WorldState:
    from . import human_factors

    if grid is None:
        grid = Grid(scenario.grid_rows, scenario.grid_cols, scenario.cell_km)
    if profiles is None:
        profiles = [
            human_factors.build_preference_profile(
                scenario.visit_counts[k], scenario.pref_threshold,
                scenario.pref_radius_km, grid.centers,
            )
            for k in range(scenario.n_drivers)
        ]
    return WorldState(scenario, grid, profiles, seed)


def candidate_set(order: Order, world: WorldState, radius_km: float | None = None) -> list[int]:
    if order.status != OPEN:
        raise ValueError(f"order {order.id} is not open")
    if radius_km is None:
        radius_km = world.scenario.pickup_radius_km
    return [int(k) for k in world._available_within(order.origin, radius_km)]


def apply_dispatch(world: WorldState, order: Order, driver_id: int) -> None:
    if order.status != OPEN:
        raise ValueError(f"cannot dispatch non-open order {order.id}")
    ids = world._available_within(order.origin, world.scenario.pickup_radius_km)
    if driver_id not in ids:
        raise ValueError(f"driver {driver_id} is not a candidate for order {order.id}")
    now = world.clock.slot
    slot_s = world.scenario.slot_seconds
    tt_pickup = travel_time(world.driver_pos[driver_id], order.origin,
                            world.scenario.speed_kmh, slot_s)
    tt_trip = travel_time(order.origin, order.dest, world.scenario.speed_kmh, slot_s)
    order.status = ASSIGNED
    order.assigned_driver = driver_id
    order.pickup_slot = now + tt_pickup
    order.completion_slot = order.pickup_slot + tt_trip
    order.wait_seconds = (order.pickup_slot - order.creation_slot) * slot_s
    world.driver_status[driver_id] = ENROUTE_PICKUP
    world.driver_order[driver_id] = order.id
    world.driver_busy_until[driver_id] = order.completion_slot
    world.open_orders.remove(order.id)
    world.dispatch_log.append((order.id, driver_id, order.dest_region))
    if world.wait_stats is not None:
        world.wait_stats.record(order.origin_region,
                                _period_of(order.creation_slot, slot_s),
                                order.wait_seconds)
    world._schedule(order.pickup_slot, "pickup", order.id)
    world._schedule(order.completion_slot, "complete", order.id)
    # zero-travel dispatches resolve within the current slot
    if order.pickup_slot == now:
        world._flush_events_at(now)


def _period_of(slot: int, slot_seconds: int) -> int:
    return (slot * slot_seconds // 3600) % 24


def cruise_step(world: WorldState, driver_id: int, rng: np.random.Generator) -> np.ndarray:
    """Move one available driver one slot's distance; returns the new position."""
    if int(world.driver_status[driver_id]) not in AVAILABLE:
        raise ValueError(f"driver {driver_id} is not available to cruise")
    pos = world.driver_pos[driver_id]
    if world._has_home[driver_id] and rng.random() < world.scenario.p_home:
        centers = world._home_centers[driver_id]
        d2 = np.sum((centers - pos) ** 2, axis=1)
        target = centers[int(np.argmin(d2))]
    else:
        u = int(world.driver_region[driver_id])
        cnt = int(world.grid.neighbor_counts[u])
        if cnt == 0:
            target = pos
        else:
            nb = int(world.grid.neighbors[u, rng.integers(cnt)])
            target = world.grid.centers[nb]
    new_pos = _step_toward(pos, target, world._step_km)
    world.driver_pos[driver_id] = new_pos
    world.driver_region[driver_id] = world.grid.region_of(new_pos)
    world.driver_status[driver_id] = CRUISING
    return new_pos


def _step_toward(pos: np.ndarray, target: np.ndarray, step_km: float) -> np.ndarray:
    delta = target - pos
    dist = math.hypot(delta[0], delta[1])
    if dist <= step_km or dist == 0.0:
        return np.array(target, dtype=float)
    return pos + delta * (step_km / dist)


def _cruise_all(world: WorldState, rng: np.random.Generator) -> None:
    ids = np.flatnonzero(np.isin(world.driver_status, AVAILABLE))
    if ids.size == 0:
        return
    pos = world.driver_pos[ids]
    draws = rng.random(ids.size)
    home = (draws < world.scenario.p_home) & world._has_home[ids]
    targets = np.empty_like(pos)
    if home.any():
        centers = world._home_centers[ids[home]]  # (m, maxh, 2)
        d2 = np.sum((centers - pos[home][:, None, :]) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        targets[home] = centers[np.arange(best.size), best]
    rnd = ~home
    if rnd.any():
        regions = world.driver_region[ids[rnd]]
        cnts = world.grid.neighbor_counts[regions]
        picks = (rng.random(int(rnd.sum())) * cnts).astype(np.int64)
        picks = np.minimum(picks, np.maximum(cnts - 1, 0))
        targets[rnd] = world.grid.centers[world.grid.neighbors[regions, picks]]
    delta = targets - pos
    dist = np.hypot(delta[:, 0], delta[:, 1])
    step = np.minimum(dist, world._step_km)
    scale = np.divide(step, dist, out=np.zeros_like(dist), where=dist > 0)
    world.driver_pos[ids] = pos + delta * scale[:, None]
    world.driver_region[ids] = world.grid.region_of_many(world.driver_pos[ids])
    world.driver_status[ids] = CRUISING


def advance_slot(world: WorldState, rng: np.random.Generator) -> None:
    scenario = world.scenario
    if world.clock.slot >= scenario.episode_slots - 1:
        raise ValueError("cannot advance past the episode horizon")
    new_slot = world.clock.slot + 1
    period = _period_of(new_slot, scenario.slot_seconds)
    # (1) arrivals for the incoming slot
    if world.order_trace is not None:
        for order in world.order_trace.get(new_slot, []):
            world.orders[order.id] = order
            world.open_orders.append(order.id)
            world.next_order_id = max(world.next_order_id, order.id + 1)
    else:
        counts = rng.poisson(scenario.intensity[:, period])
        for u in np.flatnonzero(counts):
            for _ in range(int(counts[u])):
                dest_region = int(rng.integers(world.grid.n_regions))
                world.add_order(
                    int(u), world.grid.random_point_in(int(u), rng),
                    dest_region, world.grid.random_point_in(dest_region, rng),
                    creation_slot=new_slot,
                )
    # (2) progress drivers; completions land idle at the destination, so cruise
    # only the drivers that were already available this slot
    world.clock.slot = new_slot
    _cruise_all(world, rng)
    world._flush_events_at(new_slot)
    # (3) expire stale orders, waiting time clamped at the cap
    cap_s = scenario.max_wait_slots * scenario.slot_seconds
    still_open = []
    for oid in world.open_orders:
        order = world.orders[oid]
        if new_slot - order.creation_slot > scenario.max_wait_slots:
            order.status = EXPIRED
            order.wait_seconds = cap_s
            if world.wait_stats is not None:
                world.wait_stats.record(order.origin_region,
                                        _period_of(order.creation_slot,
                                                   scenario.slot_seconds),
                                        cap_s)
        else:
            still_open.append(oid)
    world.open_orders = still_open
