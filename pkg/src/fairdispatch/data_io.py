"""Synthetic scenario generation, trace/history ingestion, results export."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .sim import Grid, Order

ORDERS_HEADER = ["order_id", "creation_slot", "origin_region", "dest_region",
                 "origin_x", "origin_y", "dest_x", "dest_y"]
HISTORY_HEADER = ["driver_id", "region_id", "visit_count"]


class DataError(ValueError):
    pass


@dataclass
class Scenario:
    """Everything needed to instantiate a world and its fairness inputs."""

    grid_rows: int
    grid_cols: int
    cell_km: float
    slot_seconds: int
    episode_slots: int
    speed_kmh: float
    pickup_radius_km: float
    max_wait_slots: int
    p_home: float
    n_drivers: int
    pref_threshold: float
    pref_radius_km: float
    seed: int
    intensity: np.ndarray     # (R, 24) expected orders per slot
    visit_counts: np.ndarray  # (n_drivers, R) historical visits
    placement: np.ndarray     # (R,) initial-placement weights

    def __post_init__(self):
        r = self.grid_rows * self.grid_cols
        self.intensity = np.asarray(self.intensity, dtype=float)
        self.visit_counts = np.asarray(self.visit_counts, dtype=float)
        self.placement = np.asarray(self.placement, dtype=float)
        if self.intensity.shape != (r, 24):
            raise DataError(f"intensity must be ({r}, 24), got {self.intensity.shape}")
        if self.visit_counts.shape != (self.n_drivers, r):
            raise DataError("visit_counts shape does not match roster/grid")
        if self.n_drivers < 1:
            raise DataError("roster is empty")

    @property
    def n_regions(self) -> int:
        return self.grid_rows * self.grid_cols

    def grid(self) -> Grid:
        return Grid(self.grid_rows, self.grid_cols, self.cell_km)

    def expected_demand(self) -> np.ndarray:
        """Historical demand counts per (region, period): intensity x slots/period."""
        return self.intensity * (3600.0 / self.slot_seconds)


def generate_scenario(cfg: dict, seed: int) -> Scenario:
    """Synthesize a city: rush-hour hotspots plus narrow-to-broad driver histories."""
    rows, cols = int(cfg["grid_rows"]), int(cfg["grid_cols"])
    n_regions = rows * cols
    n_drivers = int(cfg["n_drivers"])
    if n_regions < 1 or n_drivers < 1:
        raise DataError("need at least one region and one driver")
    rng = np.random.default_rng(seed)
    grid = Grid(rows, cols, float(cfg["cell_km"]))
    slots_per_period = 3600.0 / cfg["slot_seconds"]

    mult = np.ones((n_regions, 24))
    n_hot = min(int(cfg["n_hotspots"]), n_regions)
    hotspots = rng.choice(n_regions, size=n_hot, replace=False)
    for v in cfg["rush_periods"]:
        mult[hotspots, int(v) % 24] = float(cfg["hotspot_multiplier"])
    base = float(cfg["orders_per_day"]) / (mult.sum() * slots_per_period)
    intensity = base * mult

    # heterogeneous driver ranges: small spread = narrow operator, large = broad
    spreads = rng.uniform(float(cfg["pref_spread_min_km"]),
                          float(cfg["pref_spread_max_km"]), size=n_drivers)
    mean_demand = intensity.mean(axis=1)
    home_p = mean_demand / mean_demand.sum()
    homes = rng.choice(n_regions, size=n_drivers, p=home_p)
    visit_counts = np.zeros((n_drivers, n_regions))
    for k in range(n_drivers):
        dist = np.hypot(*(grid.centers - grid.centers[homes[k]]).T)
        weights = np.exp(-dist / spreads[k])
        visit_counts[k] = rng.multinomial(int(cfg["visits_per_driver"]),
                                          weights / weights.sum())
    return Scenario(
        grid_rows=rows, grid_cols=cols, cell_km=float(cfg["cell_km"]),
        slot_seconds=int(cfg["slot_seconds"]), episode_slots=int(cfg["episode_slots"]),
        speed_kmh=float(cfg["speed_kmh"]), pickup_radius_km=float(cfg["pickup_radius_km"]),
        max_wait_slots=int(cfg["max_wait_slots"]), p_home=float(cfg["p_home"]),
        n_drivers=n_drivers, pref_threshold=float(cfg["pref_threshold"]),
        pref_radius_km=float(cfg["pref_radius_km"]), seed=seed,
        intensity=intensity, visit_counts=visit_counts, placement=mean_demand,
    )


# -- scenario files --------------------------------------------------------

def save_scenario(scenario: Scenario, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    meta = {
        "grid_rows": scenario.grid_rows, "grid_cols": scenario.grid_cols,
        "cell_km": scenario.cell_km, "slot_seconds": scenario.slot_seconds,
        "episode_slots": scenario.episode_slots, "speed_kmh": scenario.speed_kmh,
        "pickup_radius_km": scenario.pickup_radius_km,
        "max_wait_slots": scenario.max_wait_slots, "p_home": scenario.p_home,
        "n_drivers": scenario.n_drivers, "pref_threshold": scenario.pref_threshold,
        "pref_radius_km": scenario.pref_radius_km, "seed": scenario.seed,
        "demand_csv": "demand.csv", "history_csv": "history.csv",
        "placement_csv": "placement.csv",
    }
    paths = []
    meta_path = os.path.join(outdir, "scenario.yaml")
    with open(meta_path, "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)
    paths.append(meta_path)
    demand_path = os.path.join(outdir, "demand.csv")
    with open(demand_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "period", "intensity"])
        for u in range(scenario.n_regions):
            for v in range(24):
                w.writerow([u, v, repr(float(scenario.intensity[u, v]))])
    paths.append(demand_path)
    history_path = os.path.join(outdir, "history.csv")
    with open(history_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for k in range(scenario.n_drivers):
            for u in np.flatnonzero(scenario.visit_counts[k]):
                w.writerow([k, int(u), int(scenario.visit_counts[k, u])])
    paths.append(history_path)
    placement_path = os.path.join(outdir, "placement.csv")
    with open(placement_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "weight"])
        for u in range(scenario.n_regions):
            w.writerow([u, repr(float(scenario.placement[u]))])
    paths.append(placement_path)
    return paths


def load_scenario(path: str) -> Scenario:
    meta_path = os.path.join(path, "scenario.yaml") if os.path.isdir(path) else path
    try:
        with open(meta_path) as fh:
            meta = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"scenario not found: {meta_path}") from exc
    base = os.path.dirname(meta_path)
    n_regions = meta["grid_rows"] * meta["grid_cols"]
    intensity = np.zeros((n_regions, 24))
    with open(os.path.join(base, meta["demand_csv"])) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            intensity[int(row["region_id"]), int(row["period"])] = float(row["intensity"])
    counts = load_history(os.path.join(base, meta["history_csv"]))
    visit_counts = np.zeros((meta["n_drivers"], n_regions))
    for k, per_region in counts.items():
        for u, c in per_region.items():
            if u >= n_regions or k >= meta["n_drivers"]:
                raise DataError("history references unknown driver or region")
            visit_counts[k, u] = c
    placement = np.ones(n_regions)
    placement_csv = meta.get("placement_csv")
    if placement_csv and os.path.exists(os.path.join(base, placement_csv)):
        with open(os.path.join(base, placement_csv)) as fh:
            for row in csv.DictReader(fh):
                placement[int(row["region_id"])] = float(row["weight"])
    return Scenario(
        grid_rows=meta["grid_rows"], grid_cols=meta["grid_cols"],
        cell_km=meta["cell_km"], slot_seconds=meta["slot_seconds"],
        episode_slots=meta["episode_slots"], speed_kmh=meta["speed_kmh"],
        pickup_radius_km=meta["pickup_radius_km"], max_wait_slots=meta["max_wait_slots"],
        p_home=meta["p_home"], n_drivers=meta["n_drivers"],
        pref_threshold=meta["pref_threshold"], pref_radius_km=meta["pref_radius_km"],
        seed=meta["seed"], intensity=intensity, visit_counts=visit_counts,
        placement=placement,
    )


# -- order traces and driver histories --------------------------------------

def _parse_row(row: dict, lineno: int, fields: dict[str, type]) -> dict:
    out = {}
    for name, typ in fields.items():
        raw = row.get(name)
        if raw is None or raw == "":
            raise DataError(f"line {lineno}: missing field {name!r}")
        try:
            out[name] = typ(raw)
        except ValueError as exc:
            raise DataError(f"line {lineno}: non-numeric {name}={raw!r}") from exc
    return out


def load_orders(path: str, n_regions: int | None = None) -> list[Order]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ORDERS_HEADER:
            raise DataError(f"bad orders header: expected {ORDERS_HEADER}, "
                            f"got {reader.fieldnames}")
        orders = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            rec = _parse_row(row, lineno, {
                "order_id": int, "creation_slot": int, "origin_region": int,
                "dest_region": int, "origin_x": float, "origin_y": float,
                "dest_x": float, "dest_y": float,
            })
            if rec["order_id"] in seen:
                raise DataError(f"line {lineno}: duplicate order_id {rec['order_id']}")
            seen.add(rec["order_id"])
            for key in ("origin_region", "dest_region"):
                if rec[key] < 0 or (n_regions is not None and rec[key] >= n_regions):
                    raise DataError(f"line {lineno}: {key} {rec[key]} out of range")
            orders.append(Order(
                id=rec["order_id"], creation_slot=rec["creation_slot"],
                origin=(rec["origin_x"], rec["origin_y"]),
                origin_region=rec["origin_region"],
                dest=(rec["dest_x"], rec["dest_y"]), dest_region=rec["dest_region"],
            ))
    orders.sort(key=lambda o: (o.creation_slot, o.id))
    return orders


def save_orders(orders: list[Order], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORDERS_HEADER)
        for o in sorted(orders, key=lambda o: (o.creation_slot, o.id)):
            w.writerow([o.id, o.creation_slot, o.origin_region, o.dest_region,
                        repr(o.origin[0]), repr(o.origin[1]),
                        repr(o.dest[0]), repr(o.dest[1])])


def load_history(path: str) -> dict[int, dict[int, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != HISTORY_HEADER:
            raise DataError(f"bad history header: expected {HISTORY_HEADER}, "
                            f"got {reader.fieldnames}")
        counts: dict[int, dict[int, int]] = {}
        for lineno, row in enumerate(reader, start=2):
            rec = _parse_row(row, lineno, {"driver_id": int, "region_id": int,
                                           "visit_count": int})
            if rec["region_id"] < 0 or rec["driver_id"] < 0:
                raise DataError(f"line {lineno}: negative id")
            if rec["visit_count"] < 0:
                raise DataError(f"line {lineno}: negative visit_count")
            counts.setdefault(rec["driver_id"], {})[rec["region_id"]] = rec["visit_count"]
    return counts


# -- results export ----------------------------------------------------------

def export_results(records: list[dict], region_waits: list[dict], outdir: str) -> list[str]:
    """Write per-episode metric records (JSONL) and per-region mean waits (CSV).

    ``region_waits`` rows carry episode, region_id, and mean_wait_seconds so
    regional convergence toward the benchmark can be plotted.
    """
    os.makedirs(outdir, exist_ok=True)
    jsonl = os.path.join(outdir, "results.jsonl")
    with open(jsonl, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    waits_csv = os.path.join(outdir, "region_waits.csv")
    with open(waits_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "region_id", "mean_wait_seconds"])
        for row in region_waits:
            w.writerow([row["episode"], row["region_id"],
                        repr(float(row["mean_wait_seconds"]))])
    return [jsonl, waits_csv]


def load_results(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def export_benchmark(wt_c: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "period", "wt_c_seconds"])
        for u in range(wt_c.shape[0]):
            for v in range(wt_c.shape[1]):
                w.writerow([u, v, repr(float(wt_c[u, v]))])
