"""Driver preference profiles, fairness benchmarks, per-order reward/cost, metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PreferenceProfile:
    """Per-driver visitation frequencies and positive/neutral/negative region sets."""

    freq: np.ndarray                # visitation frequency per region, sums to 1
    threshold: float                # frequency above which a region is positive
    influence_km: float             # km of acceptable reach per unit frequency
    h_plus: frozenset[int]
    h_zero: frozenset[int]
    h_minus: frozenset[int]
    centers: np.ndarray             # (R, 2) region centers, km
    positive_centers: np.ndarray    # centers of the positive regions, (m, 2)

    def region_class(self, u: int) -> str:
        if u in self.h_plus:
            return "+"
        if u in self.h_zero:
            return "0"
        return "-"


def build_preference_profile(visit_counts, threshold: float, influence_km: float,
                             centers: np.ndarray,
                             neutral_quantifier: str = "any") -> PreferenceProfile:
    """Derive the positive/neutral/negative region partition from visit counts.

    A region is neutral when it lies within the influence radius
    ``influence_km * freq(u1)`` of a positive region ``u1`` -- of at least one
    positive region under ``neutral_quantifier="any"`` (default), of every
    positive region under ``"all"``.
    """
    counts = np.asarray(visit_counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("visit counts sum to zero")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    if influence_km <= 0:
        raise ValueError("influence_km must be positive")
    if neutral_quantifier not in ("any", "all"):
        raise ValueError(f"unknown neutral_quantifier {neutral_quantifier!r}")
    centers = np.asarray(centers, dtype=float)
    freq = counts / total
    n = len(freq)
    plus = np.flatnonzero(freq > threshold)
    if plus.size == 0:
        # no positive anchor: everything is acceptable, nothing is negative
        h_zero = frozenset(range(n))
        return PreferenceProfile(freq, threshold, influence_km, frozenset(),
                                 h_zero, frozenset(), centers,
                                 np.empty((0, 2)))
    dist = np.sqrt(((centers[:, None, :] - centers[None, plus, :]) ** 2).sum(axis=2))
    within = dist < influence_km * freq[plus][None, :]
    covered = within.any(axis=1) if neutral_quantifier == "any" else within.all(axis=1)
    plus_set = frozenset(int(u) for u in plus)
    h_zero = frozenset(int(u) for u in np.flatnonzero(covered) if int(u) not in plus_set)
    h_minus = frozenset(range(n)) - plus_set - h_zero
    return PreferenceProfile(freq, threshold, influence_km, plus_set, h_zero,
                             h_minus, centers, centers[plus])


@dataclass
class FairnessBenchmark:
    """Expected-wait table per region and period, anchored to a base wait."""

    wt_c: np.ndarray         # (R, P) seconds
    beta: np.ndarray         # (R,)
    w_base: float            # seconds
    n_passenger: np.ndarray  # (R, P) historical demand counts
    n_driver: np.ndarray     # (R,) historical supply counts


def build_fairness_benchmark(n_passenger, n_driver, beta, w_base: float) -> FairnessBenchmark:
    """Benchmark waits proportional to each region's demand/supply ratio.

    ``wt_c(u, v) = w_base * ratio(u, v) / mean_u ratio(u, v)`` so that for any
    fixed period the ratios between regions match their demand/supply ratios
    exactly and the regional mean equals ``w_base``.
    """
    n_passenger = np.asarray(n_passenger, dtype=float)
    n_driver = np.asarray(n_driver, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(n_driver < 1):
        raise ValueError("every region needs at least one preferring driver "
                         "(apply a supply floor upstream)")
    if np.any(beta <= 0):
        raise ValueError("beta weights must be positive")
    if w_base <= 0:
        raise ValueError("w_base must be positive")
    ratio = beta[:, None] * n_passenger / n_driver[:, None]
    mean = ratio.mean(axis=0, keepdims=True)
    wt_c = np.where(mean > 0, w_base * ratio / np.where(mean > 0, mean, 1.0), w_base)
    return FairnessBenchmark(wt_c, beta, float(w_base), n_passenger, n_driver)


class WaitStats:
    """Realized waits per (region, period) cell; updated by a single owner."""

    def __init__(self):
        self._cells: dict[tuple[int, int], list[float]] = {}

    def record(self, u: int, v: int, wait_seconds: float) -> None:
        self._cells.setdefault((u, v), []).append(float(wait_seconds))

    def waits(self, u: int, v: int) -> list[float]:
        return self._cells.get((u, v), [])

    def count(self, u: int, v: int) -> int:
        return len(self._cells.get((u, v), ()))

    def cells(self):
        return self._cells.items()


def order_reward(wait_seconds: float, cell_waits_seconds, wt_c_seconds: float,
                 alpha: float) -> float:
    """Reward for one dispatched order: negated wait plus a fairness penalty.

    Waits enter in minutes so the squared-deviation term stays on a scale
    comparable to the wait itself. ``cell_waits_seconds`` must already include
    this order's wait.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    k = len(cell_waits_seconds)
    if k == 0:
        raise ValueError("cell has no recorded waits")
    w = np.asarray(cell_waits_seconds, dtype=float) / 60.0
    dev = w - wt_c_seconds / 60.0
    return float(-(1.0 - alpha) * wait_seconds / 60.0 - alpha * np.mean(dev * dev))


def dispatch_cost(profile: PreferenceProfile, dest_region: int,
                  city_diameter_km: float) -> float:
    """Cost of sending a driver into a disliked region, 0 elsewhere.

    Positive only for destinations in the negative set; scaled by the distance
    to the nearest preferred region over the city diameter.
    """
    if dest_region not in profile.h_minus:
        return 0.0
    delta = profile.positive_centers - profile.centers[dest_region]
    return float(np.sqrt((delta * delta).sum(axis=1)).min() / city_diameter_km)


@dataclass
class MetricsReport:
    apwt: float        # seconds
    pf_inter: float    # minutes^2
    pf_intra: float    # minutes^2
    pvr: float         # fraction in [0, 1]

    def as_dict(self) -> dict:
        return {"apwt": self.apwt, "pf_inter": self.pf_inter,
                "pf_intra": self.pf_intra, "pvr": self.pvr}


def compute_metrics(orders, dispatch_log, profiles, benchmark: FairnessBenchmark,
                    slot_seconds: int = 60) -> MetricsReport:
    """Episode metrics over finished (served or expired) orders."""
    waits_by_cell: dict[tuple[int, int], list[float]] = {}
    all_waits = []
    for order in orders:
        if order.wait_seconds is None:
            continue
        v = (order.creation_slot * slot_seconds // 3600) % 24
        waits_by_cell.setdefault((order.origin_region, v), []).append(order.wait_seconds)
        all_waits.append(order.wait_seconds)
    if not all_waits:
        raise ValueError("no finished orders to score")
    apwt = float(np.mean(all_waits))
    intra = [np.var(np.asarray(w) / 60.0) for w in waits_by_cell.values() if len(w) >= 2]
    pf_intra = float(np.mean(intra)) if intra else 0.0
    by_period: dict[int, list[float]] = {}
    for (u, v), w in waits_by_cell.items():
        dev = np.mean(w) / 60.0 - benchmark.wt_c[u, v] / 60.0
        by_period.setdefault(v, []).append(dev)
    pf_inter = float(np.mean([np.var(d) for d in by_period.values()]))
    if dispatch_log:
        violations = sum(1 for _, k, dest in dispatch_log
                         if dest in profiles[k].h_minus)
        pvr = violations / len(dispatch_log)
    else:
        pvr = 0.0
    return MetricsReport(apwt, pf_inter, pf_intra, pvr)


def decreased_ratio(report: MetricsReport, reference: MetricsReport) -> dict[str, float]:
    """Percent improvement of each metric relative to a reference report."""
    out = {}
    for key, val, ref in [
        ("dapwt", report.apwt, reference.apwt),
        ("dpf_inter", report.pf_inter, reference.pf_inter),
        ("dpf_intra", report.pf_intra, reference.pf_intra),
        ("dpvr", report.pvr, reference.pvr),
    ]:
        if ref <= 0:
            raise ValueError(f"reference metric for {key} must be positive")
        out[key] = 100.0 * (ref - val) / ref
    return out
