import numpy as np
import pytest

from fairdispatch.config import load_config
from fairdispatch.data_io import Scenario


def make_scenario(rows=2, cols=2, n_drivers=3, intensity=0.0, cell_km=1.0,
                  episode_slots=60, visit_counts=None, placement=None,
                  pref_threshold=0.02, pref_radius_km=10.0, p_home=0.7,
                  speed_kmh=30.0, pickup_radius_km=2.0, max_wait_slots=30,
                  seed=0):
    r = rows * cols
    if visit_counts is None:
        visit_counts = np.ones((n_drivers, r))
    if placement is None:
        placement = np.ones(r)
    intens = np.full((r, 24), float(intensity))
    return Scenario(
        grid_rows=rows, grid_cols=cols, cell_km=cell_km, slot_seconds=60,
        episode_slots=episode_slots, speed_kmh=speed_kmh,
        pickup_radius_km=pickup_radius_km, max_wait_slots=max_wait_slots,
        p_home=p_home, n_drivers=n_drivers, pref_threshold=pref_threshold,
        pref_radius_km=pref_radius_km, seed=seed, intensity=intens,
        visit_counts=np.asarray(visit_counts, dtype=float),
        placement=np.asarray(placement, dtype=float),
    )


@pytest.fixture
def base_cfg():
    return load_config()
