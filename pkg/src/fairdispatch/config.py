"""Flat key-value configuration with file, environment, and CLI overrides."""
from __future__ import annotations

import os

import yaml

ENV_PREFIX = "FAIRDISPATCH_"

DEFAULTS: dict = {
    # world geometry and dynamics
    "grid_rows": 10,
    "grid_cols": 10,
    "cell_km": 1.0,
    "slot_seconds": 60,
    "episode_slots": 1440,
    "speed_kmh": 30.0,
    "pickup_radius_km": 2.0,
    "max_wait_slots": 30,
    "p_home": 0.7,
    "n_drivers": 200,
    # synthetic demand generation
    "orders_per_day": 5000,
    "n_hotspots": 5,
    "hotspot_multiplier": 5.0,
    "rush_periods": [7, 8, 9, 17, 18, 19],
    "visits_per_driver": 500,
    "pref_spread_min_km": 1.0,
    "pref_spread_max_km": 6.0,
    # preference / fairness definitions
    "pref_threshold": 0.02,
    "pref_radius_km": 10.0,
    "neutral_quantifier": "any",
    "beta": 1.0,
    "w_base": 300.0,
    "alpha": 0.5,
    # trainer
    "gamma_r": 0.99,
    "gamma_c": 0.99,
    "gae_lambda": 0.95,
    "clip_eps": 0.2,
    "actor_lr": 3e-4,
    "critic_lr": 1e-3,
    "lambda_lr": 0.01,
    "ppo_epochs": 4,
    "minibatch": 256,
    "hidden_widths": [64, 64],
    "pretrain_steps": 300,
    "pretrain_gain": 4.0,
    "cost_budget": 100.0,
    "cost_accounting": "episode_total",
    "freeze_lambda": False,
    "use_cost_critic": True,
    "eps_theta_rel": 1e-3,
    "eps_lambda": 1e-3,
    "convergence_window": 3,
    "n_episodes": 30,
    # evaluation
    "eval_episodes": 5,
    "assignment_exact_cap": 64,
}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, list):
        parsed = yaml.safe_load(raw)
        if not isinstance(parsed, list):
            parsed = [int(x) if str(x).isdigit() else x for x in raw.split(",")]
        return parsed
    return raw


class ConfigError(ValueError):
    pass


def load_config(path: str | None = None, overrides: dict | None = None,
                env: dict | None = None) -> dict:
    """Merge defaults <- config file <- FAIRDISPATCH_* env vars <- overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a flat mapping")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    env = os.environ if env is None else env
    for key in DEFAULTS:
        var = ENV_PREFIX + key.upper()
        if var in env:
            cfg[key] = _coerce(env[var], DEFAULTS[key])
    if overrides:
        unknown = sorted(set(overrides) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    required_positive = ["grid_rows", "grid_cols", "cell_km", "slot_seconds",
                         "episode_slots", "speed_kmh", "pickup_radius_km",
                         "n_drivers", "w_base"]
    for key in required_positive:
        if key not in cfg:
            raise ConfigError(f"missing required key: {key}")
        if not isinstance(cfg[key], (int, float)) or cfg[key] <= 0:
            raise ConfigError(f"{key} must be a positive number, got {cfg[key]!r}")
    if not 0.0 <= cfg["alpha"] <= 1.0:
        raise ConfigError("alpha must be in [0, 1]")
    if not 0.0 < cfg["pref_threshold"] < 1.0:
        raise ConfigError("pref_threshold must be in (0, 1)")
    for key in ("gamma_r", "gamma_c"):
        if not 0.0 < cfg[key] <= 1.0:
            raise ConfigError(f"{key} must be in (0, 1]")
    if not 0.0 < cfg["clip_eps"] < 1.0:
        raise ConfigError("clip_eps must be in (0, 1)")
    if cfg["cost_accounting"] not in ("episode_total", "discounted"):
        raise ConfigError("cost_accounting must be episode_total or discounted")
    if cfg["neutral_quantifier"] not in ("any", "all"):
        raise ConfigError("neutral_quantifier must be any or all")


def save_config(cfg: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
