"""Command-line entry point: generate / train / evaluate / compare / report."""
from __future__ import annotations

import argparse
import datetime
import json
import os
import subprocess
import sys

import numpy as np

from . import baselines, data_io, trainer
from .config import ConfigError, load_config
from .data_io import DataError
from .episode import build_runtime, rollout
from .human_factors import MetricsReport, decreased_ratio

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

POLICY_NAMES = ("md", "random", "habic", "habic_unconstrained", "checkpoint")


def _build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


class Manifest:
    def __init__(self, command: str, args: argparse.Namespace, outdir: str):
        os.makedirs(outdir, exist_ok=True)
        self.path = os.path.join(outdir, "manifest.json")
        self.data = {
            "command": command,
            "config": getattr(args, "config", None),
            "seed": getattr(args, "seed", None),
            "build_id": _build_id(),
            "out": outdir,
            "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished_at": None,
        }
        self._write()

    def _write(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, sort_keys=True, indent=2)

    def finalize(self):
        self.data["finished_at"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
        self._write()


def _load_cfg(args) -> dict:
    overrides = {}
    if getattr(args, "episodes", None) is not None:
        key = "n_episodes" if args.command == "train" else "eval_episodes"
        overrides[key] = args.episodes
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        import yaml
        overrides[key] = yaml.safe_load(raw)
    return load_config(args.config, overrides)


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    manifest = Manifest("generate", args, args.out)
    scenario = data_io.generate_scenario(cfg, args.seed)
    paths = data_io.save_scenario(scenario, args.out)
    for p in paths:
        print(p)
    manifest.finalize()
    return EXIT_OK


def _metric_record(episode: int, result, lam: float) -> dict:
    return {
        "episode": episode,
        "apwt": result.metrics.apwt,
        "pf_inter": result.metrics.pf_inter,
        "pf_intra": result.metrics.pf_intra,
        "pvr": result.metrics.pvr,
        "lambda": lam,
        "mean_cost": float(np.mean(result.costs)) if result.costs else 0.0,
    }


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    manifest = Manifest("train", args, args.out)
    scenario = data_io.load_scenario(args.scenario)
    runtime = build_runtime(scenario, cfg)
    if args.resume:
        state = trainer.load_train_state(args.resume)
    else:
        state = trainer.new_train_state(cfg, runtime.features.feature_dim, args.seed)
    state, logs = trainer.train(lambda: runtime, state, int(cfg["n_episodes"]),
                                base_seed=args.seed)
    log_path = os.path.join(args.out, "training_log.jsonl")
    with open(log_path, "w") as fh:
        for rec in logs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    trainer.save_train_state(state, ckpt_path)
    eps_theta = cfg["eps_theta_rel"] * np.linalg.norm(state.theta_history[-1])
    converged = trainer.has_converged(state.theta_history, state.lambda_history,
                                      eps_theta, cfg["eps_lambda"],
                                      int(cfg["convergence_window"]))
    print(f"episodes: {state.episode}")
    print(f"lambda: {state.lam}")
    print(f"converged: {converged}")
    print(log_path)
    print(ckpt_path)
    manifest.finalize()
    return EXIT_OK


def _make_policy(args, cfg):
    name = args.policy
    if name not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")
    if name == "md":
        return baselines.MdPolicy(int(cfg["assignment_exact_cap"]))
    if name == "random":
        return baselines.RandomPolicy()
    if not args.checkpoint:
        raise DataError(f"policy {name!r} requires --checkpoint")
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    state = trainer.load_train_state(args.checkpoint)
    return trainer.ActorPolicy(state.actor, "greedy"), state.lam


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    manifest = Manifest("evaluate", args, args.out)
    scenario = data_io.load_scenario(args.scenario)
    runtime = build_runtime(scenario, cfg)
    policy = _make_policy(args, cfg)
    lam = 0.0
    if isinstance(policy, tuple):
        policy, lam = policy
    n_episodes = int(cfg["eval_episodes"])
    records, region_rows = [], []
    try:
        for ep in range(n_episodes):
            ep_seed = int(np.random.SeedSequence([args.seed, 400, ep])
                          .generate_state(1)[0])
            result = rollout(runtime, policy, ep_seed)
            records.append(_metric_record(ep, result, lam))
            for u, w in result.region_mean_waits.items():
                region_rows.append({"episode": ep, "region_id": u,
                                    "mean_wait_seconds": w})
    except ValueError as exc:
        raise DataError(f"evaluation failed: {exc}") from exc
    paths = data_io.export_results(records, region_rows, args.out)
    aggregate = {}
    for key in ("apwt", "pf_inter", "pf_intra", "pvr", "mean_cost"):
        vals = np.array([r[key] for r in records])
        aggregate[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    agg_path = os.path.join(args.out, "aggregate.json")
    with open(agg_path, "w") as fh:
        json.dump(aggregate, fh, sort_keys=True, indent=2)
    for key, v in aggregate.items():
        print(f"{key}: {v['mean']:.4f} +/- {v['std']:.4f}")
    for p in paths + [agg_path]:
        print(p)
    manifest.finalize()
    return EXIT_OK


def _mean_report(path: str) -> MetricsReport:
    records = data_io.load_results(path)
    if not records:
        raise DataError(f"no records in {path}")
    for key in ("apwt", "pf_inter", "pf_intra", "pvr"):
        if any(key not in r for r in records):
            raise DataError(f"metric {key!r} missing in {path}")
    return MetricsReport(
        apwt=float(np.mean([r["apwt"] for r in records])),
        pf_inter=float(np.mean([r["pf_inter"] for r in records])),
        pf_intra=float(np.mean([r["pf_intra"] for r in records])),
        pvr=float(np.mean([r["pvr"] for r in records])),
    )


def cmd_compare(args) -> int:
    manifest = Manifest("compare", args, args.out)
    reference = _mean_report(args.reference)
    rows = []
    for item in args.candidates:
        if "=" not in item:
            raise ConfigError(f"candidates are name=results.jsonl, got {item!r}")
        name, path = item.split("=", 1)
        ratios = decreased_ratio(_mean_report(path), reference)
        rows.append((name, ratios))
    header = ["method", "dapwt", "dpf_inter", "dpf_intra", "dpvr"]
    print("  ".join(f"{h:>12}" for h in header))
    csv_path = os.path.join(args.out, "compare.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for name, r in rows:
            print(f"{name:>12}  " + "  ".join(f"{r[k]:>12.2f}" for k in header[1:]))
            fh.write(name + "," + ",".join(repr(r[k]) for k in header[1:]) + "\n")
    print(csv_path)
    manifest.finalize()
    return EXIT_OK


def cmd_report(args) -> int:
    records = data_io.load_results(args.results)
    if not records:
        raise DataError(f"no records in {args.results}")
    keys = sorted({k for r in records for k in r
                   if isinstance(r[k], (int, float)) and k != "episode"})
    print(f"records: {len(records)}")
    for key in keys:
        vals = np.array([r[key] for r in records if key in r], dtype=float)
        print(f"{key}: mean={vals.mean():.4f} std={vals.std():.4f} "
              f"min={vals.min():.4f} max={vals.max():.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairdispatch",
        description="Fairness- and preference-aware dispatch simulator/trainer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="synthesize a scenario")
    common(p)

    p = sub.add_parser("train", help="train the constrained dispatch policy")
    common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("evaluate", help="evaluate a policy on a scenario")
    common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", required=True,
                   help="md | random | habic | habic_unconstrained | checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("compare", help="decreased-ratio table vs a reference")
    common(p)
    p.add_argument("--reference", required=True, help="reference results.jsonl")
    p.add_argument("candidates", nargs="+", metavar="NAME=RESULTS")

    p = sub.add_parser("report", help="summarize a results.jsonl")
    p.add_argument("--results", required=True)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - map anything else to exit 4
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
