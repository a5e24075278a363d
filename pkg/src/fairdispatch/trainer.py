"""Constrained dispatch trainer: softmax matching policy over candidate drivers,
GAE advantages, clipped-surrogate policy updates on the Lagrangian objective,
dual ascent on the multiplier, and twin reward/cost value networks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .episode import STATE_DIM, Decision, EpisodeResult, Runtime, rollout


def softmax(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    z = np.exp(q - q.max())
    return z / z.sum()


def policy_distribution(features: np.ndarray, actor: nn.Mlp) -> np.ndarray:
    """Selection probabilities over candidate matching features."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need at least one candidate feature vector")
    q = actor(features).ravel()
    return softmax(q)


def select_agent(probs: np.ndarray, rng: np.random.Generator,
                 mode: str = "sample") -> int:
    probs = np.asarray(probs, dtype=float)
    if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
        raise ValueError("probabilities are not a valid distribution")
    if mode == "greedy":
        return int(np.argmax(probs))  # argmax takes the lowest index on ties
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(0, len(probs) - 1))


def discounted_returns(values, gamma: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sequence")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    out = np.empty_like(values)
    acc = 0.0
    for t in range(values.size - 1, -1, -1):
        acc = values[t] + gamma * acc
        out[t] = acc
    return out


def compute_gae(rewards, values, next_values, gamma: float, gae_lambda: float) -> np.ndarray:
    """Exponentially weighted sums of one-step residuals r + g*V' - V."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    if not (rewards.shape == values.shape == next_values.shape):
        raise ValueError("length mismatch between rewards and values")
    delta = rewards + gamma * next_values - values
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(delta.size - 1, -1, -1):
        acc = delta[t] + gamma * gae_lambda * acc
        adv[t] = acc
    return adv


def ppo_clip_term(new_logp, old_logp, advantage, eps: float):
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), elementwise."""
    ratio = np.exp(np.asarray(new_logp, dtype=float) - np.asarray(old_logp, dtype=float))
    a = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * a, np.clip(ratio, 1.0 - eps, 1.0 + eps) * a)


def lambda_update(lam: float, cost_estimate: float, budget: float, lr: float) -> float:
    """Projected dual ascent: grow the multiplier while cost exceeds the budget."""
    if lr <= 0:
        raise ValueError("lambda step size must be positive")
    return max(0.0, lam + lr * (cost_estimate - budget))


def has_converged(theta_history, lambda_history, eps_theta: float,
                  eps_lambda: float, window: int = 3) -> bool:
    """True when the last ``window`` consecutive iterates all moved within bounds."""
    if len(theta_history) < 2 or len(lambda_history) < 2:
        return False
    if len(theta_history) < window + 1:
        return False
    for i in range(-window, 0):
        dtheta = np.linalg.norm(theta_history[i] - theta_history[i - 1])
        dlam = abs(lambda_history[i] - lambda_history[i - 1])
        if dtheta > eps_theta or dlam > eps_lambda:
            return False
    return True


class ActorPolicy:
    """Per-order dispatch policy: softmax over candidate matching scores."""

    per_order = True

    def __init__(self, actor: nn.Mlp, mode: str = "sample"):
        self.actor = actor
        self.mode = mode

    def choose(self, features: np.ndarray, candidate_ids, rng) -> tuple[int, float]:
        probs = policy_distribution(features, self.actor)
        idx = select_agent(probs, rng, self.mode)
        return idx, float(np.log(probs[idx]))


@dataclass
class TrainState:
    actor: nn.Mlp
    reward_critic: nn.Mlp
    cost_critic: nn.Mlp
    lam: float
    actor_opt: nn.Adam
    reward_opt: nn.Adam
    cost_opt: nn.Adam
    cfg: dict
    episode: int = 0
    theta_history: list = field(default_factory=list)
    lambda_history: list = field(default_factory=list)


def new_train_state(cfg: dict, feature_dim: int, seed: int) -> TrainState:
    rng = np.random.default_rng([seed, 100])
    hidden = list(cfg["hidden_widths"])
    actor = nn.Mlp([feature_dim, *hidden, 1], rng)
    reward_critic = nn.Mlp([STATE_DIM, *hidden, 1], rng)
    cost_critic = nn.Mlp([STATE_DIM, *hidden, 1], rng)
    state = TrainState(
        actor=actor, reward_critic=reward_critic, cost_critic=cost_critic,
        lam=0.0,
        actor_opt=nn.Adam(actor, cfg["actor_lr"]),
        reward_opt=nn.Adam(reward_critic, cfg["critic_lr"]),
        cost_opt=nn.Adam(cost_critic, cfg["critic_lr"]),
        cfg=dict(cfg),
    )
    steps = int(cfg.get("pretrain_steps", 0))
    if steps > 0:
        pretrain_actor(state, feature_dim, rng, steps,
                       float(cfg.get("pretrain_gain", 4.0)))
    return state


def pretrain_actor(state: TrainState, feature_dim: int,
                   rng: np.random.Generator, steps: int, gain: float) -> None:
    """Warm-start the matching score toward nearest-candidate dispatch.

    The last feature component is the scaled pickup distance; regressing the
    score onto its negation makes the initial policy efficiency-first instead
    of uniform, which is the regime a live dispatcher would be refined from.
    """
    opt = nn.Adam(state.actor, state.cfg["actor_lr"] * 10.0)
    for _ in range(steps):
        x = rng.uniform(-1.0, 1.0, size=(256, feature_dim))
        target = -gain * x[:, feature_dim - 1]
        pred, cache = state.actor.forward(x)
        err = pred.ravel() - target
        grads = state.actor.backward(cache, (2.0 * err / x.shape[0])[:, None])
        opt.step(state.actor, grads)


def _critic_values(net: nn.Mlp, transitions: list[Decision]) -> tuple[np.ndarray, np.ndarray]:
    states = np.stack([d.state for d in transitions])
    next_states = np.stack([d.next_state for d in transitions])
    v = net(states).ravel()
    v_next = net(next_states).ravel()
    v_next[np.array([d.terminal for d in transitions])] = 0.0
    return v, v_next


def actor_update(transitions: list[Decision], state: TrainState,
                 rng: np.random.Generator) -> None:
    """Maximize the clipped surrogate on the harmonized advantage A_r - lam*A_c."""
    if not transitions:
        raise ValueError("empty transition batch")
    cfg = state.cfg
    eps = cfg["clip_eps"]
    adv = np.array([d.adv_r - state.lam * d.adv_c for d in transitions])
    old_logp = np.array([d.old_logp for d in transitions])
    n = len(transitions)
    mb = min(int(cfg["minibatch"]), n)
    for _ in range(int(cfg["ppo_epochs"])):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            sel = perm[start:start + mb]
            feats = np.concatenate([transitions[i].features for i in sel], axis=0)
            sizes = [transitions[i].features.shape[0] for i in sel]
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            q, cache = state.actor.forward(feats)
            q = q.ravel()
            grad_q = np.zeros_like(q)
            batch = sel.size
            for j, i in enumerate(sel):
                lo, hi = offsets[j], offsets[j + 1]
                probs = softmax(q[lo:hi])
                chosen = transitions[i].chosen
                new_logp = float(np.log(probs[chosen]))
                ratio = np.exp(new_logp - old_logp[i])
                a = adv[i]
                unclipped = ratio * a
                clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * a
                if unclipped <= clipped:  # min() selects the ratio-dependent term
                    g = unclipped / batch
                    indicator = np.zeros(hi - lo)
                    indicator[chosen] = 1.0
                    grad_q[lo:hi] = g * (indicator - probs)
            # descend on the negated surrogate
            grads = state.actor.backward(cache, -grad_q[:, None])
            state.actor_opt.step(state.actor, grads)


def critic_update(transitions: list[Decision], state: TrainState,
                  rng_reward: np.random.Generator,
                  rng_cost: np.random.Generator | None = None) -> None:
    """Regress each value net toward its one-step bootstrapped target."""
    if not transitions:
        raise ValueError("empty transition batch")
    cfg = state.cfg
    rewards = np.array([d.reward for d in transitions])
    costs = np.array([d.cost for d in transitions])
    _regress(state.reward_critic, state.reward_opt, transitions, rewards,
             cfg["gamma_r"], int(cfg["ppo_epochs"]), int(cfg["minibatch"]), rng_reward)
    if cfg.get("use_cost_critic", True) and rng_cost is not None:
        _regress(state.cost_critic, state.cost_opt, transitions, costs,
                 cfg["gamma_c"], int(cfg["ppo_epochs"]), int(cfg["minibatch"]), rng_cost)


def _regress(net: nn.Mlp, opt: nn.Adam, transitions: list[Decision],
             signal: np.ndarray, gamma: float, epochs: int, minibatch: int,
             rng: np.random.Generator) -> None:
    states = np.stack([d.state for d in transitions])
    next_states = np.stack([d.next_state for d in transitions])
    terminal = np.array([d.terminal for d in transitions])
    n = len(transitions)
    mb = min(minibatch, n)
    for _ in range(epochs):
        # targets frozen for the duration of one pass
        v_next = net(next_states).ravel()
        v_next[terminal] = 0.0
        targets = signal + gamma * v_next
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            sel = perm[start:start + mb]
            pred, cache = net.forward(states[sel])
            err = pred.ravel() - targets[sel]
            grads = net.backward(cache, (2.0 * err / sel.size)[:, None])
            opt.step(net, grads)


def attach_advantages(transitions: list[Decision], state: TrainState) -> None:
    """Compute GAE for the reward and cost streams and store them per decision."""
    cfg = state.cfg
    rewards = np.array([d.reward for d in transitions])
    vr, vr_next = _critic_values(state.reward_critic, transitions)
    adv_r = compute_gae(rewards, vr, vr_next, cfg["gamma_r"], cfg["gae_lambda"])
    std = adv_r.std()
    adv_r = (adv_r - adv_r.mean()) / std if std > 0 else adv_r - adv_r.mean()
    if cfg.get("use_cost_critic", True):
        costs = np.array([d.cost for d in transitions])
        vc, vc_next = _critic_values(state.cost_critic, transitions)
        adv_c = compute_gae(costs, vc, vc_next, cfg["gamma_c"], cfg["gae_lambda"])
    else:
        adv_c = np.zeros_like(adv_r)
    for d, ar, ac in zip(transitions, adv_r, adv_c):
        d.adv_r = float(ar)
        d.adv_c = float(ac)


def cost_estimate(transitions: list[Decision], cfg: dict) -> float:
    costs = np.array([d.cost for d in transitions]) if transitions else np.zeros(1)
    if cfg["cost_accounting"] == "discounted":
        return float(np.sum(costs * cfg["gamma_c"] ** np.arange(costs.size)))
    return float(costs.sum())


def train(env_factory, state: TrainState, n_episodes: int,
          base_seed: int = 0) -> tuple[TrainState, list[dict]]:
    """Alternating optimization: rollout, critic fit, policy step, dual step."""
    cfg = state.cfg
    runtime: Runtime = env_factory()
    actor_rng = np.random.default_rng([base_seed, 200])
    reward_rng = np.random.default_rng([base_seed, 201])
    cost_rng = np.random.default_rng([base_seed, 202])
    logs: list[dict] = []
    state.theta_history.append(state.actor.flat_parameters())
    state.lambda_history.append(state.lam)
    for _ in range(n_episodes):
        ep_seed = int(np.random.SeedSequence([base_seed, 300, state.episode])
                      .generate_state(1)[0])
        result = rollout(runtime, ActorPolicy(state.actor, "sample"), ep_seed,
                         collect_transitions=True)
        if result.transitions:
            attach_advantages(result.transitions, state)
            critic_update(result.transitions, state, reward_rng, cost_rng)
            actor_update(result.transitions, state, actor_rng)
        if not cfg.get("freeze_lambda", False):
            state.lam = lambda_update(state.lam,
                                      cost_estimate(result.transitions, cfg),
                                      cfg["cost_budget"], cfg["lambda_lr"])
        state.episode += 1
        state.theta_history.append(state.actor.flat_parameters())
        state.lambda_history.append(state.lam)
        if len(state.theta_history) > 64:
            del state.theta_history[0]
            del state.lambda_history[0]
        logs.append({
            "episode": state.episode,
            "mean_reward": float(np.mean(result.rewards)) if result.rewards else 0.0,
            "mean_cost": float(np.mean(result.costs)) if result.costs else 0.0,
            "episode_cost": result.episode_cost,
            "lambda": state.lam,
            "apwt": result.metrics.apwt,
            "pf_inter": result.metrics.pf_inter,
            "pf_intra": result.metrics.pf_intra,
            "pvr": result.metrics.pvr,
            "wait_spread": result.wait_spread,
            "region_mean_waits": {str(u): w for u, w in result.region_mean_waits.items()},
        })
        eps_theta = cfg["eps_theta_rel"] * np.linalg.norm(state.theta_history[-1])
        if has_converged(state.theta_history, state.lambda_history,
                         eps_theta, cfg["eps_lambda"],
                         int(cfg["convergence_window"])):
            break
    return state, logs


# -- checkpointing -----------------------------------------------------------

def save_train_state(state: TrainState, path: str) -> None:
    payload = {
        "format": "trainstate-v1",
        "actor": state.actor.to_dict(),
        "reward_critic": state.reward_critic.to_dict(),
        "cost_critic": state.cost_critic.to_dict(),
        "lambda": state.lam,
        "actor_opt": state.actor_opt.to_dict(),
        "reward_opt": state.reward_opt.to_dict(),
        "cost_opt": state.cost_opt.to_dict(),
        "episode": state.episode,
        "cfg": state.cfg,
    }
    nn.save_checkpoint(path, payload)


def load_train_state(path: str) -> TrainState:
    d = nn.load_checkpoint(path)
    if d.get("format") != "trainstate-v1":
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    actor = nn.Mlp.from_dict(d["actor"])
    reward_critic = nn.Mlp.from_dict(d["reward_critic"])
    cost_critic = nn.Mlp.from_dict(d["cost_critic"])
    state = TrainState(
        actor=actor, reward_critic=reward_critic, cost_critic=cost_critic,
        lam=d["lambda"],
        actor_opt=nn.Adam.from_dict(d["actor_opt"], actor),
        reward_opt=nn.Adam.from_dict(d["reward_opt"], reward_critic),
        cost_opt=nn.Adam.from_dict(d["cost_opt"], cost_critic),
        cfg=d["cfg"], episode=d["episode"],
    )
    state.theta_history.append(actor.flat_parameters())
    state.lambda_history.append(state.lam)
    return state
