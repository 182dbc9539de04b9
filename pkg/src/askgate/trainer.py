"""Compact clipped-surrogate policy-gradient trainer (numpy, single process).

Per update: collect a fixed-length rollout (episodes sample a train context
uniformly at each reset), compute GAE advantages, then run several epochs of
shuffled minibatch updates on the clipped surrogate with value and entropy
terms, optimized by Adam. Truncated episodes bootstrap the value of the
successor state; terminal episodes do not. Greedy evaluations on the eval
contexts run on a fixed timestep interval and the best-scoring parameters
are the ones returned.

Everything is float64 and driven by one seeded generator, so a seed pins the
whole run bit-for-bit. Gradients are hand-derived; ``ppo_loss`` and
``ppo_grads`` operate on a plain parameter dict so they can be checked
against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import env as env_mod
from . import metrics as metrics_mod
from . import policy as policy_mod
from .env import Outcome
from .gate import EpisodeRecord, StepRecord, config_comment
from .metrics import RunSummary
from .policy import MlpPolicy

TRAINLOG_CSV_HEADER = ["timestep", "eval_reward_mean", "eval_reward_std", "eval_len_mean"]


@dataclass(frozen=True)
class PpoConfig:
    total_timesteps: int = 1_000_000
    rollout_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    eval_interval: int = 50_000
    eval_episodes: int = 100
    max_steps: int = env_mod.DEFAULT_MAX_STEPS
    seed: int = 0

    def __post_init__(self):
        if self.total_timesteps < 0:
            raise ValueError("total_timesteps must be >= 0")
        for name in ("rollout_steps", "minibatch_size", "epochs", "learning_rate",
                     "eval_interval", "eval_episodes", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        for name in ("gamma", "gae_lambda"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class TrainLogEntry:
    timestep: int
    reward_mean: float
    reward_std: float
    length_mean: float


@dataclass(frozen=True)
class TrainLog:
    entries: tuple[TrainLogEntry, ...]
    best_index: int          # -1 when no evaluation ran
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Parameter plumbing: training works on a mutable dict of arrays; policies
# are the immutable public face.

def policy_to_params(policy: MlpPolicy) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(policy.trunk):
        params[f"w{i}"] = w.copy()
        params[f"b{i}"] = b.copy()
    params["wa"], params["ba"] = policy.action_head[0].copy(), policy.action_head[1].copy()
    params["wv"], params["bv"] = policy.value_head[0].copy(), policy.value_head[1].copy()
    return params


def _trunk_depth(params: dict[str, np.ndarray]) -> int:
    return sum(1 for k in params if k.startswith("w") and k[1:].isdigit())


def params_to_policy(params: dict[str, np.ndarray], dropout_rate: float = 0.2) -> MlpPolicy:
    depth = _trunk_depth(params)
    trunk = tuple((params[f"w{i}"].copy(), params[f"b{i}"].copy()) for i in range(depth))
    return MlpPolicy(
        trunk=trunk,
        action_head=(params["wa"].copy(), params["ba"].copy()),
        value_head=(params["wv"].copy(), params["bv"].copy()),
        dropout_rate=dropout_rate,
    )


def _policy_view(params: dict[str, np.ndarray]) -> MlpPolicy:
    """Zero-copy view for forward passes during training."""
    depth = _trunk_depth(params)
    return MlpPolicy(
        trunk=tuple((params[f"w{i}"], params[f"b{i}"]) for i in range(depth)),
        action_head=(params["wa"], params["ba"]),
        value_head=(params["wv"], params["bv"]),
        dropout_rate=0.0,
    )


# ---------------------------------------------------------------------------
# Loss and analytic gradients.

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_cached(params: dict[str, np.ndarray], obs: np.ndarray):
    depth = _trunk_depth(params)
    h = obs
    hiddens = []
    for i in range(depth):
        h = np.tanh(h @ params[f"w{i}"] + params[f"b{i}"])
        hiddens.append(h)
    logits = h @ params["wa"] + params["ba"]
    values = (h @ params["wv"] + params["bv"]).reshape(-1)
    return logits, values, hiddens


def ppo_loss(params: dict[str, np.ndarray], batch: dict[str, np.ndarray], cfg: PpoConfig) -> float:
    """Clipped surrogate + value MSE - entropy bonus on one frozen batch."""
    logits, values, _ = _forward_cached(params, batch["obs"])
    logp_all = _log_softmax(logits)
    b = np.arange(len(values))
    logp = logp_all[b, batch["actions"]]
    ratio = np.exp(logp - batch["logp_old"])
    adv = batch["advantages"]
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -np.minimum(surr1, surr2).mean()
    value_loss = ((values - batch["returns"]) ** 2).mean()
    probs = np.exp(logp_all)
    entropy = -(probs * logp_all).sum(axis=1).mean()
    return float(policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy)


def ppo_grads(
    params: dict[str, np.ndarray], batch: dict[str, np.ndarray], cfg: PpoConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus hand-derived gradients for every parameter array."""
    obs = batch["obs"]
    actions = batch["actions"]
    adv = batch["advantages"]
    n = len(actions)

    logits, values, hiddens = _forward_cached(params, obs)
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - batch["logp_old"])
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -np.minimum(surr1, surr2).mean()
    value_loss = ((values - batch["returns"]) ** 2).mean()
    per_pass_entropy = -(probs * logp_all).sum(axis=1)
    entropy = per_pass_entropy.mean()
    loss = float(policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy)

    # d(policy_loss)/dlogits: gradient flows through the unclipped branch only.
    take = surr1 <= surr2
    coeff = np.where(take, -adv * ratio, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    dz = coeff[:, None] * (onehot - probs)
    # d(-entropy_coef * mean entropy)/dlogits
    dz += (cfg.entropy_coef / n) * probs * (logp_all + per_pass_entropy[:, None])
    # d(value_coef * value mse)/dvalues
    dv = (2.0 * cfg.value_coef / n) * (values - batch["returns"])

    grads: dict[str, np.ndarray] = {}
    h_last = hiddens[-1] if hiddens else obs
    grads["wa"] = h_last.T @ dz
    grads["ba"] = dz.sum(axis=0)
    grads["wv"] = h_last.T @ dv[:, None]
    grads["bv"] = np.array([dv.sum()])
    dh = dz @ params["wa"].T + dv[:, None] @ params["wv"].T
    depth = _trunk_depth(params)
    for i in range(depth - 1, -1, -1):
        da = dh * (1.0 - hiddens[i] ** 2)
        inputs = hiddens[i - 1] if i > 0 else obs
        grads[f"w{i}"] = inputs.T @ da
        grads[f"b{i}"] = da.sum(axis=0)
        dh = da @ params[f"w{i}"].T
    return loss, grads


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            m = self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            v = self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            params[key] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Rollouts and GAE.

def _one_hot(indices: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((len(indices), dim), dtype=np.float64)
    out[np.arange(len(indices)), indices] = 1.0
    return out


def _gae(rewards, values, ends, boot, gamma: float, lam: float):
    """Advantages with episode-boundary resets; truncation bootstraps."""
    n = len(rewards)
    adv = np.zeros(n, dtype=np.float64)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if ends[t]:
            next_value, carry = boot[t], 0.0
        else:
            next_value, carry = values[t + 1] if t + 1 < n else boot[t], last
        delta = rewards[t] + gamma * next_value - values[t]
        last = adv[t] = delta + gamma * lam * carry
    return adv, adv + values


def train(train_contexts, eval_contexts, config: PpoConfig) -> tuple[MlpPolicy, TrainLog]:
    """Run the full PPO loop; returns the best-evaluated policy and its log."""
    train_contexts = list(train_contexts)
    eval_contexts = list(eval_contexts)
    if not train_contexts or not eval_contexts:
        raise ValueError("train and eval context lists must be non-empty")
    sizes = {c.grid.size for c in train_contexts} | {c.grid.size for c in eval_contexts}
    if len(sizes) != 1:
        raise ValueError(f"contexts mix grid sizes: {sorted(sizes)}")

    rng = np.random.default_rng(config.seed)
    init = policy_mod.init_policy(seed=config.seed)
    params = policy_to_params(init)
    obs_dim = init.input_dim
    adam = _Adam(params, config.learning_rate)

    entries: list[TrainLogEntry] = []
    warnings: list[str] = []
    best_index = -1
    best_mean = -math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    if config.total_timesteps == 0:
        return params_to_policy(best_params), TrainLog(tuple(entries), best_index)

    def run_eval(timestep: int) -> None:
        nonlocal best_index, best_mean
        summary = evaluate_policy(
            params_to_policy(params), eval_contexts,
            episodes=config.eval_episodes, cap=config.max_steps,
        )
        entries.append(TrainLogEntry(
            timestep=timestep,
            reward_mean=summary.reward_mean,
            reward_std=summary.reward_std,
            length_mean=summary.length_mean,
        ))
        if summary.reward_mean > best_mean:
            best_mean = summary.reward_mean
            best_index = len(entries) - 1
            for key, value in params.items():
                best_params[key][...] = value
        if (timestep >= config.total_timesteps // 2 and best_mean <= 0.0
                and not warnings):
            warnings.append(
                f"eval reward still 0 at timestep {timestep} "
                f"({config.total_timesteps} budget)"
            )

    state = env_mod.reset(train_contexts[rng.integers(len(train_contexts))])
    timestep = 0
    next_eval = config.eval_interval
    t_steps = config.rollout_steps
    obs_idx = np.zeros(t_steps, dtype=np.int64)
    actions = np.zeros(t_steps, dtype=np.int64)
    logps = np.zeros(t_steps, dtype=np.float64)
    values = np.zeros(t_steps, dtype=np.float64)
    rewards = np.zeros(t_steps, dtype=np.float64)
    ends = np.zeros(t_steps, dtype=bool)
    boot = np.zeros(t_steps, dtype=np.float64)

    while timestep < config.total_timesteps:
        view = _policy_view(params)
        for t in range(t_steps):
            obs = env_mod.encode_observation(state, dim=obs_dim)
            dist, value = policy_mod.forward(view, obs)
            action = policy_mod.select_action(dist, "sample", rng)
            next_state, reward, done = env_mod.step(state, action, config.max_steps)

            obs_idx[t] = state.row * state.context.grid.size + state.col
            actions[t] = int(action)
            logps[t] = math.log(dist[int(action)])
            values[t] = value
            rewards[t] = reward
            ends[t] = done
            boot[t] = 0.0

            if done:
                if next_state.outcome is Outcome.TRUNCATED:
                    trunc_obs = env_mod.encode_observation(next_state, dim=obs_dim)
                    boot[t] = policy_mod.forward(view, trunc_obs)[1]
                state = env_mod.reset(train_contexts[rng.integers(len(train_contexts))])
            else:
                state = next_state
        if not ends[t_steps - 1]:
            final_obs = env_mod.encode_observation(state, dim=obs_dim)
            boot[t_steps - 1] = policy_mod.forward(view, final_obs)[1]

        advantages, returns = _gae(rewards, values, ends, boot, config.gamma, config.gae_lambda)
        obs_batch = _one_hot(obs_idx, obs_dim)
        for _ in range(config.epochs):
            order = rng.permutation(t_steps)
            for start in range(0, t_steps, config.minibatch_size):
                mb = order[start:start + config.minibatch_size]
                mb_adv = advantages[mb]
                centered = (mb_adv - mb_adv.mean()) / (mb_adv.std() + 1e-8)
                batch = {
                    "obs": obs_batch[mb],
                    "actions": actions[mb],
                    "logp_old": logps[mb],
                    "advantages": centered,
                    "returns": returns[mb],
                }
                _, grads = ppo_grads(params, batch, config)
                adam.step(params, grads)

        timestep += t_steps
        while timestep >= next_eval:
            run_eval(next_eval)
            next_eval += config.eval_interval

    if not entries or entries[-1].timestep < timestep:
        run_eval(timestep)
    return params_to_policy(best_params), TrainLog(tuple(entries), best_index, tuple(warnings))


def evaluate_policy(
    policy: MlpPolicy,
    contexts,
    episodes: int = 100,
    cap: int = env_mod.DEFAULT_MAX_STEPS,
    gamma: float = 1.0,
) -> RunSummary:
    """Greedy episodes, contexts cycled round-robin; aggregated via metrics."""
    contexts = list(contexts)
    if not contexts:
        raise ValueError("evaluate_policy requires at least one context")
    records = []
    for i in range(episodes):
        records.append(greedy_episode(policy, contexts[i % len(contexts)], cap))
    return metrics_mod.aggregate(records, gamma=gamma)


def greedy_episode(policy: MlpPolicy, context, cap: int = env_mod.DEFAULT_MAX_STEPS) -> EpisodeRecord:
    """One deterministic episode with no consultation and no uncertainty."""
    state = env_mod.reset(context)
    n = context.grid.size
    steps: list[StepRecord] = []
    while not state.done:
        obs = env_mod.encode_observation(state, dim=policy.input_dim)
        dist, _ = policy_mod.forward(policy, obs)
        action = policy_mod.select_action(dist, "greedy")
        index = state.row * n + state.col
        state, reward, done = env_mod.step(state, action, cap)
        steps.append(StepRecord(
            obs_index=index, policy_action=action, uncertainty=None,
            consulted=False, lm_status="", lm_action=None,
            final_action=action, overwritten=False, reward=reward, done=done,
        ))
    return EpisodeRecord(
        context_id=context.id, steps=tuple(steps),
        reward=1 if state.outcome is Outcome.GOAL else 0,
        length=len(steps), outcome=state.outcome,
    )


def write_trainlog_csv(log: TrainLog, path: str, config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write(config_comment(config) + "\n")
        fh.write(",".join(TRAINLOG_CSV_HEADER) + "\n")
        for e in log.entries:
            fh.write(f"{e.timestep},{e.reward_mean!r},{e.reward_std!r},{e.length_mean!r}\n")
