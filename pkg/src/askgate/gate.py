"""Uncertainty-gated episode loop: the policy acts, high total uncertainty
triggers a language-model consultation, and a valid parsed action overrides.

Modes:

* ``ppo`` — the policy acts alone; the LM is never consulted.
* ``lm``  — the LM is consulted at every step (policy action as fallback).
* ``ask`` — the LM is consulted exactly when total uncertainty >= tau.

Uncertainty is computed and logged in every mode so intervention statistics
can be recomputed from logs; it gates only in ``ask`` mode. An LM action
never outlives the step it was requested for: every step starts from the
policy's own greedy action.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass

import numpy as np

from . import env as env_mod
from . import lm as lm_mod
from . import policy as policy_mod
from . import uncertainty as unc_mod
from .env import Action, Context, Outcome
from .uncertainty import UncertaintyEstimate

EPISODE_CSV_HEADER = [
    "episode", "step", "obs", "policy_action",
    "u_epistemic", "u_aleatoric", "u_total",
    "consulted", "lm_raw_status", "lm_action", "final_action",
    "overwritten", "reward", "done",
]


class RunMode(enum.Enum):
    PPO_ONLY = "ppo"
    LM_ONLY = "lm"
    ASK = "ask"


@dataclass(frozen=True)
class GateConfig:
    tau: float = 0.5
    passes: int = 100
    dropout_rate: float = 0.2
    mode: RunMode = RunMode.ASK
    max_steps: int = env_mod.DEFAULT_MAX_STEPS
    seed: int = 0
    timeout: float = lm_mod.DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    obs_index: int
    policy_action: Action
    uncertainty: UncertaintyEstimate | None   # None only for ungated greedy rollouts
    consulted: bool
    lm_status: str            # "" | ok | parse_failure | invalid_action | transport_error
    lm_action: Action | None
    final_action: Action
    overwritten: bool
    reward: int
    done: bool


@dataclass(frozen=True)
class EpisodeRecord:
    context_id: int
    steps: tuple[StepRecord, ...]
    reward: int
    length: int
    outcome: Outcome


def _episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode_index])


def run_episode(
    policy: policy_mod.MlpPolicy,
    client,
    context: Context,
    cfg: GateConfig,
    episode_index: int = 0,
) -> EpisodeRecord:
    """Play one gated episode; deterministic given cfg.seed, episode_index,
    and a deterministic client."""
    if cfg.mode is not RunMode.PPO_ONLY and client is None:
        raise ValueError(f"mode {cfg.mode.value} requires a client")
    rng = _episode_rng(cfg.seed, episode_index)
    state = env_mod.reset(context)
    steps: list[StepRecord] = []
    while not state.done:
        obs = env_mod.encode_observation(state, dim=policy.input_dim)
        dist, _ = policy_mod.forward(policy, obs)
        policy_action = policy_mod.select_action(dist, "greedy")
        estimate = unc_mod.mc_estimate(policy, obs, cfg.passes, cfg.dropout_rate, rng)

        if cfg.mode is RunMode.ASK:
            consulted = estimate.total >= cfg.tau
        else:
            consulted = cfg.mode is RunMode.LM_ONLY

        lm_status = ""
        lm_action: Action | None = None
        final_action = policy_action
        if consulted:
            view = env_mod.local_view(state)
            prompt = lm_mod.build_prompt(lm_mod.PromptContext(**view, autopilot=policy_action))
            try:
                raw = lm_mod.query(client, prompt, timeout=cfg.timeout)
            except lm_mod.LmTransportError:
                lm_status = "transport_error"
            else:
                decision = lm_mod.parse_decision(raw)
                lm_status = decision.status
                if decision.is_action:
                    lm_action = decision.action
                    final_action = decision.action

        state, reward, done = env_mod.step(state, final_action, cfg.max_steps)
        steps.append(StepRecord(
            obs_index=int(np.argmax(obs)),
            policy_action=policy_action,
            uncertainty=estimate,
            consulted=consulted,
            lm_status=lm_status,
            lm_action=lm_action,
            final_action=final_action,
            overwritten=lm_action is not None and lm_action != policy_action,
            reward=reward,
            done=done,
        ))
    return EpisodeRecord(
        context_id=context.id,
        steps=tuple(steps),
        reward=1 if state.outcome is Outcome.GOAL else 0,
        length=len(steps),
        outcome=state.outcome,
    )


def run_batch(
    policy: policy_mod.MlpPolicy,
    client,
    contexts,
    cfg: GateConfig,
    total_episodes: int = 100,
) -> list[EpisodeRecord]:
    """Round-robin over contexts; per-episode seeds derive from (seed, index)."""
    contexts = list(contexts)
    if not contexts:
        raise ValueError("run_batch requires at least one context")
    return [
        run_episode(policy, client, contexts[i % len(contexts)], cfg, episode_index=i)
        for i in range(total_episodes)
    ]


def config_comment(config: dict) -> str:
    """Deterministic one-line config snapshot embedded atop CSV artifacts."""
    return "# config " + json.dumps(config, sort_keys=True, separators=(",", ":"))


def write_episode_csv(records, path: str, config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write(config_comment(config) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_CSV_HEADER)
        for ep_index, record in enumerate(records):
            for step_index, s in enumerate(record.steps):
                u = s.uncertainty
                writer.writerow([
                    ep_index,
                    step_index,
                    s.obs_index,
                    s.policy_action.name,
                    repr(u.epistemic) if u else "",
                    repr(u.aleatoric) if u else "",
                    repr(u.total) if u else "",
                    int(s.consulted),
                    s.lm_status,
                    s.lm_action.name if s.lm_action is not None else "",
                    s.final_action.name,
                    int(s.overwritten),
                    s.reward,
                    int(s.done),
                ])
