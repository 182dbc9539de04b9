"""Shared fixtures: context sets and the two trained policies.

The expensive fixtures are session-scoped so the acceptance tests and the
module tests share one training run each. Elapsed wall-clock time is kept
on the training results because the acceptance suite asserts runtime
budgets alongside reward thresholds.
"""

import time
from collections import namedtuple

import pytest

from askgate.env import Split, generate_context_set
from askgate.gate import GateConfig, RunMode, run_batch, write_episode_csv
from askgate.lm import RuleClient
from askgate.trainer import PpoConfig, train

CONTEXT_COUNT = 300
CONTEXT_SEED = 7

TrainResult = namedtuple("TrainResult", "policy log elapsed config")
TransferRuns = namedtuple("TransferRuns", "ask ppo csv_path gate_seconds")


@pytest.fixture(scope="session")
def contexts4():
    return generate_context_set(4, CONTEXT_COUNT, CONTEXT_SEED)


@pytest.fixture(scope="session")
def contexts6():
    return generate_context_set(6, CONTEXT_COUNT, CONTEXT_SEED)


@pytest.fixture(scope="session")
def contexts8():
    return generate_context_set(8, CONTEXT_COUNT, CONTEXT_SEED)


@pytest.fixture(scope="session")
def trained6(contexts6):
    """Full desk-scale run: 6x6, 100 train contexts, 1e6 timesteps, seed 0."""
    config = PpoConfig(total_timesteps=1_000_000, eval_interval=50_000, seed=0)
    start = time.monotonic()
    policy, log = train(contexts6.split(Split.TRAIN), contexts6.split(Split.EVAL), config)
    return TrainResult(policy, log, time.monotonic() - start, config)


@pytest.fixture(scope="session")
def trained8(contexts8):
    """8x8 policy for the downward-transfer checks (400k steps, seed 5)."""
    config = PpoConfig(total_timesteps=400_000, eval_interval=50_000, seed=5)
    start = time.monotonic()
    policy, log = train(contexts8.split(Split.TRAIN), contexts8.split(Split.EVAL), config)
    return TrainResult(policy, log, time.monotonic() - start, config)


@pytest.fixture(scope="session")
def transfer_runs(trained8, contexts4, tmp_path_factory):
    """The 8x8 policy on 4x4 test contexts: gated vs. policy-only, 100 episodes.

    The gated episode log is also written to CSV so the metric-recount test
    can audit it from the raw artifact.
    """
    test4 = contexts4.split(Split.TEST)
    ask_cfg = GateConfig(tau=0.12, mode=RunMode.ASK, seed=11)
    ppo_cfg = GateConfig(tau=0.12, mode=RunMode.PPO_ONLY, seed=11)
    start = time.monotonic()
    ask = run_batch(trained8.policy, RuleClient(), test4, ask_cfg, total_episodes=100)
    ppo = run_batch(trained8.policy, None, test4, ppo_cfg, total_episodes=100)
    gate_seconds = time.monotonic() - start
    path = tmp_path_factory.mktemp("episodes") / "ask_transfer_s4.csv"
    write_episode_csv(ask, str(path), {
        "mode": "ask", "client": "rule", "tau": 0.12, "passes": 100,
        "dropout_rate": 0.2, "seed": 11, "episodes": 100, "split": "test", "size": 4,
    })
    return TransferRuns(ask, ppo, str(path), gate_seconds)
