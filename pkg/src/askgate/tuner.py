"""Seeded random search over the consultation threshold tau.

Ten uniform trials over a bounded 1-D range stand in for a Bayesian
optimizer: trial 1 is pinned to the midpoint as a reproducibility anchor,
the rest are drawn from the study seed. The best tau maximizes mean eval
reward with ties resolved toward the larger tau (fewer consultations at
equal reward). Tuning only ever sees Eval-split contexts; the constructor
refuses anything else, and each trial records the context ids it touched so
logs can be audited afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics as metrics_mod
from .env import Split
from .gate import GateConfig, RunMode, config_comment, run_batch
from .policy import MlpPolicy

DEFAULT_LO = 0.10
DEFAULT_HI = 1.20
DEFAULT_TRIALS = 10

STUDY_CSV_HEADER = ["trial", "tau", "reward_mean", "reward_std", "ir_pct", "or_pct"]


@dataclass(frozen=True)
class TrialRecord:
    trial: int                      # 1-based
    tau: float
    reward_mean: float
    reward_std: float
    ir_percent: float
    or_percent: float
    context_ids: tuple[int, ...]    # audit trail: contexts this trial touched


@dataclass(frozen=True)
class TuneStudy:
    lo: float
    hi: float
    trials: int
    seed: int
    records: tuple[TrialRecord, ...]
    best_tau: float
    best_reward: float


def tune_threshold(
    policy: MlpPolicy,
    client,
    eval_contexts,
    lo: float = DEFAULT_LO,
    hi: float = DEFAULT_HI,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    episodes_per_trial: int = 100,
    gate: GateConfig | None = None,
) -> TuneStudy:
    """Search [lo, hi] for the reward-maximizing tau on the Eval split.

    ``gate`` supplies everything but tau and mode (passes, dropout rate,
    cap, episode seed); the mode is forced to ask.
    """
    eval_contexts = list(eval_contexts)
    if not eval_contexts:
        raise ValueError("tune_threshold requires at least one eval context")
    offsplit = [c.id for c in eval_contexts if c.split is not Split.EVAL]
    if offsplit:
        raise ValueError(f"tuning must only read Eval-split contexts; got ids {offsplit}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    base = gate if gate is not None else GateConfig()
    rng = np.random.default_rng(seed)
    taus = [(lo + hi) / 2.0]
    taus.extend(float(rng.uniform(lo, hi)) for _ in range(trials - 1))

    records: list[TrialRecord] = []
    for i, tau in enumerate(taus, start=1):
        cfg = replace(base, tau=tau, mode=RunMode.ASK)
        eps = run_batch(policy, client, eval_contexts, cfg, total_episodes=episodes_per_trial)
        summary = metrics_mod.aggregate(eps)
        records.append(TrialRecord(
            trial=i,
            tau=tau,
            reward_mean=summary.reward_mean,
            reward_std=summary.reward_std,
            ir_percent=summary.ir_percent,
            or_percent=summary.or_percent,
            context_ids=tuple(sorted({ep.context_id for ep in eps})),
        ))

    best = records[0]
    for rec in records[1:]:
        if rec.reward_mean > best.reward_mean or (
            rec.reward_mean == best.reward_mean and rec.tau > best.tau
        ):
            best = rec
    return TuneStudy(
        lo=lo, hi=hi, trials=trials, seed=seed,
        records=tuple(records), best_tau=best.tau, best_reward=best.reward_mean,
    )


def write_study_csv(study: TuneStudy, path: str, config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write(config_comment(config) + "\n")
        fh.write(",".join(STUDY_CSV_HEADER) + "\n")
        for r in study.records:
            fh.write(
                f"{r.trial},{r.tau!r},{r.reward_mean!r},{r.reward_std!r},"
                f"{r.ir_percent!r},{r.or_percent!r}\n"
            )
