"""Intervention/overwrite rates, reward aggregation, and report rendering.

Conventions: std is the population standard deviation (divisor N), which
reproduces sqrt(p*(1-p)) for binary rewards; the reporting discount defaults
to 1.0 so reward means read as success rates; IR and OR are averaged per
episode and reported as percentages.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from . import env as env_mod
from .env import Context, Outcome, TileKind
from .gate import EpisodeRecord, config_comment

SUMMARY_CSV_HEADER = [
    "size", "model", "mode", "split",
    "reward_mean", "reward_std", "len_mean", "len_std",
    "ir_pct", "or_pct", "episodes", "tau", "seed",
]

LM_MODE_FOOTNOTE = "note: lm mode consults every step; prompts still carry the policy autopilot line"


@dataclass(frozen=True)
class RunSummary:
    reward_mean: float
    reward_std: float
    length_mean: float
    length_std: float
    ir_percent: float
    or_percent: float
    episode_count: int
    gamma: float = 1.0


@dataclass(frozen=True)
class SummaryRow:
    """A RunSummary plus the run metadata that names it in reports."""

    size: int
    model: str
    mode: str
    split: str
    tau: float
    seed: int
    summary: RunSummary


def intervention_rate(ep: EpisodeRecord) -> float:
    """Fraction of steps on which the LM was consulted."""
    if ep.length < 1:
        raise ValueError("empty episode has no intervention rate")
    return sum(1 for s in ep.steps if s.consulted) / ep.length


def overwrite_rate(ep: EpisodeRecord) -> float:
    """Fraction of consulted steps whose action was overwritten; 0 if none."""
    consulted = sum(1 for s in ep.steps if s.consulted)
    if consulted == 0:
        return 0.0
    return sum(1 for s in ep.steps if s.overwritten) / consulted


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def episode_return(ep: EpisodeRecord, gamma: float) -> float:
    return sum((gamma ** i) * s.reward for i, s in enumerate(ep.steps))


def aggregate(eps, gamma: float = 1.0) -> RunSummary:
    """Means/population-stds of per-episode return and length, plus IR/OR."""
    eps = list(eps)
    if not eps:
        raise ValueError("aggregate requires at least one episode")
    rewards = [episode_return(ep, gamma) for ep in eps]
    lengths = [float(ep.length) for ep in eps]
    r_mean, r_std = _mean_std(rewards)
    l_mean, l_std = _mean_std(lengths)
    ir = sum(intervention_rate(ep) for ep in eps) / len(eps)
    orate = sum(overwrite_rate(ep) for ep in eps) / len(eps)
    return RunSummary(
        reward_mean=r_mean,
        reward_std=r_std,
        length_mean=l_mean,
        length_std=l_std,
        ir_percent=100.0 * ir,
        or_percent=100.0 * orate,
        episode_count=len(eps),
        gamma=gamma,
    )


def format_mean_std(mean: float, std: float) -> str:
    """Two-decimal rendering used throughout reports, e.g. '0.93 ± 0.26'."""
    return f"{mean:.2f} ± {std:.2f}"


def summary_csv_row(row: SummaryRow) -> list:
    s = row.summary
    return [
        row.size, row.model, row.mode, row.split,
        repr(s.reward_mean), repr(s.reward_std),
        repr(s.length_mean), repr(s.length_std),
        repr(s.ir_percent), repr(s.or_percent),
        s.episode_count, repr(row.tau), row.seed,
    ]


def render_summary_csv(rows) -> str:
    lines = [",".join(SUMMARY_CSV_HEADER)]
    for row in rows:
        lines.append(",".join(str(v) for v in summary_csv_row(row)))
    return "\n".join(lines) + "\n"


def render_summary_table(rows) -> str:
    """Fixed-width table mirroring the Reward | Length | IR (%) | OR (%) layout."""
    rows = list(rows)
    header = ["Size", "Model", "Mode", "Split", "Reward", "Length", "IR (%)", "OR (%)"]
    body = []
    for row in rows:
        s = row.summary
        body.append([
            str(row.size), row.model, row.mode.lower(), row.split.lower(),
            format_mean_std(s.reward_mean, s.reward_std),
            format_mean_std(s.length_mean, s.length_std),
            f"{s.ir_percent:.2f}",
            f"{s.or_percent:.2f}",
        ])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
              for i in range(len(header))]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in body)
    if any(row.mode.lower() == "lm" for row in rows):
        lines.append("")
        lines.append(LM_MODE_FOOTNOTE)
    return "\n".join(lines) + "\n"


def render_trajectory(context: Context, ep: EpisodeRecord) -> str:
    """Grid overlay of one episode: S start, G goal, * visited, H holes."""
    grid = context.grid
    state = env_mod.reset(context)
    visited = set()
    for s in ep.steps:
        state, _, _ = env_mod.step(state, s.final_action, max_steps=len(ep.steps) + 1)
        visited.add((state.row, state.col))
    rows = []
    for r in range(grid.size):
        chars = []
        for c in range(grid.size):
            tile = grid.tile(r, c)
            if tile is TileKind.START:
                chars.append("S")
            elif tile is TileKind.GOAL:
                chars.append("G")
            elif (r, c) in visited:
                chars.append("*")
            elif tile is TileKind.HOLE:
                chars.append("H")
            else:
                chars.append(".")
        rows.append("".join(chars))
    rows.append(f"context {ep.context_id}: outcome {ep.outcome.value}, "
                f"reward {ep.reward}, length {ep.length}")
    return "\n".join(rows) + "\n"


def render_report(data, fmt: str) -> str:
    """Dispatch to one of the three renderers; unknown formats raise."""
    if fmt == "csv":
        return render_summary_csv(data)
    if fmt == "table":
        return render_summary_table(data)
    if fmt == "trajectory":
        context, ep = data
        return render_trajectory(context, ep)
    raise ValueError(f"unknown report format: {fmt!r}")


def write_summary_csv(rows, path: str, config: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write(config_comment(config) + "\n")
        fh.write(render_summary_csv(rows))


def read_summary_csv(path: str) -> list[SummaryRow]:
    rows: list[SummaryRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != SUMMARY_CSV_HEADER:
        raise ValueError(f"unexpected summary header in {path}: {reader.fieldnames}")
    for rec in reader:
        summary = RunSummary(
            reward_mean=float(rec["reward_mean"]),
            reward_std=float(rec["reward_std"]),
            length_mean=float(rec["len_mean"]),
            length_std=float(rec["len_std"]),
            ir_percent=float(rec["ir_pct"]),
            or_percent=float(rec["or_pct"]),
            episode_count=int(rec["episodes"]),
        )
        rows.append(SummaryRow(
            size=int(rec["size"]), model=rec["model"], mode=rec["mode"],
            split=rec["split"], tau=float(rec["tau"]), seed=int(rec["seed"]),
            summary=summary,
        ))
    return rows
