"""MC-Dropout uncertainty decomposition over action distributions.

Given N stochastic forward passes p_1..p_N (dropout masks resampled each
pass) with mean p-bar:

* epistemic  = (1/N) sum_i KL(p_i || p-bar)   — spread between passes
* aleatoric  = (1/N) sum_i H(p_i)             — mean per-pass entropy
* total      = epistemic + aleatoric = H(p-bar)

Everything is in nats; 0 * ln 0 is taken as 0, and p-bar(a) = 0 forces every
p_i(a) = 0, so no division by zero can occur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as policy_mod
from .policy import MlpPolicy


@dataclass(frozen=True)
class UncertaintyEstimate:
    epistemic: float
    aleatoric: float
    total: float
    pass_count: int


def _as_matrix(dists) -> np.ndarray:
    mat = np.asarray(dists, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError(f"expected a non-empty list of distributions, got shape {mat.shape}")
    return mat


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0.0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def epistemic(dists) -> float:
    """Mean KL divergence of each pass from the mean distribution."""
    mat = _as_matrix(dists)
    mean = mat.mean(axis=0)
    # mean > 0 wherever any pass is positive, so the masked log never applies
    # to a cell with nonzero weight in the sum.
    log_mean = np.where(mean > 0.0, np.log(np.maximum(mean, 1e-300)), 0.0)
    per_pass = _xlogx(mat) - mat * log_mean
    return float(per_pass.sum(axis=1).mean())


def aleatoric(dists) -> float:
    """Mean entropy of the individual passes."""
    mat = _as_matrix(dists)
    return float((-_xlogx(mat).sum(axis=1)).mean())


def predictive_entropy(dists) -> float:
    """Entropy of the mean distribution (equals epistemic + aleatoric)."""
    mean = _as_matrix(dists).mean(axis=0)
    return float(-_xlogx(mean).sum())


def estimate_from_passes(dists, pass_count: int | None = None) -> UncertaintyEstimate:
    mat = _as_matrix(dists)
    e = epistemic(mat)
    a = aleatoric(mat)
    return UncertaintyEstimate(
        epistemic=e, aleatoric=a, total=e + a, pass_count=pass_count or mat.shape[0]
    )


def mc_estimate(
    policy: MlpPolicy,
    obs: np.ndarray,
    n_passes: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> UncertaintyEstimate:
    """Run N dropout passes and decompose the resulting spread.

    Deterministic given the rng seed: masks are drawn in a fixed order.
    """
    dists = policy_mod.dropout_passes(policy, obs, n_passes, dropout_rate, rng)
    return estimate_from_passes(dists, pass_count=n_passes)


def collect_passes(
    policy: MlpPolicy,
    obs: np.ndarray,
    n_passes: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """The raw (N, 4) pass distributions, for recount-style audits."""
    return policy_mod.dropout_passes(policy, obs, n_passes, dropout_rate, rng)
