"""Feed-forward stochastic policy with inference-time dropout and binary weights I/O.

The network is a tanh MLP trunk (default 64->64->64) with separate linear
action and value heads. Dropout is applied only at inference, after each
hidden activation, using inverted scaling so expected activations match the
deterministic pass. Training itself never uses dropout.

Weights file layout (little-endian): magic ``MLPW``, version u32, array count
u32, then per array rows u32, cols u32, row-major f64 data. Arrays appear as
trunk (W, b) pairs followed by the action head (W, b) and value head (W, b);
biases are stored with rows = 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .env import Action

N_ACTIONS = 4

WEIGHTS_MAGIC = b"MLPW"
WEIGHTS_VERSION = 1


class WeightsError(RuntimeError):
    """Base class for weights-file problems."""


class WeightFormatError(WeightsError):
    """File does not start with the expected magic bytes."""


class WeightVersionError(WeightsError):
    """File carries an unsupported format version."""


class WeightShapeError(WeightsError):
    """Array shapes are inconsistent with an MLP policy."""


class WeightTruncationError(WeightsError):
    """File ends before all declared data was read."""


@dataclass(frozen=True)
class MlpPolicy:
    """Immutable parameter bundle; all forward passes are read-only."""

    trunk: tuple[tuple[np.ndarray, np.ndarray], ...]
    action_head: tuple[np.ndarray, np.ndarray]
    value_head: tuple[np.ndarray, np.ndarray]
    dropout_rate: float = 0.2

    @property
    def input_dim(self) -> int:
        if self.trunk:
            return self.trunk[0][0].shape[0]
        return self.action_head[0].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in serialization order."""
        out: list[np.ndarray] = []
        for w, b in self.trunk:
            out.extend((w, b))
        out.extend(self.action_head)
        out.extend(self.value_head)
        return out


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    if rows < cols:
        a = a.T
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(
    input_dim: int = 64,
    hidden: tuple[int, ...] = (64, 64),
    dropout_rate: float = 0.2,
    seed: int = 0,
) -> MlpPolicy:
    """Orthogonal-initialized policy (gain sqrt(2) trunk, 0.01/1.0 heads)."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    trunk = []
    width = input_dim
    for size in hidden:
        trunk.append((_orthogonal(rng, width, size, np.sqrt(2.0)), np.zeros(size)))
        width = size
    action = (_orthogonal(rng, width, N_ACTIONS, 0.01), np.zeros(N_ACTIONS))
    value = (_orthogonal(rng, width, 1, 1.0), np.zeros(1))
    return MlpPolicy(tuple(trunk), action, value, dropout_rate)


def apply_dropout(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: zero units w.p. ``rate``, scale survivors by 1/(1-rate)."""
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(
    policy: MlpPolicy,
    obs: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> tuple[np.ndarray, float]:
    """One forward pass: (action distribution, state value).

    Deterministic when ``dropout_rng`` is None; otherwise each hidden
    activation is masked independently. ``dropout_rate`` overrides the
    policy's stored rate when given.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (policy.input_dim,):
        raise ValueError(f"observation shape {obs.shape} does not match input_dim {policy.input_dim}")
    rate = policy.dropout_rate if dropout_rate is None else dropout_rate
    h = obs
    for w, b in policy.trunk:
        h = np.tanh(h @ w + b)
        if dropout_rng is not None:
            h = apply_dropout(h, rate, dropout_rng)
    wa, ba = policy.action_head
    wv, bv = policy.value_head
    probs = softmax(h @ wa + ba)
    value = float((h @ wv + bv)[0])
    return probs, value


def forward_batch(policy: MlpPolicy, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Deterministic batched pass returning (probs, values, hidden activations).

    The activation list (one entry per trunk layer) feeds the trainer's
    backward pass.
    """
    h = np.asarray(obs, dtype=np.float64)
    hiddens: list[np.ndarray] = []
    for w, b in policy.trunk:
        h = np.tanh(h @ w + b)
        hiddens.append(h)
    wa, ba = policy.action_head
    wv, bv = policy.value_head
    probs = softmax(h @ wa + ba)
    values = (h @ wv + bv).reshape(-1)
    return probs, values, hiddens


def dropout_passes(
    policy: MlpPolicy,
    obs: np.ndarray,
    n_passes: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """N stochastic action distributions for one observation, shape (N, 4).

    Masks are drawn in a fixed layer order from the caller's rng, so the
    result is seed-deterministic; passes are evaluated as one batch.
    """
    if n_passes < 1:
        raise ValueError("n_passes must be >= 1")
    obs = np.asarray(obs, dtype=np.float64)
    h = np.tile(obs, (n_passes, 1))
    for w, b in policy.trunk:
        h = np.tanh(h @ w + b)
        if dropout_rate > 0.0:
            keep = rng.random(h.shape) >= dropout_rate
            h = np.where(keep, h / (1.0 - dropout_rate), 0.0)
    wa, ba = policy.action_head
    return softmax(h @ wa + ba)


def select_action(dist: np.ndarray, mode: str = "greedy", rng: np.random.Generator | None = None) -> Action:
    """Greedy argmax (ties toward the lowest action index) or seeded sampling."""
    if mode == "greedy":
        return Action(int(np.argmax(dist)))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        return Action(int(rng.choice(N_ACTIONS, p=dist)))
    raise ValueError(f"unknown selection mode: {mode!r}")


def save_weights(policy: MlpPolicy, path: str) -> None:
    arrays = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in policy.parameters()]
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(arrays)))
        for arr in arrays:
            rows, cols = arr.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_exact(fh, size: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise WeightTruncationError(f"file ended while reading {what}")
    return data


def load_weights(path: str, dropout_rate: float = 0.2) -> MlpPolicy:
    """Load a policy; raises a distinct error per failure mode (see module doc)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic bytes")
        if magic != WEIGHTS_MAGIC:
            raise WeightFormatError(f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != WEIGHTS_VERSION:
            raise WeightVersionError(f"unsupported weights version {version}")
        if count < 4 or count % 2 != 0:
            raise WeightShapeError(f"array count {count} cannot form trunk plus two heads")
        arrays = []
        for i in range(count):
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, f"shape of array {i}"))
            if rows == 0 or cols == 0:
                raise WeightShapeError(f"array {i} declares empty shape {rows}x{cols}")
            raw = _read_exact(fh, 8 * rows * cols, f"data of array {i}")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64))
        if fh.read(1):
            raise WeightShapeError("trailing bytes after declared arrays")
    pairs = [(arrays[i], arrays[i + 1]) for i in range(0, count, 2)]
    for i, (w, b) in enumerate(pairs):
        if b.shape != (1, w.shape[1]):
            raise WeightShapeError(
                f"pair {i}: bias shape {b.shape} does not match weight {w.shape}"
            )
    *trunk_pairs, action, value = pairs
    width = trunk_pairs[0][0].shape[0] if trunk_pairs else action[0].shape[0]
    for i, (w, _) in enumerate(pairs):
        if w.shape[0] != width:
            raise WeightShapeError(f"pair {i}: weight rows {w.shape[0]}, expected {width}")
        if i < len(trunk_pairs):
            width = w.shape[1]
    if action[0].shape[1] != N_ACTIONS:
        raise WeightShapeError(f"action head has {action[0].shape[1]} outputs, expected {N_ACTIONS}")
    if value[0].shape[1] != 1:
        raise WeightShapeError(f"value head has {value[0].shape[1]} outputs, expected 1")
    trunk = tuple((w, b.reshape(-1)) for w, b in trunk_pairs)
    return MlpPolicy(
        trunk=trunk,
        action_head=(action[0], action[1].reshape(-1)),
        value_head=(value[0], value[1].reshape(-1)),
        dropout_rate=dropout_rate,
    )
