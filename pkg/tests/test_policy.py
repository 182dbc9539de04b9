"""Policy network: init, dropout semantics, action selection, weights file format."""

import struct

import numpy as np
import pytest

from askgate.env import Action
from askgate.policy import (
    WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
    MlpPolicy,
    WeightFormatError,
    WeightShapeError,
    WeightTruncationError,
    WeightVersionError,
    apply_dropout,
    dropout_passes,
    forward,
    forward_batch,
    init_policy,
    load_weights,
    save_weights,
    select_action,
    softmax,
)


@pytest.fixture()
def policy():
    return init_policy(seed=0)


def one_hot(index, dim=64):
    obs = np.zeros(dim)
    obs[index] = 1.0
    return obs


# ---------------------------------------------------------------------------
# Architecture and initialization


def test_default_architecture(policy):
    assert policy.input_dim == 64
    shapes = [a.shape for a in policy.parameters()]
    assert shapes == [(64, 64), (64,), (64, 64), (64,), (64, 4), (4,), (64, 1), (1,)]
    assert policy.dropout_rate == 0.2


def test_orthogonal_trunk_init(policy):
    w0 = policy.trunk[0][0]
    gram = w0 @ w0.T
    assert np.allclose(gram, 2.0 * np.eye(64), atol=1e-10)  # gain sqrt(2)
    assert np.all(policy.trunk[0][1] == 0.0)


def test_init_is_seed_deterministic():
    a, b = init_policy(seed=3), init_policy(seed=3)
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)
    c = init_policy(seed=4)
    assert any(not np.array_equal(x, y) for x, y in zip(a.parameters(), c.parameters()))


def test_init_rejects_bad_dropout_rate():
    with pytest.raises(ValueError):
        init_policy(dropout_rate=1.0)
    with pytest.raises(ValueError):
        init_policy(dropout_rate=-0.1)


# ---------------------------------------------------------------------------
# Forward passes


def test_deterministic_forward_is_a_distribution(policy):
    probs, value = forward(policy, one_hot(5))
    assert probs.shape == (4,)
    assert np.all(probs > 0) and abs(probs.sum() - 1.0) < 1e-12
    assert np.isfinite(value)
    probs2, value2 = forward(policy, one_hot(5))
    assert np.array_equal(probs, probs2) and value == value2


def test_forward_rejects_wrong_shape(policy):
    with pytest.raises(ValueError):
        forward(policy, np.zeros(32))


def test_forward_batch_matches_single(policy):
    obs = np.stack([one_hot(i) for i in (0, 5, 9)])
    probs, values, hiddens = forward_batch(policy, obs)
    assert probs.shape == (3, 4) and values.shape == (3,)
    assert len(hiddens) == 2 and hiddens[0].shape == (3, 64)
    for i in range(3):
        p, v = forward(policy, obs[i])
        assert np.allclose(probs[i], p, atol=1e-15)
        assert abs(values[i] - v) < 1e-12


def test_stochastic_forward_is_seed_reproducible(policy):
    p1, _ = forward(policy, one_hot(5), dropout_rng=np.random.default_rng(42))
    p2, _ = forward(policy, one_hot(5), dropout_rng=np.random.default_rng(42))
    p3, _ = forward(policy, one_hot(5), dropout_rng=np.random.default_rng(43))
    assert np.array_equal(p1, p2)
    assert not np.array_equal(p1, p3)


def test_dropout_passes_shape_and_determinism(policy):
    obs = one_hot(5)
    d1 = dropout_passes(policy, obs, 50, 0.2, np.random.default_rng(9))
    d2 = dropout_passes(policy, obs, 50, 0.2, np.random.default_rng(9))
    assert d1.shape == (50, 4)
    assert np.allclose(d1.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(d1, d2)
    assert len(np.unique(d1[:, 0])) > 1  # masks actually vary between passes
    with pytest.raises(ValueError):
        dropout_passes(policy, obs, 0, 0.2, np.random.default_rng(0))


def test_zero_rate_dropout_passes_equal_deterministic(policy):
    obs = one_hot(5)
    passes = dropout_passes(policy, obs, 10, 0.0, np.random.default_rng(0))
    base, _ = forward(policy, obs)
    assert np.allclose(passes, np.tile(base, (10, 1)), atol=1e-15)


def test_inverted_dropout_preserves_expectation():
    # Survivors are scaled by 1/(1-rate): the masked mean of a ones vector
    # stays within 3 sigma of 1, and the zeroed fraction within 3 sigma of rate.
    rate, n = 0.2, 200_000
    rng = np.random.default_rng(0)
    masked = apply_dropout(np.ones(n), rate, rng)
    kept = masked > 0
    assert np.all(np.isin(masked, [0.0, 1.0 / (1.0 - rate)]))
    zero_sigma = np.sqrt(rate * (1 - rate) / n)
    assert abs((1 - kept.mean()) - rate) < 3 * zero_sigma
    mean_sigma = np.sqrt((rate / (1 - rate)) / n)
    assert abs(masked.mean() - 1.0) < 3 * mean_sigma


def test_zero_rate_dropout_is_identity():
    x = np.arange(8.0)
    assert apply_dropout(x, 0.0, np.random.default_rng(0)) is x


def test_softmax_matches_reference():
    logits = np.array([2.0, -1.0, 0.5, 0.0])
    ref = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(softmax(logits), ref, atol=1e-15)
    big = softmax(np.array([1000.0, 0.0, 0.0, 0.0]))  # shift keeps it finite
    assert np.isfinite(big).all() and abs(big.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# Action selection


def test_greedy_selection_takes_argmax():
    assert select_action(np.array([0.1, 0.6, 0.2, 0.1])) is Action.DOWN
    assert select_action(np.array([0.4, 0.4, 0.1, 0.1])) is Action.UP  # tie -> lowest index


def test_sampled_selection_is_seeded():
    dist = np.array([0.25, 0.25, 0.25, 0.25])
    a = select_action(dist, "sample", np.random.default_rng(7))
    b = select_action(dist, "sample", np.random.default_rng(7))
    assert a is b
    with pytest.raises(ValueError):
        select_action(dist, "sample")
    with pytest.raises(ValueError):
        select_action(dist, "boltzmann")


def test_sampled_selection_follows_the_distribution():
    rng = np.random.default_rng(0)
    dist = np.array([0.0, 0.0, 1.0, 0.0])
    assert all(select_action(dist, "sample", rng) is Action.LEFT for _ in range(20))


# ---------------------------------------------------------------------------
# Weights file format


def test_weights_round_trip_is_bit_identical(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    loaded = load_weights(str(path), dropout_rate=0.2)
    for a, b in zip(policy.parameters(), loaded.parameters()):
        assert a.shape == b.shape
        assert np.array_equal(a, b)
    assert loaded.dropout_rate == 0.2
    obs = one_hot(5)
    assert np.array_equal(forward(policy, obs)[0], forward(loaded, obs)[0])


def test_weights_header_layout(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    blob = path.read_bytes()
    assert blob[:4] == WEIGHTS_MAGIC
    version, count = struct.unpack("<II", blob[4:12])
    assert version == WEIGHTS_VERSION and count == 8
    rows, cols = struct.unpack("<II", blob[12:20])
    assert (rows, cols) == (64, 64)
    first = np.frombuffer(blob[20:20 + 8 * 64 * 64], dtype="<f8").reshape(64, 64)
    assert np.array_equal(first, policy.trunk[0][0])


def test_bad_magic_raises_format_error(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightFormatError):
        load_weights(str(path))


def test_unknown_version_raises_version_error(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightVersionError):
        load_weights(str(path))


def test_truncated_file_raises_truncation_error(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    blob = path.read_bytes()
    for cut in (2, 10, 16, len(blob) - 5):
        path.write_bytes(blob[:cut])
        with pytest.raises(WeightTruncationError):
            load_weights(str(path))


def test_trailing_bytes_raise_shape_error(tmp_path, policy):
    path = tmp_path / "w.bin"
    save_weights(policy, str(path))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(WeightShapeError):
        load_weights(str(path))


def _write_raw(path, arrays, version=WEIGHTS_VERSION):
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", version, len(arrays)))
        for arr in arrays:
            arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
            fh.write(struct.pack("<II", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def test_inconsistent_shapes_raise_shape_error(tmp_path):
    path = str(tmp_path / "w.bin")

    # Bias length disagrees with its weight matrix.
    _write_raw(path, [np.zeros((4, 4)), np.zeros(3), np.zeros((4, 4)), np.zeros(4),
                      np.zeros((4, 1)), np.zeros(1)])
    with pytest.raises(WeightShapeError):
        load_weights(path)

    # Layer widths do not chain: 4 -> 4 trunk feeding a 5-wide action head.
    _write_raw(path, [np.zeros((4, 4)), np.zeros(4), np.zeros((5, 4)), np.zeros(4),
                      np.zeros((4, 1)), np.zeros(1)])
    with pytest.raises(WeightShapeError):
        load_weights(path)

    # Action head must emit exactly four logits.
    _write_raw(path, [np.zeros((4, 4)), np.zeros(4), np.zeros((4, 3)), np.zeros(3),
                      np.zeros((4, 1)), np.zeros(1)])
    with pytest.raises(WeightShapeError):
        load_weights(path)

    # Value head must emit exactly one value.
    _write_raw(path, [np.zeros((4, 4)), np.zeros(4), np.zeros((4, 4)), np.zeros(4),
                      np.zeros((4, 2)), np.zeros(2)])
    with pytest.raises(WeightShapeError):
        load_weights(path)

    # An odd array count cannot form (W, b) pairs.
    _write_raw(path, [np.zeros((4, 4)), np.zeros(4), np.zeros((4, 4))])
    with pytest.raises(WeightShapeError):
        load_weights(path)

    # Declared-empty arrays are rejected outright.
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, 4))
        fh.write(struct.pack("<II", 0, 4))
    with pytest.raises(WeightShapeError):
        load_weights(path)


def test_loaded_policy_without_trunk_works(tmp_path):
    # Minimum layout: action head plus value head, no trunk pairs.
    path = str(tmp_path / "w.bin")
    wa = np.arange(8.0).reshape(2, 4)
    _write_raw(path, [wa, np.zeros(4), np.zeros((2, 1)), np.zeros(1)])
    loaded = load_weights(path)
    assert loaded.trunk == ()
    assert loaded.input_dim == 2
    probs, value = forward(loaded, np.array([1.0, 0.0]))
    assert np.allclose(probs, softmax(wa[0]), atol=1e-15) and value == 0.0
