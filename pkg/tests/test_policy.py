import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reinsure_nn.model import NumericalError
from reinsure_nn.policy import (
    MlpArchitecture,
    MlpPolicy,
    eval_retention,
    eval_retention_batch,
    init_policy,
    load_policy,
    policy_from_bytes,
    policy_to_bytes,
    retention_text,
    save_policy,
    zero_policy,
)

ARCH = MlpArchitecture()


def test_default_parameter_count():
    # (1*32 + 32) + (32*32 + 32) + (32*1 + 1)
    assert ARCH.parameter_count == 1153
    assert init_policy(ARCH, 0).parameter_count == 1153


def test_init_deterministic_and_seeded():
    a, b, c = init_policy(ARCH, 5), init_policy(ARCH, 5), init_policy(ARCH, 6)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), c.flat())


def test_init_scheme():
    p = init_policy(MlpArchitecture(zero_output_init=False), 1)
    for w, b in zip(p.weights, p.biases):
        bound = np.sqrt(6.0 / sum(w.shape))
        assert np.all(np.abs(w) <= bound)
        assert w.std() > bound / 4
        assert not b.any()


def test_zero_readout_init_gives_constant_half():
    p = init_policy(ARCH, 1)
    assert not p.weights[-1].any()
    assert p.weights[0].any()
    assert np.all(eval_retention_batch(p, np.linspace(-3, 30, 50)) == 0.5)


def test_zero_weights_give_half():
    p = zero_policy(ARCH)
    assert eval_retention(p, 0.0) == 0.5
    assert np.all(eval_retention_batch(p, np.linspace(-5, 50, 7)) == 0.5)


def test_constructed_single_unit():
    arch = MlpArchitecture(hidden_layers=(1,))
    p = MlpPolicy(arch, [np.zeros((1, 1)), np.array([[10.0]])], [np.zeros(1), np.zeros(1)])
    assert eval_retention(p, 3.7) == 0.5


def test_hand_computed_forward():
    arch = MlpArchitecture(hidden_layers=(2,))
    w1 = np.array([[0.5, -1.0]])
    b1 = np.array([0.1, 0.2])
    w2 = np.array([[2.0], [1.0]])
    b2 = np.array([-0.3])
    p = MlpPolicy(arch, [w1, w2], [b1, b2])
    x = 1.5
    o = 2.0 * np.tanh(0.5 * x + 0.1) + np.tanh(-x + 0.2) - 0.3
    assert eval_retention(p, x) == pytest.approx(1.0 / (1.0 + np.exp(-o)), rel=1e-14)


def test_batch_bit_identical_to_scalar_loop():
    p = init_policy(MlpArchitecture(zero_output_init=False), 3)
    xs = np.random.default_rng(0).uniform(-5, 20, size=500)
    batch = eval_retention_batch(p, xs)
    assert np.array_equal(batch, np.array([eval_retention(p, x) for x in xs]))


def test_batch_permutation_and_constant():
    p = init_policy(MlpArchitecture(zero_output_init=False), 3)
    xs = np.linspace(-2, 12, 101)
    perm = np.random.default_rng(1).permutation(101)
    assert np.array_equal(eval_retention_batch(p, xs)[perm], eval_retention_batch(p, xs[perm]))
    const = eval_retention_batch(p, np.full(40, 2.5))
    assert np.all(const == const[0])
    assert eval_retention_batch(p, [4.0])[0] == eval_retention(p, 4.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), x=st.floats(-30, 30), scale=st.floats(0.1, 3.0))
def test_range_open_interval(seed, x, scale):
    p = init_policy(MlpArchitecture(zero_output_init=False), seed)
    p = p.with_flat(p.flat() * scale)
    assert 0.0 < eval_retention(p, x) < 1.0


def test_nonfinite_input():
    with pytest.raises(NumericalError):
        eval_retention(init_policy(ARCH, 0), np.nan)


def test_time_feature():
    arch = MlpArchitecture(input_dim=2, hidden_layers=(8,), zero_output_init=False)
    p = init_policy(arch, 2)
    assert p.parameter_count == 2 * 8 + 8 + 8 + 1
    assert eval_retention(p, 1.0, step=0) != eval_retention(p, 1.0, step=5)


def test_input_normalization():
    arch = MlpArchitecture(input_shift=1.0, input_scale=4.0, zero_output_init=False)
    raw = init_policy(MlpArchitecture(zero_output_init=False), 9)
    normed = MlpPolicy(arch, raw.weights, raw.biases)
    assert eval_retention(normed, 9.0) == eval_retention(raw, 2.0)


def test_checkpoint_roundtrip(tmp_path):
    arch = MlpArchitecture(hidden_layers=(5, 3), input_shift=1.0, input_scale=10.0, zero_output_init=False)
    p = init_policy(arch, 12)
    path = tmp_path / "p.bin"
    save_policy(p, path)
    q = load_policy(path)
    assert q.architecture == arch
    grid = np.linspace(-1, 10, 221)
    assert np.array_equal(eval_retention_batch(p, grid), eval_retention_batch(q, grid))


def test_checkpoint_layout():
    p = init_policy(MlpArchitecture(hidden_layers=(2,)), 1)
    data = policy_to_bytes(p)
    assert data[:6] == b"RNNPOL"
    tail = np.frombuffer(data[-8 * p.parameter_count:], dtype="<f8")
    # layer order, row-major: W0 (1x2), b0, W1 (2x1), b1
    assert np.array_equal(tail[:2], p.weights[0].ravel())
    assert np.array_equal(tail[-1:], p.biases[1])
    with pytest.raises(ValueError):
        policy_from_bytes(b"garbage")


def test_retention_text():
    txt = retention_text(zero_policy(ARCH), [0.0, 1.5])
    lines = txt.strip().splitlines()
    assert lines[0].startswith("#")
    assert lines[1:] == ["0 0.5", "1.5 0.5"]


def test_architecture_validation():
    with pytest.raises(ValueError):
        MlpArchitecture(hidden_layers=())
    with pytest.raises(ValueError):
        MlpArchitecture(hidden_layers=(0,))
    with pytest.raises(ValueError):
        MlpArchitecture(hidden_activation="relu")
