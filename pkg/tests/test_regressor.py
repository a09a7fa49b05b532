import math

import numpy as np
import pytest

from bridgelab import rng
from bridgelab.errors import DimensionError, DivergenceError, FormatError
from bridgelab.regressor import (AdamState, GradientBuffer, RegressorParams, adam_step, backward,
                                 forward, load_params, params_from_bytes, params_to_bytes,
                                 save_params, time_features)

from oracles import finite_difference_check, random_net

# Pure-python straight-line forward of the net below (see golden_net); frozen.
GOLDEN = [0.6760150603867549, 0.022723931807471606]


def golden_net():
    p = RegressorParams.initialize((3 + 4, 5, 2), rng.stream(7, 0), time_embed_dim=4)
    for b in p.biases:
        b += 0.1
    return p


class TestForward:
    def test_zero_network(self):
        p = RegressorParams.zeros_like(random_net(0))
        out, _ = forward(p, np.ones(8))
        assert np.array_equal(out, np.zeros(4))

    def test_identity_linear(self):
        p = RegressorParams((3, 3), 0, "silu", [np.eye(3)], [np.zeros(3)])
        x = np.array([1.5, -2.0, 0.25])
        assert np.array_equal(p(x), x)

    def test_golden(self):
        out = golden_net()(np.array([0.3, -1.2, 0.7]), 0.25)
        np.testing.assert_allclose(out, GOLDEN, rtol=1e-13)

    def test_batch_matches_rows(self):
        p = random_net(1, ted=4, dims=(12, 16, 8))
        x = np.random.default_rng(2).standard_normal((5, 8))
        t = np.linspace(0.1, 0.9, 5)
        batch = p(x, t)
        for i in range(5):
            np.testing.assert_allclose(batch[i], p(x[i], t[i]), rtol=1e-13)

    def test_errors(self):
        p = random_net(0)
        with pytest.raises(DimensionError):
            forward(p, np.ones(7))
        with pytest.raises(DivergenceError):
            forward(p, np.full(8, np.nan))
        with pytest.raises(ValueError):
            forward(p, np.ones(8), 0.5)
        with pytest.raises(ValueError):
            forward(random_net(0, dims=(12, 4, 4), ted=4), np.ones(8))

    def test_time_features(self):
        f = time_features(0.0, 16)
        assert f.shape == (1, 16)
        np.testing.assert_array_equal(f[0, :8], 0.0)
        np.testing.assert_array_equal(f[0, 8:], 1.0)


class TestBackward:
    def test_zero_output_grad(self):
        p = random_net(0)
        _, tape = forward(p, np.ones(8))
        grads = backward(p, tape, np.zeros(4))
        assert all(not np.any(a) for a in grads.arrays())

    def test_linear_outer_product(self):
        g = np.random.default_rng(3)
        w, b = g.standard_normal((3, 2)), g.standard_normal(2)
        p = RegressorParams((3, 2), 0, "tanh", [w], [b])
        x, gout = g.standard_normal(3), g.standard_normal(2)
        _, tape = forward(p, x)
        grads = backward(p, tape, gout)
        np.testing.assert_allclose(grads.weights[0], np.outer(x, gout), rtol=1e-14)
        np.testing.assert_allclose(grads.biases[0], gout, rtol=1e-14)

    @pytest.mark.parametrize("activation", ["silu", "tanh"])
    def test_finite_differences(self, activation):
        p = random_net(4, dims=(5, 6, 3), ted=2, activation=activation)
        x = np.random.default_rng(5).standard_normal((3, 3))
        assert finite_difference_check(p, x, np.array([0.1, 0.5, 0.9]), 6) < 1e-4

    def test_tape_mismatch(self):
        _, tape = forward(random_net(0), np.ones(8))
        with pytest.raises(DimensionError):
            backward(random_net(0, dims=(8, 4)), tape, np.ones(4))
        with pytest.raises(DimensionError):
            backward(random_net(0), tape, np.ones(3))


def reference_adam(w, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = [0.0] * len(w)
    v = [0.0] * len(w)
    w = list(w)
    for n in range(1, steps + 1):
        g = grad_fn(w)
        for i in range(len(w)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1**n)
            vh = v[i] / (1 - b2**n)
            w[i] -= lr * mh / (math.sqrt(vh) + eps)
    return w


def scalar_params(values):
    values = np.asarray(values, dtype=float)
    return RegressorParams((len(values), 1), 0, "silu", [values.reshape(-1, 1).copy()], [np.zeros(1)])


class TestAdam:
    def test_zero_gradient(self):
        p = random_net(0)
        before = [a.copy() for a in p.arrays()]
        state = AdamState.for_params(p)
        for m in state.m:
            m += 1.0
        zero = GradientBuffer([np.zeros_like(w) for w in p.weights],
                              [np.zeros_like(b) for b in p.biases])
        adam_step(p, zero, state, 1e-3)
        assert state.m[0][0, 0] == pytest.approx(0.9)
        # nonzero first moment from the seeded state still moves params; a fresh state must not
        fresh = random_net(0)
        adam_step(fresh, zero, AdamState.for_params(fresh), 1e-3)
        assert all(np.array_equal(a, b) for a, b in zip(fresh.arrays(), before))

    def test_single_step_on_bowl(self):
        p = scalar_params([1.0])
        grads = GradientBuffer([2.0 * p.weights[0]], [np.zeros(1)])
        adam_step(p, grads, AdamState.for_params(p), 0.1)
        assert abs(p.weights[0][0, 0]) < 1.0

    def test_quadratic_matches_reference(self):
        start = [0.6, 0.8]
        curv = [1.0, 10.0]
        p = scalar_params(start)
        state = AdamState.for_params(p)
        for _ in range(200):
            w = p.weights[0][:, 0]
            g = GradientBuffer([(2.0 * np.array(curv) * w).reshape(-1, 1)], [np.zeros(1)])
            adam_step(p, g, state, 0.05)
        ref = reference_adam(start, lambda w: [2 * c * x for c, x in zip(curv, w)], 0.05, 200)
        np.testing.assert_allclose(p.weights[0][:, 0], ref, rtol=1e-12, atol=1e-15)
        assert math.hypot(*ref) < 1e-2

    def test_rejects_non_finite(self):
        p = scalar_params([1.0])
        with pytest.raises(DivergenceError):
            adam_step(p, GradientBuffer([np.array([[np.inf]])], [np.zeros(1)]),
                      AdamState.for_params(p), 0.1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = random_net(9, dims=(20, 7, 4), ted=16, activation="tanh")
        path = save_params(tmp_path / "net.brlb", p)
        q = load_params(path)
        assert q.layer_dims == p.layer_dims and q.time_embed_dim == 16 and q.activation == "tanh"
        assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
        assert params_to_bytes(q) == path.read_bytes()

    def test_layout(self):
        p = RegressorParams((2, 1), 0, "tanh", [np.array([[1.0], [2.0]])], [np.array([3.0])])
        blob = params_to_bytes(p)
        assert blob[:4] == b"BRLB"
        assert blob[4:8] == (1).to_bytes(4, "little")
        assert blob[8:12] == (2).to_bytes(4, "little")
        assert blob[12:20] == b"\x02\x00\x00\x00\x01\x00\x00\x00"
        assert blob[20:25] == b"\x00\x00\x00\x00\x01"
        assert np.frombuffer(blob[25:], "<f8").tolist() == [1.0, 2.0, 3.0]

    def test_corrupt(self):
        blob = params_to_bytes(random_net(0))
        with pytest.raises(FormatError):
            params_from_bytes(b"XXXX" + blob[4:])
        with pytest.raises(FormatError):
            params_from_bytes(blob[:-8])
        with pytest.raises(FormatError):
            params_from_bytes(blob + b"\x00")
