"""Adam update semantics and training determinism."""

import numpy as np
import pytest

import jere.ndcore as nd
from oracles import adam_scalar


class TestAdamStep:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = nd.Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        before = p.data.copy()
        state = nd.AdamState(learning_rate=0.1)
        nd.adam_step({"p": p}, {"p": np.zeros(2, dtype=np.float32)}, state)
        np.testing.assert_array_equal(p.data, before)
        assert state.step == 1

    def test_single_scalar_matches_hand_formula(self):
        p = nd.Tensor(np.array([0.5]), requires_grad=True)
        state = nd.AdamState(learning_rate=0.1)
        nd.adam_step({"p": p}, {"p": np.array([1.0])}, state)
        expected, _, _ = adam_scalar(0.5, 1.0, step=1, lr=0.1)
        assert abs(p.data[0] - expected) < 1e-9

    def test_identical_tensors_stay_identical(self):
        a = nd.Tensor(np.full(3, 0.25, dtype=np.float32), requires_grad=True)
        b = nd.Tensor(np.full(3, 0.25, dtype=np.float32), requires_grad=True)
        g = np.array([0.1, -0.4, 2.0], dtype=np.float32)
        state = nd.AdamState()
        for _ in range(5):
            nd.adam_step({"a": a, "b": b}, {"a": g.copy(), "b": g.copy()}, state)
        np.testing.assert_array_equal(a.data, b.data)

    def test_nan_gradient_names_parameter(self):
        p = nd.Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(ValueError, match="non-finite gradient for parameter 'bad'"):
            nd.adam_step({"bad": p}, {"bad": np.array([np.nan])}, nd.AdamState())

    def test_missing_grad_entry_is_zero_gradient(self):
        p = nd.Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        state = nd.AdamState()
        nd.adam_step({"p": p}, {}, state)
        np.testing.assert_array_equal(p.data, [1.0])

    def test_repeated_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(77)
            w = nd.uniform_init(rng, (4, 3), dtype=np.float32)
            state = nd.AdamState(learning_rate=1e-2)
            x = rng.normal(size=3).astype(np.float32)
            for _ in range(10):
                nd.zero_grads([w])
                with nd.Graph() as g:
                    out = nd.matmul(w, nd.Tensor(x))
                    loss = nd.tensor_sum(nd.mul(out, out))
                nd.backward(g, loss, [w])
                nd.adam_step({"w": w}, {"w": w.grad}, state)
            return w.data.tobytes()

        assert run() == run()


class TestFiniteDiffCheck:
    def test_quadratic_loss_is_exact_to_float_noise(self):
        rng = np.random.default_rng(12)
        params = {"x": nd.Tensor(rng.normal(size=5), requires_grad=True)}

        def fn(p):
            return nd.tensor_sum(nd.mul(p["x"], p["x"]))

        assert nd.finite_diff_check(fn, params, epsilon=1e-5) < 1e-8
