"""Primitive op tests: forward values, gradients, masked softmax contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import jere.ndcore as nd
from oracles import masked_softmax_direct


def t64(data, grad=True):
    return nd.Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestSoftmaxMasked:
    def test_single_support(self):
        p = nd.softmax_masked(t64([5.0, -2.0]), np.array([True, False]))
        np.testing.assert_array_equal(p.data, [1.0, 0.0])

    def test_symmetry_all_kept(self):
        p = nd.softmax_masked(t64([3.3, 3.3, 3.3]), np.array([True, True, True]))
        np.testing.assert_allclose(p.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)

    def test_partial_mask_matches_direct_evaluation(self):
        keep = np.array([True, False, True])
        p = nd.softmax_masked(t64([1.0, 2.0, 3.0]), keep)
        expected = masked_softmax_direct([1.0, 2.0, 3.0], keep)
        np.testing.assert_allclose(p.data, expected, atol=1e-12)
        assert p.data[1] == 0.0

    def test_all_masked_is_an_error(self):
        with pytest.raises(ValueError, match="empty support"):
            nd.softmax_masked(t64([1.0, 2.0]), np.array([False, False]))

    def test_gradient_zero_at_masked_positions(self):
        logits = t64([0.3, -1.0, 2.0, 0.1])
        keep = np.array([True, False, True, False])
        with nd.Graph() as g:
            p = nd.softmax_masked(logits, keep)
            loss = nd.gather(p, 2)
        nd.backward(g, loss)
        assert logits.grad[1] == 0.0 and logits.grad[3] == 0.0
        assert logits.grad[0] != 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_distribution_over_kept_indices(self, data):
        n = data.draw(st.integers(1, 12))
        logits = data.draw(st.lists(
            st.floats(-30, 30, allow_nan=False), min_size=n, max_size=n))
        keep = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
        if not any(keep):
            keep[data.draw(st.integers(0, n - 1))] = True
        keep = np.array(keep)
        p = nd.softmax_masked(t64(logits), keep).data
        assert abs(p.sum() - 1.0) < 1e-6
        assert (p[~keep] == 0.0).all()
        assert (p >= 0.0).all()


class TestArithmeticGrads:
    def test_linear_loss_has_analytic_grads(self):
        rng = np.random.default_rng(0)
        w = t64(rng.normal(size=(3, 4)))
        x = t64(rng.normal(size=4))
        with nd.Graph() as g:
            loss = nd.tensor_sum(nd.matmul(w, x))
        nd.backward(g, loss)
        np.testing.assert_allclose(w.grad, np.broadcast_to(x.data, (3, 4)), atol=1e-12)
        np.testing.assert_allclose(x.grad, w.data.sum(axis=0), atol=1e-12)

    def test_detached_parameter_gets_zero_grad(self):
        used = t64([1.0, 2.0])
        unused = t64([[3.0, 4.0]])
        with nd.Graph() as g:
            loss = nd.tensor_sum(used)
        nd.backward(g, loss, params=[used, unused])
        np.testing.assert_array_equal(unused.grad, np.zeros_like(unused.data))

    def test_nonscalar_loss_rejected(self):
        v = t64([1.0, 2.0])
        with nd.Graph() as g:
            out = nd.scale(v, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            nd.backward(g, out)

    def test_reused_tensor_accumulates(self):
        x = t64([2.0])
        with nd.Graph() as g:
            loss = nd.tensor_sum(nd.mul(x, x))
        nd.backward(g, loss)
        np.testing.assert_allclose(x.grad, [4.0])

    def test_composite_chain_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        params = {
            "w": t64(rng.normal(size=(4, 3))),
            "v": t64(rng.normal(size=4)),
            "b": t64(rng.normal(size=4)),
        }
        x_fixed = rng.normal(size=3)

        def fn(p):
            x = nd.Tensor(x_fixed)
            h = nd.tanh(nd.add(nd.matmul(p["w"], x), p["b"]))
            sm = nd.softmax(nd.mul(h, p["v"]))
            return nd.scale(nd.log(nd.gather(sm, 1)), -1.0)

        assert nd.finite_diff_check(fn, params, epsilon=1e-6) < 1e-8

    def test_ops_outside_graph_do_not_record(self):
        x = t64([1.0, 2.0])
        y = nd.scale(x, 3.0)
        assert y.grad is None
        with nd.Graph() as g:
            nd.scale(x, 3.0)
        assert len(g) == 1


class TestShapingOps:
    def test_concat_axis0_and_axis1_grads(self):
        a = t64([[1.0, 2.0]])
        b = t64([[3.0, 4.0]])
        with nd.Graph() as g:
            cat = nd.concat([a, b], axis=1)
            loss = nd.tensor_sum(nd.mul(cat, cat))
        nd.backward(g, loss)
        np.testing.assert_allclose(a.grad, 2 * a.data)
        np.testing.assert_allclose(b.grad, 2 * b.data)

    def test_rows_lookup_accumulates_repeated_ids(self):
        table = t64(np.arange(6, dtype=np.float64).reshape(3, 2))
        with nd.Graph() as g:
            picked = nd.rows(table, [1, 1, 2])
            loss = nd.tensor_sum(picked)
        nd.backward(g, loss)
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])

    def test_max_rows_routes_grad_to_argmax(self):
        m = t64([[1.0, 5.0], [3.0, 2.0]])
        with nd.Graph() as g:
            loss = nd.tensor_sum(nd.max_rows(m))
        nd.backward(g, loss)
        np.testing.assert_array_equal(m.grad, [[0, 1], [1, 0]])

    def test_avg_pool_rows_values(self):
        m = t64([[0.0, 2.0], [4.0, 6.0], [8.0, 10.0]])
        pooled = nd.avg_pool_rows(m, 2)
        np.testing.assert_allclose(pooled.data, [[2.0, 4.0], [6.0, 8.0]])

    def test_tile_row_grad_sums(self):
        v = t64([1.0, 2.0])
        with nd.Graph() as g:
            loss = nd.tensor_sum(nd.tile_row(v, 3))
        nd.backward(g, loss)
        np.testing.assert_array_equal(v.grad, [3.0, 3.0])


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = t64([1.0, 2.0])
        assert nd.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_inference_mode_is_identity(self):
        x = t64([1.0, 2.0])
        assert nd.dropout(x, 0.9, False) is x

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            nd.dropout(t64([1.0]), 1.0, True, np.random.default_rng(0))
        with pytest.raises(ValueError):
            nd.dropout(t64([1.0]), -0.1, True, np.random.default_rng(0))

    def test_keep_fraction_statistics(self):
        rng = np.random.default_rng(42)
        x = nd.Tensor(np.ones(200_000, dtype=np.float32))
        out = nd.dropout(x, 0.3, True, rng)
        kept = np.count_nonzero(out.data) / x.data.size
        assert abs(kept - 0.7) < 0.02
        # inverted scaling: kept activations are 1/(1-rate)
        nonzero = out.data[out.data != 0]
        np.testing.assert_allclose(nonzero, 1.0 / 0.7, rtol=1e-6)

    def test_preserves_dtype(self):
        x = nd.Tensor(np.ones(10, dtype=np.float32))
        out = nd.dropout(x, 0.5, True, np.random.default_rng(0))
        assert out.data.dtype == np.float32
