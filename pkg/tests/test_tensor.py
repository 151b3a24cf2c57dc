import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_softmax

from bicameral import tensor as T
from bicameral.gradcheck import check_gradients, numeric_gradient, run_op_battery
from bicameral.tensor import (AdamState, GraphError, ShapeError, Tensor,
                              adam_step, build_graph)


def rand(rng, *shape, lo=-2.0, hi=2.0, grad=True):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_zero(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]]))
        np.testing.assert_array_equal(out.data, [[0.0]])

    def test_grad_of_sum_is_rowsums_of_b(self):
        rng = np.random.default_rng(7)
        a = rand(rng, 3, 4)
        b = rand(rng, 4, 2)
        out = T.mean(T.matmul(a, b))
        loss = T.scale(out, out.size * 6)  # mean * count = sum
        loss.backward()
        # d sum(a @ b) / da broadcasts the row sums of b across a's rows
        expected = np.tile(b.data.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)

    def test_gradcheck_fd(self):
        rng = np.random.default_rng(11)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        res = check_gradients("matmul", lambda: T.scale(T.mean(T.matmul(a, b)), 6.0),
                              [a, b], step=1e-5, rtol=1e-6)
        assert res.ok, res.row()

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow_on_extreme_logits(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_against_high_precision_formula(self):
        with mpmath.workdps(50):
            exps = [mpmath.exp(x) for x in (1, 2, 3)]
            total = sum(exps)
            expected = [float(e / total) for e in exps]
        out = T.softmax(Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.data, expected, rtol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.integers(1, 4))
    def test_rows_sum_to_one(self, row, nrows):
        x = Tensor(np.tile(np.asarray(row), (nrows, 1)) + np.arange(nrows)[:, None])
        out = T.softmax(x, axis=-1).data
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_masked_entries_get_zero_probability(self):
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        mask = np.array([[False, True, True], [False, False, True]])
        out = T.softmax(T.masked_fill(x, mask, float("-inf")), axis=-1)
        np.testing.assert_allclose(out.data[0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(out.data[1], [0.5, 0.5, 0.0])


class TestLayerNorm:
    def test_constant_row_maps_to_zeros(self):
        out = T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])

    def test_two_point_row(self):
        eps = T.LAYER_NORM_EPS
        out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, np.array([[1.0, -1.0]]) / math.sqrt(1 + eps),
                                   rtol=1e-15)

    def test_row_statistics_pre_affine(self):
        # row variance is kept well above eps so the guard's bias cannot
        # push the normalized variance outside the 1e-6 window
        rng = np.random.default_rng(3)
        x = Tensor(rng.uniform(-10.0, 10.0, size=(4, 32)))
        out = T.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-12
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-6

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        x, g, b = rand(rng, 3, 6), rand(rng, 6, lo=0.5, hi=1.5), rand(rng, 6)
        w = Tensor(rng.uniform(-1, 1, size=(3, 6)))
        res = check_gradients("layer_norm",
                              lambda: T.mean(T.mul(T.layer_norm(x, g, b), w)), [x, g, b])
        assert res.ok, res.row()


class TestConcatLast:
    def test_simple(self):
        out = T.concat_last(Tensor([[1.0]]), Tensor([[2.0, 3.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_empty_second_operand(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.concat_last(a, Tensor(np.zeros((2, 0))))
        np.testing.assert_array_equal(out.data, a.data)

    def test_gradcheck_random_shapes(self):
        rng = np.random.default_rng(9)
        for p, q in [(1, 3), (4, 2), (2, 2)]:
            a, b = rand(rng, 3, p), rand(rng, 3, q)
            w = Tensor(rng.uniform(-1, 1, size=(3, p + q)))
            res = check_gradients("concat", lambda: T.mean(T.mul(T.concat_last(a, b), w)),
                                  [a, b])
            assert res.ok, res.row()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_last(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))


class TestCrossEntropy:
    def test_uniform_logits_give_log_v(self):
        out = T.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 2])
        assert out.item() == pytest.approx(math.log(4), rel=1e-12)

    def test_confident_logits_give_near_zero(self):
        logits = np.zeros((2, 5))
        logits[0, 3] = 1000.0
        logits[1, 1] = 1000.0
        out = T.cross_entropy(Tensor(logits), [3, 1])
        assert out.item() < 1e-12

    def test_against_log_softmax_oracle(self):
        rng = np.random.default_rng(13)
        logits = rng.uniform(-2, 2, size=(6, 9))
        targets = rng.integers(0, 9, size=6)
        expected = -log_softmax(logits, axis=-1)[np.arange(6), targets].mean()
        out = T.cross_entropy(Tensor(logits), targets)
        assert out.item() == pytest.approx(expected, rel=1e-12)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError, match="out of range"):
            T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


class TestBinaryCrossEntropy:
    def test_coin_flip(self):
        out = T.binary_cross_entropy(Tensor([0.5]), Tensor([0.5]))
        assert out.item() == pytest.approx(math.log(2), rel=1e-12)

    def test_perfect_prediction(self):
        out = T.binary_cross_entropy(Tensor([1.0]), Tensor([1.0]))
        assert out.item() == pytest.approx(0.0, abs=1e-6)

    def test_against_direct_formula(self):
        rng = np.random.default_rng(17)
        p = rng.uniform(0.05, 0.95, size=(4, 3))
        y = rng.uniform(0.0, 1.0, size=(4, 3))
        expected = float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))
        out = T.binary_cross_entropy(Tensor(p), Tensor(y))
        assert out.item() == pytest.approx(expected, rel=1e-12)

    def test_clamped_entries_pass_no_gradient(self):
        p = Tensor([0.0, 0.5], requires_grad=True)
        T.binary_cross_entropy(p, Tensor([0.0, 0.0])).backward()
        assert p.grad[0] == 0.0 and p.grad[1] != 0.0


class TestBackward:
    def test_double_backward_is_an_error(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.mean(T.mul(x, x))
        loss.backward()
        with pytest.raises(GraphError, match="already ran"):
            loss.backward()

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            T.mul(x, x).backward()

    def test_each_node_visited_exactly_once(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = T.mul(x, x)
        z = T.add(y, y)      # y is shared by two consumers
        loss = T.mean(T.add(z, y))
        n_nodes = len(build_graph(loss).nodes)

        visits = []
        T._visit_hook = visits.append
        try:
            loss.backward()
        finally:
            T._visit_hook = None
        assert len(visits) == n_nodes
        assert len({id(v) for v in visits}) == n_nodes

    def test_gradient_accumulates_across_shared_consumers(self):
        x = Tensor([3.0], requires_grad=True)
        loss = T.mean(T.add(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0])

    def test_frozen_inputs_build_no_graph(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0], [4.0]])
        out = T.matmul(a, b)
        assert not out.requires_grad
        assert out._parents == ()


class TestDeterminism:
    def test_forward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(23)
        x = rng.uniform(-2, 2, size=(5, 8))
        g = rng.uniform(0.5, 1.5, size=8)
        b = rng.uniform(-1, 1, size=8)

        def run():
            t = T.layer_norm(Tensor(x), Tensor(g), Tensor(b))
            t = T.softmax(T.gelu(t), axis=-1)
            return t.data

        assert np.array_equal(run(), run())


class TestAdam:
    def test_single_step_matches_hand_computation(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        g = np.array([0.5, -1.0])
        state = AdamState.for_params([p])
        adam_step([p], [g], state, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)

        m = 0.1 * g
        v = 0.001 * g * g
        expected = np.array([1.0, -2.0]) - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        assert state.step == 1

    def test_none_gradient_treated_as_zero(self):
        p = Tensor([1.0], requires_grad=True)
        state = AdamState.for_params([p])
        adam_step([p], [None], state, lr=0.1)
        np.testing.assert_allclose(p.data, [1.0])


class TestOpBattery:
    def test_every_differentiable_op_passes_fd(self):
        results = run_op_battery(seed=0)
        bad = [r.row() for r in results if not r.ok]
        assert not bad, bad


class TestMiscOps:
    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError, match="out of range"):
            T.embedding_lookup(Tensor(np.zeros((3, 2))), np.array([0, 3]))

    def test_embedding_grad_scatters_with_repeats(self):
        table = Tensor(np.ones((3, 2)), requires_grad=True)
        out = T.embedding_lookup(table, np.array([1, 1, 0]))
        T.scale(T.mean(out), out.size).backward()
        np.testing.assert_allclose(table.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])

    def test_masked_fill_blocks_gradient(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        mask = np.array([[True, False], [False, True]])
        T.scale(T.mean(T.masked_fill(x, mask, 9.0)), 4.0).backward()
        np.testing.assert_allclose(x.grad, np.where(mask, 0.0, 1.0))

    def test_reshape_size_mismatch(self):
        with pytest.raises(ShapeError):
            T.reshape(Tensor(np.zeros((2, 3))), (4, 2))

    def test_numeric_gradient_helper_on_quadratic(self):
        # the finite-difference oracle itself: d/dx mean(x*x) = 2x/n
        x = Tensor(np.array([1.0, -0.5, 2.0]), requires_grad=True)
        num = numeric_gradient(lambda: T.mean(T.mul(x, x)), x)
        np.testing.assert_allclose(num, 2.0 * x.data / 3.0, rtol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=6))
    def test_sigmoid_range_and_symmetry(self, row):
        out = T.sigmoid(Tensor(row)).data
        assert np.all(out > 0.0) and np.all(out < 1.0)
        flipped = T.sigmoid(T.scale(Tensor(row), -1.0)).data
        np.testing.assert_allclose(out + flipped, 1.0, atol=1e-12)
