import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dyfulm import autodiff as ad
from dyfulm.autodiff import DomainError, ShapeError, Tensor, gradcheck


def leaf(x):
    return Tensor(x, requires_grad=True)


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), m).data, m.data)

    def test_hand_product(self):
        assert ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradcheck(self, rng):
        assert gradcheck(ad.matmul, [leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))]) < 1e-6

    def test_batched_and_vector_forms(self, rng):
        a = leaf(rng.standard_normal((2, 3, 4)))
        shared = leaf(rng.standard_normal((4, 5)))
        batched = leaf(rng.standard_normal((2, 4, 5)))
        vec = leaf(rng.standard_normal(4))
        assert gradcheck(ad.matmul, [a, shared]) < 1e-6
        assert gradcheck(ad.matmul, [a, batched]) < 1e-6
        assert gradcheck(ad.matmul, [a, vec]) < 1e-6


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ad.elementwise("sigmoid", Tensor(0.0)).item() == 0.5

    def test_mul_by_zeros(self):
        out = ad.elementwise("mul", Tensor([1.0, 2.0, 3.0]), Tensor([0.0, 0.0, 0.0]))
        assert out.data.tolist() == [0.0, 0.0, 0.0]

    def test_sigmoid_gradcheck(self):
        assert gradcheck(ad.sigmoid, [leaf([-2.0, 0.0, 3.0])]) < 1e-6

    def test_sigmoid_stable_at_extremes(self):
        out = ad.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(out))
        assert out.tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp", "log", "relu"])
    def test_unary_gradcheck(self, kind, rng):
        x = leaf(rng.uniform(0.2, 2.0, 6) * rng.choice([-1, 1], 6) if kind != "log" else rng.uniform(0.2, 2.0, 6))
        assert gradcheck(lambda t: ad.elementwise(kind, t), [x]) < 1e-6

    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_binary_gradcheck_with_trailing_broadcast(self, kind, rng):
        a = leaf(rng.standard_normal((3, 4)))
        b = leaf(rng.uniform(0.5, 1.5, (3, 1)))
        assert gradcheck(lambda x, y: ad.elementwise(kind, x, y), [a, b]) < 1e-6

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            ad.log(Tensor([1.0, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)) + Tensor(np.zeros(4))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ad.elementwise("cosh", Tensor(1.0))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_ln2(self):
        np.testing.assert_allclose(ad.softmax(Tensor([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3], rtol=0, atol=1e-15)

    def test_gradcheck(self, rng):
        assert gradcheck(ad.softmax, [leaf(rng.standard_normal(5))]) < 1e-6

    def test_empty_axis(self):
        with pytest.raises(ShapeError):
            ad.softmax(Tensor(np.zeros((2, 0))))

    def test_large_inputs_stay_finite(self):
        out = ad.softmax(Tensor([1000.0, 999.0, -1000.0])).data
        assert np.all(np.isfinite(out))

    @settings(max_examples=200, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6),
                      elements=st.floats(-50, 50)))
    def test_slices_sum_to_one(self, x):
        out = ad.softmax(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert np.all(out > 0) and np.all(out <= 1)


class TestReduce:
    def test_mean_axis0(self):
        assert ad.reduce("mean", Tensor([[1.0, 2.0], [3.0, 4.0]]), 0).data.tolist() == [2.0, 3.0]

    def test_sum_zeros(self):
        assert np.all(ad.reduce("sum", Tensor(np.zeros((3, 2))), 1).data == 0)

    def test_mean_single_row(self):
        row = [[1.5, -2.0, 7.0]]
        assert ad.reduce("mean", Tensor(row), 0).data.tolist() == row[0]

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            ad.reduce("sum", Tensor(np.zeros((2, 2))), 2)

    def test_gradcheck(self, rng):
        x = leaf(rng.standard_normal((3, 4)))
        assert gradcheck(lambda t: ad.reduce("mean", t, 1) * 2.0 + ad.reduce("sum", t, 1), [x]) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf([1.0, -2.0, 5.0])
        x.sum().backward()
        assert x.grad.tolist() == [1.0, 1.0, 1.0]

    def test_square(self):
        x = leaf([1.0, 2.0])
        (x * x).sum().backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_reuse_accumulates(self):
        x = leaf([3.0])
        (x * x + x + x).sum().backward()
        assert x.grad.tolist() == [8.0]

    def test_second_backward_doubles_exactly(self, rng):
        w = leaf(rng.standard_normal((3, 3)))
        x = leaf(rng.standard_normal(3))
        loss = ad.softmax(ad.tanh(w @ x)).sum() + (w * w).mean()
        loss.backward()
        first_w, first_x = w.grad.copy(), x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(w.grad, 2 * first_w)
        np.testing.assert_array_equal(x.grad, 2 * first_x)

    def test_traversal_is_reverse_creation_order(self):
        x = leaf([1.0])
        a = x * 2.0
        b = a + 1.0
        c = b * a
        order = sorted(ad._reachable(c), key=lambda t: t._order, reverse=True)
        assert [t._order for t in order] == sorted((t._order for t in (x, a, b, c)), reverse=True)
        for node in (a, b, c):
            assert all(p._order < node._order for p in node._parents)

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with ad.no_grad():
            y = x * 3.0
        assert not y.requires_grad and y.is_leaf

    def test_determinism_bitwise(self, rng):
        xs = rng.standard_normal((4, 6))

        def run():
            x = leaf(xs)
            y = ad.softmax(ad.sigmoid(x) @ Tensor(np.ones((6, 6)))).mean()
            y.backward()
            return y.data.tobytes(), x.grad.tobytes()

        assert run() == run()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_debug_mode_flags_nan(self):
        ad.set_debug(True)
        try:
            with pytest.raises(FloatingPointError):
                Tensor([np.inf]) - Tensor([np.inf])
        finally:
            ad.set_debug(False)

    def test_threads_are_independent(self, rng):
        data = rng.standard_normal((8, 5))
        results = {}

        def work(i):
            x = leaf(data)
            ad.softmax(x * float(i + 1)).mean(axis=0).sum().backward()
            results[i] = x.grad.copy()

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(4):
            x = leaf(data)
            ad.softmax(x * float(i + 1)).mean(axis=0).sum().backward()
            np.testing.assert_array_equal(results[i], x.grad)


class TestGradcheck:
    def test_identity_is_exact(self, rng):
        assert gradcheck(lambda t: t, [leaf(rng.standard_normal(7))]) == 0.0

    def test_matmul_chain(self, rng):
        a, b, c = (leaf(rng.standard_normal(s)) for s in ((2, 3), (3, 4), (4, 2)))
        assert gradcheck(lambda a, b, c: a @ b @ c, [a, b, c]) < 1e-6

    def test_softmax_of_sigmoid(self, rng):
        assert gradcheck(lambda t: ad.softmax(ad.sigmoid(t)), [leaf(rng.standard_normal(6))]) < 1e-6

    def test_reports_a_wrong_gradient(self):
        def broken_square(t):
            return ad._result(t.data**2, (t,), lambda g: (g * t.data,))  # missing factor 2

        assert gradcheck(broken_square, [leaf([1.0, 2.0])]) > 0.1

    def test_restores_inputs(self, rng):
        x = leaf(rng.standard_normal(4))
        before = x.data.copy()
        gradcheck(ad.tanh, [x])
        np.testing.assert_array_equal(x.data, before)

    def test_other_ops(self, rng):
        x = leaf(rng.standard_normal((2, 3)))
        y = leaf(rng.standard_normal((2, 3)))
        table = leaf(rng.standard_normal((5, 3)))
        assert gradcheck(lambda a, b: ad.concat([a, b], axis=-1), [x, y]) < 1e-6
        assert gradcheck(lambda a, b: ad.stack([a, b], axis=1), [x, y]) < 1e-6
        assert gradcheck(lambda a: a.reshape(3, 2).T, [x]) < 1e-6
        assert gradcheck(lambda a: a[1, 1:], [x]) < 1e-6
        assert gradcheck(lambda t: ad.take(t, [4, 0, 4]), [table]) < 1e-6
        assert gradcheck(lambda a: ad.log_softmax(a, axis=0), [x]) < 1e-6
        pos = leaf(rng.uniform(0.5, 2, 4))
        assert gradcheck(lambda a: a ** -0.5, [pos]) < 1e-6
