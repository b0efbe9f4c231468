import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradcases import INSTANCES, OPERATOR_CASES
from trustgan import ops
from trustgan.errors import ConfigError, ContractError, InvalidInputError
from trustgan.gradcheck import check_gradients, relative_error
from trustgan.optim import Adam
from trustgan.tensor import Parameter, Tensor, no_grad, tsum

finite_rows = hnp.arrays(
    np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)),
    elements=st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False))


class TestTensorBasics:
    def test_shape_matches_data(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert t.shape == (2, 3)
        assert t.size == int(np.prod(t.shape))
        assert t.data.dtype == np.float64

    def test_item_needs_single_element(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_no_grad_records_nothing(self):
        x = Parameter(np.ones(3))
        with no_grad():
            y = tsum(x * x)
        assert not y.requires_grad
        y.backward()
        assert x.grad is None

    def test_detach_breaks_the_tape(self):
        x = Parameter(np.ones(2))
        y = tsum(x.detach() * x)
        y.backward()
        np.testing.assert_array_equal(x.grad, np.ones(2))


class TestBackward:
    def test_sum_of_squares(self):
        x = Parameter([1.0, 2.0, 3.0])
        tsum(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_constant_loss_gives_zero_grad(self):
        x = Parameter([1.0, 2.0])
        (tsum(x * 0.0) + 5.0).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_raises(self):
        x = Parameter([1.0, 2.0])
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_shape_one_is_accepted(self):
        x = Parameter([3.0])
        (x * x).backward()
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_reused_node_accumulates(self):
        x = Parameter([2.0])
        y = x * x
        tsum(y + y).backward()
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_grad_shape_matches_leaf(self, rng):
        a = Parameter(rng.standard_normal((3, 4)))
        b = Parameter(rng.standard_normal(4))
        tsum((a + b) * (a + b)).backward()
        assert a.grad.shape == a.shape and b.grad.shape == b.shape

    def test_deep_chain_no_recursion_limit(self):
        x = Parameter([1.0])
        y = x
        for _ in range(5000):
            y = y * 1.0
        tsum(y).backward()
        assert x.grad[0] == 1.0

    def test_l10_matches_finite_differences(self, rng):
        from trustgan.objectives import loss_attack
        x = Tensor(rng.standard_normal((4, 5)))
        ok, worst = check_gradients(loss_attack, [x])
        assert ok, worst


class TestGradientSuite:
    @pytest.mark.parametrize("name", sorted(OPERATOR_CASES))
    def test_operator(self, name):
        rng = np.random.default_rng(sum(map(ord, name)))
        for _ in range(INSTANCES):
            fn, inputs = OPERATOR_CASES[name](rng)
            assert all(x.size <= 64 for x in inputs)
            ok, worst = check_gradients(fn, inputs, h=1e-5, tol=1e-4)
            assert ok, f"{name}: relative error {worst:.3e}"

    def test_relative_error_floor(self):
        assert relative_error([1e-12], [0.0], floor=1e-6) < 1e-5
        assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(ops.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_huge_equal_logits(self):
        out = ops.softmax(Tensor([[1000.0, 1000.0, 1000.0]])).data
        np.testing.assert_allclose(out, [[1 / 3] * 3], atol=1e-15)

    def test_one_zero(self):
        e = math.e
        np.testing.assert_allclose(ops.softmax(Tensor([[1.0, 0.0]])).data,
                                   [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
        np.testing.assert_allclose(ops.softmax(Tensor([[1.0, 0.0]])).data,
                                   [[0.73106, 0.26894]], atol=1e-5)

    def test_non_finite_rejected(self):
        for bad in (np.nan, np.inf):
            with pytest.raises(InvalidInputError):
                ops.softmax(Tensor([[0.0, bad]]))
            with pytest.raises(InvalidInputError):
                ops.logsumexp(Tensor([[0.0, bad]]))

    @settings(max_examples=200, deadline=None)
    @given(finite_rows)
    def test_rows_sum_to_one(self, x):
        s = ops.softmax(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((s >= 0) & (s <= 1))


class TestLogSumExp:
    def test_examples(self):
        assert ops.logsumexp(Tensor([[0.0, 0.0]])).data[0] == pytest.approx(math.log(2), abs=1e-12)
        assert ops.logsumexp(Tensor([[3.7]])).data[0] == 3.7
        big = ops.logsumexp(Tensor([[1000.0, 1000.0]])).data[0]
        assert big == pytest.approx(1000 + math.log(2), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(finite_rows)
    def test_bounds(self, x):
        lse = ops.logsumexp(Tensor(x)).data
        mx = x.max(axis=1)
        n = x.shape[1]
        assert np.all(lse >= mx)
        assert np.all(lse <= mx + math.log(n) + 1e-9 * np.maximum(1, np.abs(mx)))


class TestOperators:
    def test_conv_preserves_spatial_size(self, rng):
        for shape, kernel in (((2, 3, 7), (4, 3, 3)), ((1, 2, 5, 6), (3, 2, 3, 3))):
            out = ops.conv(Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(kernel)))
            assert out.shape == (shape[0], kernel[0]) + shape[2:]

    def test_conv_matches_direct_loop(self, rng):
        x = rng.standard_normal((1, 2, 4, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((1, 3, 4, 5))
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    expected[0, o, i, j] = np.sum(padded[0, :, i:i + 3, j:j + 3] * w[o])
        np.testing.assert_allclose(ops.conv(Tensor(x), Tensor(w)).data, expected, atol=1e-12)

    def test_conv_rejects_even_kernel(self, rng):
        with pytest.raises(InvalidInputError):
            ops.conv(Tensor(rng.standard_normal((1, 1, 4))), Tensor(np.ones((1, 1, 2))))

    def test_dropout_rate_zero_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert ops.dropout(x, 0.0, rng) is x

    def test_dropout_scales_kept_units(self, rng):
        out = ops.dropout(Tensor(np.ones((200, 50))), 0.3, rng).data
        assert set(np.unique(out)) <= {0.0, 1 / 0.7}
        assert abs((out == 0).mean() - 0.3) < 0.02

    def test_batch_norm_train_normalizes(self, rng):
        x = Tensor(rng.standard_normal((16, 3, 5)) * 4 + 2)
        out, (mu, var) = ops.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data.mean(axis=(0, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=(0, 2)), 1.0, atol=1e-4)
        np.testing.assert_allclose(mu, x.data.mean(axis=(0, 2)))

    def test_global_avg_pool(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_allclose(ops.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)))

    def test_forward_backward_deterministic(self, rng):
        x = rng.standard_normal((2, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        grads = []
        for _ in range(2):
            wt = Parameter(w.copy())
            tsum(ops.conv(Tensor(x), wt) ** 2).backward()
            grads.append(wt.grad)
        assert np.array_equal(grads[0], grads[1])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Parameter([1.0, -2.0])
        opt = Adam([p])
        opt.zero_grad()
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.step_count == 1

    def test_positive_gradient_descends(self):
        p = Parameter([0.0])
        opt = Adam([p])
        previous = p.data[0]
        for _ in range(10):
            p.grad = np.array([0.7])
            opt.step()
            assert p.data[0] < previous
            previous = p.data[0]
        assert opt.step_count == 10

    def test_deterministic(self, rng):
        start = rng.standard_normal(4)
        grads = rng.standard_normal((5, 4))
        finals = []
        for _ in range(2):
            p = Parameter(start.copy())
            opt = Adam([p])
            for g in grads:
                p.grad = g.copy()
                opt.step()
            finals.append(p.data.copy())
        assert np.array_equal(finals[0], finals[1])

    def test_grad_zeroed_each_step(self):
        p = Parameter([1.0, 2.0])
        opt = Adam([p])
        p.grad = np.array([5.0, 5.0])
        opt.zero_grad()
        np.testing.assert_array_equal(p.grad, [0.0, 0.0])

    def test_shape_mismatch_is_contract_error(self):
        p = Parameter([1.0, 2.0])
        opt = Adam([p])
        p.grad = np.zeros(3)
        with pytest.raises(ContractError):
            opt.step()
        assert opt.step_count == 0

    def test_moment_buffers_match_params(self, rng):
        params = [Parameter(rng.standard_normal(s)) for s in ((2, 3), (4,))]
        state = Adam(params).state_dict()
        assert [m.shape for m in state["m"]] == [p.shape for p in params]
        assert [v.shape for v in state["v"]] == [p.shape for p in params]

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            Adam([], lr=0.0)
        with pytest.raises(ConfigError):
            Adam([], betas=(1.0, 0.999))
