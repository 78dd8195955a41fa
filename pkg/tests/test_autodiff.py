import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import l3doc.autodiff as ad
from l3doc.autodiff import ShapeError, Tensor

import oracles


def rnd(rng, *shape):
    return rng.normal(size=shape)


class TestChannelContract:
    def test_n1_identity(self):
        c = Tensor(np.array([[[1.0]]]))
        d = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = ad.channel_contract(c, d)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_zero_factor_annihilates(self):
        rng = np.random.default_rng(0)
        c = Tensor(np.zeros((1, 1, 2)))
        d = Tensor(rnd(rng, 2, 3, 4))
        assert np.all(ad.channel_contract(c, d).data == 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        c = Tensor(rnd(rng, 1, 1, 3))
        d = Tensor(rnd(rng, 3, 4, 5))
        got = ad.channel_contract(c, d).data
        want = oracles.channel_contract_loops(c.data, d.data)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        c = Tensor(np.zeros((1, 1, 2)))
        d = Tensor(np.zeros((3, 4, 5)))
        with pytest.raises(ShapeError, match=r"\(1, 1, 2\).*\(3, 4, 5\)"):
            ad.channel_contract(c, d)


class TestTransposedConv2d:
    def test_1x1_scalar_product(self):
        x = Tensor(np.full((1, 1, 1), 3.0))
        k = Tensor(np.full((1, 1, 1, 1), -2.0))
        out = ad.transposed_conv2d(x, k)
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == -6.0

    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        x = Tensor(rnd(rng, 3, 4, 2))
        k = np.zeros((2, 2, 2, 2))
        k[0, 0] = np.eye(2)
        out = ad.transposed_conv2d(x, Tensor(k))
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_scatter_add_oracle(self):
        rng = np.random.default_rng(3)
        x = Tensor(rnd(rng, 2, 3, 2))
        k = Tensor(rnd(rng, 2, 2, 3, 2))
        got = ad.transposed_conv2d(x, k).data
        want = oracles.transposed_conv2d_scatter(x.data, k.data)
        assert got.shape == (2, 3, 3)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_zero_size_spatial_rejected(self):
        with pytest.raises(ShapeError):
            ad.transposed_conv2d(Tensor(np.zeros((0, 2, 1))), Tensor(np.zeros((2, 2, 1, 1))))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.transposed_conv2d(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((2, 2, 4, 2))))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3),
           st.integers(1, 3), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    def test_oracle_equivalence_random_shapes(self, h, w, ci, s, co, seed):
        rng = np.random.default_rng(seed)
        x = rnd(rng, h, w, ci)
        k = rnd(rng, s, s, co, ci)
        got = ad.transposed_conv2d(Tensor(x), Tensor(k)).data
        want = oracles.transposed_conv2d_scatter(x, k)
        assert np.max(np.abs(got - want)) <= 1e-12


class TestMaxPoolPoints:
    def test_definition(self):
        out = ad.max_pool_points(Tensor([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [3.0, 5.0])

    def test_single_point_identity(self):
        out = ad.max_pool_points(Tensor([[4.0, -7.0]]))
        np.testing.assert_array_equal(out.data, [4.0, -7.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
    def test_permutation_invariance_bitwise(self, n, f, seed):
        rng = np.random.default_rng(seed)
        x = rnd(rng, n, f)
        perm = rng.permutation(n)
        a = ad.max_pool_points(Tensor(x)).data
        b = ad.max_pool_points(Tensor(x[perm])).data
        assert np.array_equal(a, b)

    def test_tie_breaks_to_lowest_index(self):
        x = ad.parameter(np.array([[2.0, 1.0], [2.0, 3.0]]))
        out = ad.max_pool_points(x)
        loss = ad.sum_all(out)
        loss.backward()
        # column 0 ties at 2.0; the gradient must land on row 0
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])

    def test_batched_pooling(self):
        rng = np.random.default_rng(4)
        x = rnd(rng, 3, 5, 2)
        out = ad.max_pool_points(Tensor(x))
        np.testing.assert_array_equal(out.data, x.max(axis=1))


class TestSoftmax:
    def test_symmetry(self):
        out = ad.softmax(Tensor([3.7, 3.7]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_singleton(self):
        np.testing.assert_array_equal(ad.softmax(Tensor([42.0])).data, [1.0])

    def test_hand_arithmetic(self):
        out = ad.softmax(Tensor([0.0, 0.0, np.log(2.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.25, 0.5], atol=1e-14)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            ad.softmax(Tensor(np.zeros((0,))))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
           st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, vals, shift):
        v = np.array(vals)
        p = ad.softmax(Tensor(v)).data
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) <= 1e-12
        q = ad.softmax(Tensor(v + shift)).data
        assert np.max(np.abs(p - q)) <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        v = rnd(rng, 9)
        got = ad.softmax(Tensor(v)).data
        want = oracles.softmax_loops(v)
        assert np.max(np.abs(got - want)) <= 1e-12


class TestSqL2Diff:
    def test_equal_inputs_zero(self):
        rng = np.random.default_rng(6)
        x = rnd(rng, 3, 3)
        assert ad.sq_l2_diff(Tensor(x), Tensor(x.copy())).item() == 0.0

    def test_arithmetic(self):
        out = ad.sq_l2_diff(Tensor([1.0, 2.0]), Tensor([0.0, 0.0]))
        assert out.item() == 5.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        a, b = rnd(rng, 4, 5), rnd(rng, 4, 5)
        got = ad.sq_l2_diff(Tensor(a), Tensor(b)).item()
        assert abs(got - oracles.sq_l2_diff_loops(a, b)) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.sq_l2_diff(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestStandardOps:
    def test_matmul_identity(self):
        rng = np.random.default_rng(8)
        a = rnd(rng, 3, 4)
        out = ad.matmul(Tensor(a), Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.data, a)

    def test_matmul_zero(self):
        rng = np.random.default_rng(9)
        a = rnd(rng, 3, 4)
        assert np.all(ad.matmul(Tensor(a), Tensor(np.zeros((4, 2)))).data == 0.0)

    def test_matmul_matches_loop_oracle(self):
        rng = np.random.default_rng(10)
        a, b = rnd(rng, 4, 6), rnd(rng, 6, 3)
        got = ad.matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(got - oracles.matmul_loops(a, b))) <= 1e-12

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_add_identity_and_zero(self):
        rng = np.random.default_rng(11)
        a = rnd(rng, 5)
        np.testing.assert_array_equal(ad.add(Tensor(a), Tensor(np.zeros(5))).data, a)

    def test_add_random_vs_loop(self):
        rng = np.random.default_rng(12)
        a, b = rnd(rng, 7), rnd(rng, 7)
        want = np.array([x + y for x, y in zip(a, b)])
        assert np.max(np.abs(ad.add(Tensor(a), Tensor(b)).data - want)) <= 1e-12

    def test_add_broadcast_gradient(self):
        x = ad.parameter(np.zeros((3, 2)))
        bias = ad.parameter(np.array([1.0, -1.0]))
        loss = ad.sum_all(ad.add(x, bias))
        loss.backward()
        np.testing.assert_array_equal(bias.grad, [3.0, 3.0])

    def test_scale_identity_zero_random(self):
        rng = np.random.default_rng(13)
        a = rnd(rng, 4)
        np.testing.assert_array_equal(ad.scale(Tensor(a), 1.0).data, a)
        assert np.all(ad.scale(Tensor(a), 0.0).data == 0.0)
        want = np.array([2.5 * x for x in a])
        assert np.max(np.abs(ad.scale(Tensor(a), 2.5).data - want)) <= 1e-12

    def test_relu_identity_zero_random(self):
        rng = np.random.default_rng(14)
        a = np.abs(rnd(rng, 6))
        np.testing.assert_array_equal(ad.relu(Tensor(a)).data, a)
        assert np.all(ad.relu(Tensor(-a)).data == 0.0)
        mixed = rnd(rng, 20)
        want = np.array([max(0.0, x) for x in mixed])
        np.testing.assert_array_equal(ad.relu(Tensor(mixed)).data, want)

    def test_mean_identity_zero_random(self):
        assert ad.mean(Tensor([7.0])).item() == 7.0
        assert ad.mean(Tensor(np.zeros(5))).item() == 0.0
        rng = np.random.default_rng(15)
        a = rnd(rng, 9)
        assert abs(ad.mean(Tensor(a)).item() - sum(a) / 9) <= 1e-12

    def test_mul_and_sum_all(self):
        a = Tensor([1.0, 2.0, 3.0])
        b = Tensor([4.0, 5.0, 6.0])
        assert ad.sum_all(ad.mul(a, b)).item() == 32.0

    def test_reshape_round_trip(self):
        rng = np.random.default_rng(16)
        a = rnd(rng, 2, 6)
        out = ad.reshape(Tensor(a), (3, 4))
        np.testing.assert_array_equal(out.data.ravel(), a.ravel())

    def test_log_gradient(self):
        x = ad.parameter(np.array([2.0]))
        loss = ad.sum_all(ad.log(x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [0.5], atol=1e-15)


class TestBackward:
    def test_quadratic_gradient(self):
        x = ad.parameter(np.array([3.0]))
        loss = ad.sq_l2_diff(x, Tensor(np.zeros(1)))
        (g,) = ad.gradients(loss, [x])
        np.testing.assert_array_equal(g, [6.0])

    def test_unused_parameter_gets_zero(self):
        x = ad.parameter(np.array([3.0]))
        p = ad.parameter(np.array([1.0, 2.0]))
        loss = ad.sq_l2_diff(x, Tensor(np.zeros(1)))
        gx, gp = ad.gradients(loss, [x, p])
        np.testing.assert_array_equal(gp, np.zeros(2))

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            ad.add(x, x).backward()

    def test_shared_node_accumulates(self):
        x = ad.parameter(np.array([2.0]))
        # loss = (x * x) + x  ->  d/dx = 2x + 1 = 5
        loss = ad.sum_all(ad.add(ad.mul(x, x), x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [5.0], atol=1e-15)

    def test_micro_network_matches_finite_differences(self):
        # two points through widths [3, 4], pooled, densely mapped to 2 classes
        rng = np.random.default_rng(17)
        pts = rng.normal(size=(2, 3))
        w1 = ad.parameter(None, rng, (3, 4))
        b1 = ad.parameter(np.zeros(4))
        w2 = ad.parameter(None, rng, (4, 2))
        b2 = ad.parameter(np.zeros(2))
        target = np.array([1.0, 0.0])
        params = [w1, b1, w2, b2]

        def build():
            h = ad.relu(ad.add(ad.matmul(Tensor(pts), w1), b1))
            pooled = ad.max_pool_points(h)
            logits = ad.add(ad.matmul(ad.reshape(pooled, (1, 4)), w2), b2)
            probs = ad.softmax(logits, axis=-1)
            return ad.sq_l2_diff(probs, Tensor(target.reshape(1, 2)))

        analytic = ad.gradients(build(), params)
        numeric = oracles.central_differences(lambda: build().item(), params)
        for a, n in zip(analytic, numeric):
            assert oracles.grads_close(a, n, tol=1e-3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_special_ops_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        c = ad.parameter(None, rng, (1, 1, 3), std=0.5)
        d = ad.parameter(None, rng, (3, 2, 4), std=0.5)
        k = ad.parameter(None, rng, (2, 2, 3, 4), std=0.5)
        params = [c, d, k]

        def build():
            w = ad.channel_contract(c, d)
            grid = ad.reshape(w, (1, 2, 4))
            expanded = ad.transposed_conv2d(grid, k)
            return ad.sq_l2_diff(expanded, Tensor(np.zeros(expanded.shape)))

        analytic = ad.gradients(build(), params)
        numeric = oracles.central_differences(lambda: build().item(), params)
        for a, n in zip(analytic, numeric):
            assert oracles.grads_close(a, n, tol=1e-3)

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(18)
        big = Tensor(rng.normal(size=8) * 500.0)
        assert np.all(np.isfinite(ad.softmax(big).data))
        chain = ad.mean(ad.relu(ad.scale(big, 3.0)))
        assert np.isfinite(chain.item())
