"""Unit tests for the reverse-mode autodiff core."""

import numpy as np
import pytest

from tsrm.autodiff import (
    Adam,
    Parameter,
    Tensor,
    adaptive_maxpool1d,
    bce_with_logits,
    concat,
    conv1d,
    conv1d_depthwise,
    conv1d_transpose_depthwise,
    dropout,
    elu,
    gelu,
    group_norm,
    maxpool1d,
    matmul,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from tsrm.errors import ConfigError

from helpers import check_gradients, finite_difference, rand_tensor


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(a, b).data, b.data)

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ConfigError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = rand_tensor(rng, 3, 4)
        b = rand_tensor(rng, 4, 2)
        check_gradients(lambda: matmul(a, b).sum(), [a, b])

    def test_batched_broadcast_gradient(self):
        rng = np.random.default_rng(1)
        a = rand_tensor(rng, 2, 3, 4)
        b = rand_tensor(rng, 4, 5)  # broadcast over the batch dim
        w = rng.standard_normal((2, 3, 5))
        check_gradients(lambda: (matmul(a, b) * Tensor(w)).sum(), [a, b])


class TestDepthwiseConv:
    def test_output_length_small_kernel(self):
        x = Tensor(np.zeros((1, 2, 96)))
        k = Tensor(np.zeros((2, 3)))
        out = conv1d_depthwise(x, k, None, dilation=2, stride=1)
        assert out.shape == (1, 2, 92)

    def test_output_length_large_kernel(self):
        x = Tensor(np.zeros((1, 2, 96)))
        k = Tensor(np.zeros((2, 10)))
        out = conv1d_depthwise(x, k, None, dilation=4, stride=5)
        assert out.shape == (1, 2, 12)

    def test_identity_kernel(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((2, 3, 8)))
        k = Tensor(np.ones((3, 1)))
        b = Tensor(np.zeros(3))
        out = conv1d_depthwise(x, k, b, dilation=1, stride=1)
        np.testing.assert_allclose(out.data, x.data)

    def test_kernel_too_long_raises(self):
        x = Tensor(np.zeros((1, 1, 5)))
        k = Tensor(np.zeros((1, 4)))
        with pytest.raises(ConfigError, match="effective kernel"):
            conv1d_depthwise(x, k, None, dilation=2, stride=1)

    def test_channels_stay_separate(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 10))
        k = np.stack([np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 2.0])])
        out = conv1d_depthwise(Tensor(x), Tensor(k), None, dilation=1, stride=1)
        np.testing.assert_allclose(out.data[0, 0], x[0, 0, :8])
        np.testing.assert_allclose(out.data[0, 1], 2.0 * x[0, 1, 2:])

    @pytest.mark.parametrize("k,d,s", [(3, 1, 1), (3, 2, 1), (5, 2, 3), (1, 1, 1)])
    def test_gradients(self, k, d, s):
        rng = np.random.default_rng(k * 10 + d + s)
        x = rand_tensor(rng, 2, 3, 16)
        kern = rand_tensor(rng, 3, k)
        bias = rand_tensor(rng, 3)
        w = rng.standard_normal(conv1d_depthwise(x, kern, bias, d, s).shape)
        check_gradients(lambda: (conv1d_depthwise(x, kern, bias, d, s) * Tensor(w)).sum(),
                        [x, kern, bias])


class TestTransposeConv:
    def test_restores_length_no_crop(self):
        x = Tensor(np.zeros((1, 2, 92)))
        k = Tensor(np.zeros((2, 3)))
        out = conv1d_transpose_depthwise(x, k, dilation=2, stride=1, target_len=96)
        assert out.shape == (1, 2, 96)

    def test_pads_to_target(self):
        x = Tensor(np.ones((1, 2, 12)))
        k = Tensor(np.ones((2, 10)))
        out = conv1d_transpose_depthwise(x, k, dilation=4, stride=5, target_len=96)
        assert out.shape == (1, 2, 96)
        # natural length (12-1)*5 + 37 = 92, so the last 4 slots are zero padding
        np.testing.assert_array_equal(out.data[:, :, 92:], 0.0)

    def test_identity(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 3, 7)))
        k = Tensor(np.ones((3, 1)))
        out = conv1d_transpose_depthwise(x, k, dilation=1, stride=1, target_len=7)
        np.testing.assert_allclose(out.data, x.data)

    @pytest.mark.parametrize("k,d,s", [(3, 2, 1), (4, 1, 2), (2, 3, 2)])
    def test_gradients(self, k, d, s):
        rng = np.random.default_rng(5)
        L_in = 6
        target = (L_in - 1) * s + (k - 1) * d + 1 + 2  # force a padded tail
        x = rand_tensor(rng, 2, 2, L_in)
        kern = rand_tensor(rng, 2, k)
        w = rng.standard_normal((2, 2, target))
        check_gradients(lambda: (conv1d_transpose_depthwise(x, kern, d, s, target) * Tensor(w)).sum(),
                        [x, kern])

    def test_round_trip_lengths_exhaustive(self):
        # transpose conv of a conv output restores the original length for
        # every valid (L, k, d, s) with L <= 64, k <= 8, d <= 4
        cases = 0
        for L in range(1, 65):
            for k in range(1, 9):
                for d in range(1, 5):
                    k_eff = (k - 1) * d + 1
                    if k_eff > L:
                        continue
                    for s in {1, 2, max(1, k // 2), 4}:
                        L_out = (L - k_eff) // s + 1
                        x = Tensor(np.ones((1, 1, L_out)))
                        kern = Tensor(np.ones((1, k)))
                        out = conv1d_transpose_depthwise(x, kern, d, s, target_len=L)
                        assert out.shape[-1] == L, (L, k, d, s)
                        cases += 1
        assert cases > 5000


class TestMaxPool:
    def test_basic(self):
        out = maxpool1d(Tensor(np.array([[[1.0, 3.0, 2.0, 5.0]]])), k=2, stride=2)
        np.testing.assert_array_equal(out.data, [[[3.0, 5.0]]])

    def test_constant_input(self):
        out = maxpool1d(Tensor(np.full((1, 2, 6), 4.0)), k=2, stride=2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 3), 4.0))

    def test_kernel_too_long(self):
        with pytest.raises(ConfigError, match="pool kernel"):
            maxpool1d(Tensor(np.zeros((1, 1, 3))), k=4, stride=1)

    def test_tie_routes_to_lowest_index(self):
        x = Tensor(np.array([[[2.0, 2.0]]]), requires_grad=True, dtype=np.float64)
        out = maxpool1d(x, k=2, stride=1)
        out.backward(np.ones_like(out.data))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0]]])

    def test_gradient_away_from_ties(self):
        rng = np.random.default_rng(6)
        x = rand_tensor(rng, 2, 3, 12)  # continuous values: ties have measure zero
        w = rng.standard_normal((2, 3, 6))
        check_gradients(lambda: (maxpool1d(x, 2, 2) * Tensor(w)).sum(), [x])

    def test_adaptive_pool_shapes_and_gradient(self):
        rng = np.random.default_rng(7)
        for L in (5, 8, 19):
            x = rand_tensor(rng, 1, 2, L)
            out = adaptive_maxpool1d(x, 8)
            assert out.shape == (1, 2, 8)
            w = rng.standard_normal((1, 2, 8))
            check_gradients(lambda: (adaptive_maxpool1d(x, 8) * Tensor(w)).sum(), [x])


class TestGroupNorm:
    def test_constant_input_gives_zeros(self):
        x = Tensor(np.full((2, 5, 6), 3.0))
        out = group_norm(x, 2, Tensor(np.ones(6)), Tensor(np.zeros(6)))
        np.testing.assert_allclose(out.data, 0.0)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((2, 5, 6)))
        out = group_norm(x, 3, Tensor(np.zeros(6)), Tensor(np.full(6, 0.7)))
        np.testing.assert_allclose(out.data, 0.7)

    def test_indivisible_raises(self):
        with pytest.raises(ConfigError, match="divisible"):
            group_norm(Tensor(np.zeros((1, 2, 5))), 2, Tensor(np.ones(5)), Tensor(np.zeros(5)))

    def test_normalizes_per_group(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 7, 8))
        out = group_norm(Tensor(x), 4, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        grouped = out.reshape(3, 7, 4, 2)
        np.testing.assert_allclose(grouped.mean(axis=(1, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(grouped.var(axis=(1, 3)), 1.0, atol=1e-4)

    def test_gradients(self):
        rng = np.random.default_rng(10)
        x = rand_tensor(rng, 2, 4, 6)
        gamma = rand_tensor(rng, 6)
        beta = rand_tensor(rng, 6)
        w = rng.standard_normal((2, 4, 6))
        check_gradients(lambda: (group_norm(x, 2, gamma, beta) * Tensor(w)).sum(),
                        [x, gamma, beta])


class TestActivations:
    def test_fixed_points(self):
        assert gelu(Tensor([0.0])).data[0] == 0.0
        assert sigmoid(Tensor([0.0])).data[0] == 0.5
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
        assert elu(Tensor([0.0])).data[0] == 0.0

    def test_elu_negative_branch(self):
        np.testing.assert_allclose(elu(Tensor([-1.0])).data, np.expm1(-1.0))

    @pytest.mark.parametrize("op", [gelu, elu, sigmoid, lambda t: softmax(t, axis=-1)])
    def test_gradients(self, op):
        rng = np.random.default_rng(11)
        x = rand_tensor(rng, 3, 5)
        w = rng.standard_normal((3, 5))
        check_gradients(lambda: (op(x) * Tensor(w)).sum(), [x])

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(12)
        z = rng.standard_normal((4, 6))
        np.testing.assert_allclose(softmax(Tensor(z)).data, softmax(Tensor(z + 100.0)).data,
                                   atol=1e-12)


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        out = dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        assert out is x

    def test_eval_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        out = dropout(x, 0.5, training=False, rng=np.random.default_rng(0))
        assert out is x

    def test_mean_preserved(self):
        rng = np.random.default_rng(13)
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.3, training=True, rng=rng)
        assert abs(out.data.mean() - 1.0) < 0.01

    def test_gradient_matches_mask(self):
        x = Tensor(np.ones(50), requires_grad=True, dtype=np.float64)
        out = dropout(x, 0.5, training=True, rng=np.random.default_rng(14))
        out.backward(np.ones_like(out.data))
        np.testing.assert_allclose(x.grad, out.data)  # grad equals applied mask


class TestLosses:
    def test_bce_known_value(self):
        # logit 0 against any target gives log(2)
        loss = bce_with_logits(Tensor(np.zeros(4)), np.array([0.0, 1.0, 0.0, 1.0]))
        np.testing.assert_allclose(loss.item(), np.log(2.0), rtol=1e-6)

    def test_bce_gradient(self):
        rng = np.random.default_rng(15)
        z = rand_tensor(rng, 6)
        y = (rng.random(6) > 0.5).astype(np.float64)
        check_gradients(lambda: bce_with_logits(z, y), [z])

    def test_cross_entropy_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((2, 6))), np.array([1, 4]))
        np.testing.assert_allclose(loss.item(), np.log(6.0), rtol=1e-6)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(16)
        z = rand_tensor(rng, 4, 3)
        labels = rng.integers(0, 3, size=4)
        check_gradients(lambda: softmax_cross_entropy(z, labels), [z])


class TestFullConv1d:
    def test_known_value(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(1, 1, 6))
        w = Tensor(np.array([[[1.0, 1.0]]]))
        out = conv1d(x, w, None, stride=2)
        np.testing.assert_array_equal(out.data, [[[1.0, 5.0, 9.0]]])

    def test_gradients(self):
        rng = np.random.default_rng(17)
        x = rand_tensor(rng, 2, 3, 10)
        w = rand_tensor(rng, 4, 3, 3)
        b = rand_tensor(rng, 4)
        proj = rng.standard_normal((2, 4, 4))
        check_gradients(lambda: (conv1d(x, w, b, stride=2) * Tensor(proj)).sum(), [x, w, b])


class TestGraphAccumulation:
    def test_shared_subgraph_grads_sum(self):
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        y = x * x + x * x  # x appears four times
        y.backward(np.ones(1))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_random_graphs_match_brute_force(self):
        # Compare whole-graph gradients against finite differences on small
        # randomly wired scalar DAGs built from +, *, sigmoid, gelu.
        rng = np.random.default_rng(18)
        for trial in range(20):
            n_leaves = int(rng.integers(2, 5))
            leaf_values = rng.standard_normal(n_leaves)

            def build(values):
                leaves = [Tensor(np.array([v]), requires_grad=True, dtype=np.float64)
                          for v in values]
                nodes = list(leaves)
                op_rng = np.random.default_rng(1000 + trial)
                for _ in range(int(op_rng.integers(3, 16))):
                    kind = op_rng.integers(0, 4)
                    a = nodes[int(op_rng.integers(0, len(nodes)))]
                    b = nodes[int(op_rng.integers(0, len(nodes)))]
                    if kind == 0:
                        nodes.append(a + b)
                    elif kind == 1:
                        nodes.append(a * b)
                    elif kind == 2:
                        nodes.append(sigmoid(a))
                    else:
                        nodes.append(gelu(a))
                total = nodes[0]
                for nd in nodes[1:]:
                    total = total + nd
                return leaves, total.sum()

            leaves, out = build(leaf_values)
            out.backward()
            analytic = np.array([float(l.grad[0]) if l.grad is not None else 0.0 for l in leaves])

            vals = leaf_values.copy()
            numeric = finite_difference(lambda: build(vals)[1].item(), vals, h=1e-6)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


class TestAdam:
    def test_zero_gradient_keeps_parameter(self):
        p = Parameter("w", Tensor(np.array([1.0, 2.0], dtype=np.float32)))
        opt = Adam([p], lr=0.1)
        p.tensor.grad = np.zeros(2, dtype=np.float32)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_magnitude(self):
        # single scalar, g = 1: bias-corrected update is lr/(1 + eps) ~ lr
        p = Parameter("w", Tensor(np.array([0.5], dtype=np.float64)))
        opt = Adam([p], lr=0.1)
        p.tensor.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose(p.data, [0.5 - 0.1], rtol=1e-6)

    def test_frozen_parameter_never_moves(self):
        p = Parameter("w", Tensor(np.array([1.0], dtype=np.float32)), frozen=True)
        opt = Adam([p], lr=0.5)
        p.tensor.grad = np.array([10.0], dtype=np.float32)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0])
        assert p.tensor.grad is None  # grad buffer cleared back to zero-state

    def test_missing_grad_raises(self):
        p = Parameter("w", Tensor(np.array([1.0])))
        opt = Adam([p])
        with pytest.raises(RuntimeError, match="no gradient"):
            opt.step()

    def test_step_count_increments(self):
        p = Parameter("w", Tensor(np.array([1.0])))
        opt = Adam([p], lr=0.1)
        for expected in (1, 2, 3):
            p.tensor.grad = np.array([0.3])
            opt.step()
            assert opt.step_count == expected


class TestShapeSurgery:
    def test_concat_narrow_gradients(self):
        rng = np.random.default_rng(19)
        a = rand_tensor(rng, 2, 3)
        b = rand_tensor(rng, 2, 4)
        w = rng.standard_normal((2, 5))

        def loss():
            joined = concat([a, b], axis=1)
            return (joined.narrow(1, 1, 5) * Tensor(w)).sum()

        check_gradients(loss, [a, b])

    def test_transpose_reshape_gradients(self):
        rng = np.random.default_rng(20)
        a = rand_tensor(rng, 2, 3, 4)
        w = rng.standard_normal((4, 6))
        check_gradients(lambda: (a.transpose(2, 0, 1).reshape(4, 6) * Tensor(w)).sum(), [a])
