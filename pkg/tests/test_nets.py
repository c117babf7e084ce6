"""Network forward/backward/optimizer tests.

The backward pass is checked against central finite differences and the
forward pass against a separately scripted matrix chain, so a bug would
have to appear identically in two independent code paths to slip by.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanegate.nets import (
    DenseNet,
    GradientBuffer,
    NonFiniteGradientError,
    OptimizerState,
    adam_step,
    net_from_dict,
    net_to_dict,
)


def make_net(dims, seed):
    return DenseNet.create(dims, np.random.default_rng(seed))


def scripted_forward(net, x):
    # independent oracle: plain matrix chain, no shared code with DenseNet
    h = np.asarray(x, dtype=np.float64)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if k != last:
            h = np.tanh(h)
    return h


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        net = make_net([3, 4, 2], 0)
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            b[:] = 0.0
        assert np.array_equal(net.forward(np.array([1.0, -2.0, 3.0])), np.zeros(2))

    def test_single_linear_layer(self):
        net = DenseNet([1, 1], [np.array([[2.0]])], [np.array([1.0])])
        out = net.forward(np.array([3.0]))
        assert out.shape == (1,)
        assert out[0] == 7.0

    def test_random_net_matches_scripted_oracle(self):
        net = make_net([3, 4, 2], 42)
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=3)
            np.testing.assert_allclose(net.forward(x), scripted_forward(net, x),
                                       rtol=0, atol=1e-12)

    def test_batched_forward_matches_row_by_row(self):
        # matrix-matrix and matrix-vector BLAS paths may differ by ulps
        net = make_net([4, 8, 3], 5)
        xs = np.random.default_rng(1).normal(size=(6, 4))
        batch = net.forward(xs)
        assert batch.shape == (6, 3)
        for i in range(6):
            np.testing.assert_allclose(batch[i], net.forward(xs[i]), rtol=0, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        net = make_net([3, 2], 0)
        with pytest.raises(ValueError):
            net.forward(np.zeros(4))

    def test_determinism(self):
        net = make_net([5, 6, 2], 9)
        x = np.random.default_rng(2).normal(size=5)
        assert np.array_equal(net.forward(x), net.forward(x))


def finite_difference_grads(net, x, upstream, h=1e-5):
    """Central differences on upstream @ forward(x) wrt every parameter."""
    def objective():
        return float(np.dot(upstream, net.forward(x)))

    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            hi = objective()
            p[idx] = orig - h
            lo = objective()
            p[idx] = orig
            g[idx] = (hi - lo) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def relative_error(a, b):
    num = np.linalg.norm(np.concatenate([x.ravel() for x in a])
                         - np.concatenate([x.ravel() for x in b]))
    den = np.linalg.norm(np.concatenate([x.ravel() for x in b])) + 1e-12
    return num / den


class TestBackward:
    def test_zero_upstream_gives_zero_buffer(self):
        net = make_net([3, 4, 2], 1)
        out, cache = net.forward_cached(np.array([0.5, -1.0, 2.0]))
        grads = net.backward(cache, np.zeros(2))
        for g in grads.arrays():
            assert not g.any()

    def test_scalar_linear_net(self):
        net = DenseNet([1, 1], [np.array([[3.0]])], [np.array([0.5])])
        x = np.array([2.5])
        out, cache = net.forward_cached(x)
        grads = net.backward(cache, np.array([1.0]))
        assert grads.d_weights[0][0, 0] == 2.5
        assert grads.d_biases[0][0] == 1.0

    def test_matches_finite_differences(self):
        net = make_net([3, 5, 2], 11)
        rng = np.random.default_rng(3)
        x = rng.normal(size=3)
        upstream = rng.normal(size=2)
        out, cache = net.forward_cached(x)
        analytic = net.backward(cache, upstream)
        numeric = finite_difference_grads(net, x, upstream)
        assert relative_error(analytic.arrays(), numeric) < 1e-6

    def test_gradient_correctness_battery(self):
        # dims up to (8, 8, 8, 2), several random nets and inputs
        rng = np.random.default_rng(123)
        for trial in range(10):
            n_hidden = int(rng.integers(1, 3))
            dims = [int(rng.integers(2, 9))] + \
                   [int(rng.integers(2, 9)) for _ in range(n_hidden)] + \
                   [int(rng.integers(1, 3))]
            net = make_net(dims, 1000 + trial)
            x = rng.normal(size=dims[0])
            upstream = rng.normal(size=dims[-1])
            out, cache = net.forward_cached(x)
            analytic = net.backward(cache, upstream)
            numeric = finite_difference_grads(net, x, upstream)
            assert relative_error(analytic.arrays(), numeric) < 1e-5


def scripted_adam(theta, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    # independent oracle for one Adam update on one scalar
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return theta - lr * mhat / (np.sqrt(vhat) + eps), m, v


class TestOptimizer:
    def test_zero_gradients_leave_parameters(self):
        net = make_net([2, 3, 1], 4)
        before = [p.copy() for p in net.parameters()]
        opt = OptimizerState(net.parameters(), lr=0.01)
        zero = GradientBuffer([np.zeros_like(w) for w in net.weights],
                              [np.zeros_like(b) for b in net.biases])
        adam_step(net, zero, opt)
        for p, q in zip(net.parameters(), before):
            assert np.array_equal(p, q)

    def test_plain_descent_step(self):
        # moments disabled: theta' = theta - 0.0003 * g
        theta = np.array([1.0, -2.0])
        opt = OptimizerState([theta], lr=0.0003, kind="sgd")
        opt.step([theta], [np.array([2.0, -4.0])])
        np.testing.assert_allclose(theta, [1.0 - 0.0003 * 2.0, -2.0 + 0.0003 * 4.0],
                                   rtol=0, atol=1e-15)

    def test_adam_scalar_case_matches_oracle(self):
        theta = np.array([1.0])
        opt = OptimizerState([theta], lr=0.0003)
        opt.step([theta], [np.array([0.5])])
        expected, _, _ = scripted_adam(1.0, 0.5, 0.0, 0.0, 1, 0.0003)
        assert abs(theta[0] - expected) < 1e-12
        # frozen closed form of the same case
        assert abs(theta[0] - (1.0 - 0.0003 * 0.5 / (0.5 + 1e-8))) < 1e-12

    def test_adam_multi_step_matches_oracle(self):
        theta = np.array([0.3])
        opt = OptimizerState([theta], lr=0.01)
        ref, m, v = 0.3, 0.0, 0.0
        gs = [0.5, -0.2, 1.3, 0.0, -0.7]
        for t, g in enumerate(gs, start=1):
            opt.step([theta], [np.array([g])])
            ref, m, v = scripted_adam(ref, g, m, v, t, 0.01)
        assert abs(theta[0] - ref) < 1e-12

    def test_nonfinite_gradients_rejected(self):
        theta = np.array([1.0])
        opt = OptimizerState([theta], lr=0.01)
        with pytest.raises(NonFiniteGradientError):
            opt.step([theta], [np.array([np.nan])])
        assert theta[0] == 1.0


class TestSerialization:
    def test_round_trip_is_bit_exact(self):
        net = make_net([4, 7, 2], 99)
        clone = net_from_dict(net_to_dict(net))
        assert clone.layer_dims == net.layer_dims
        for a, b in zip(clone.parameters(), net.parameters()):
            assert np.array_equal(a, b)

    def test_copy_is_independent(self):
        net = make_net([2, 2], 0)
        clone = net.copy()
        net.weights[0][0, 0] += 1.0
        assert clone.weights[0][0, 0] != net.weights[0][0, 0]


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_init_bounds_and_zero_biases(seed):
    rng = np.random.default_rng(seed)
    net = DenseNet.create([6, 5, 3], rng)
    for w, d_in in zip(net.weights, [6, 5]):
        bound = 1.0 / np.sqrt(d_in)
        assert np.all(np.abs(w) <= bound)
    for b in net.biases:
        assert not b.any()
