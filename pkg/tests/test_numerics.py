import numpy as np
import pytest

from model import pair_loss_node
from numerics import (
    NonFiniteError,
    OptimizerState,
    ShapeMismatchError,
    UnboundInputError,
    ValueGraph,
    angle,
    backward,
    forward,
    grad_check,
    mean_pairwise_angle,
    sgd_update,
)


class TestForward:
    def test_identity(self):
        g = ValueGraph()
        x = g.leaf(np.array([1.0, 2.0, 3.0]), name="x")
        y = g.identity(x, name="y")
        out = forward(g)
        np.testing.assert_array_equal(out["y"], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(g.value(y), [1.0, 2.0, 3.0])

    def test_matmul_identity_matrix(self):
        g = ValueGraph()
        a = g.constant(np.eye(2))
        x = g.leaf(np.array([5.0, 7.0]), name="x")
        np.testing.assert_array_equal(g.value(g.matmul(a, x)), [5.0, 7.0])

    def test_cosine_orthogonal(self):
        g = ValueGraph()
        c = g.cosine(g.constant(np.array([[1.0, 0.0]])), g.constant(np.array([[0.0, 1.0]])))
        np.testing.assert_allclose(g.value(c), [0.0])

    def test_rebinding_leaf_reevaluates(self):
        g = ValueGraph()
        x = g.leaf(np.array([1.0, 2.0]), name="x")
        g.sum(g.scale(x, 3.0), name="s")
        assert forward(g, {"x": np.array([2.0, 2.0])})["s"] == pytest.approx(12.0)

    def test_unbound_leaf(self):
        g = ValueGraph()
        x = g.leaf(name="x")
        g.relu(x)
        with pytest.raises(UnboundInputError):
            forward(g)

    def test_unknown_input_name(self):
        g = ValueGraph()
        g.leaf(np.ones(2), name="x")
        with pytest.raises(UnboundInputError):
            forward(g, {"nope": np.ones(2)})

    def test_shape_mismatch_names_node(self):
        g = ValueGraph()
        a = g.constant(np.ones((2, 3)))
        b = g.constant(np.ones((2, 3)))
        with pytest.raises(ShapeMismatchError) as err:
            g.matmul(a, b)
        assert err.value.node_id == 2

    def test_non_finite_rejected(self):
        g = ValueGraph()
        x = g.leaf(np.array([1.0]), name="x")
        g.scale(x, 2.0, name="y")
        with pytest.raises(NonFiniteError):
            forward(g, {"x": np.array([np.inf])})


class TestBackward:
    def test_sum_gradient(self):
        g = ValueGraph()
        x = g.leaf(np.array([0.3, -1.0, 2.0]), name="x", requires_grad=True)
        grads = backward(g, g.sum(x))
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])

    def test_stop_gradient_blocks(self):
        g = ValueGraph()
        u = g.leaf(np.array([[1.0, 2.0]]), name="u", requires_grad=True)
        v = g.leaf(np.array([[0.5, -1.0]]), name="v", requires_grad=True)
        loss = g.sum(g.cosine(u, g.stop_gradient(v)))
        grads = backward(g, loss)
        np.testing.assert_array_equal(grads["v"], np.zeros((1, 2)))
        assert np.any(grads["u"] != 0)

    def test_arccos_derivative_at_zero(self):
        g = ValueGraph()
        c = g.leaf(np.array([0.0]), name="c", requires_grad=True)
        grads = backward(g, g.sum(g.arccos(c)))
        np.testing.assert_allclose(grads["c"], [-1.0], atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        g = ValueGraph()
        x = g.leaf(np.ones(3), name="x", requires_grad=True)
        with pytest.raises(ValueError):
            backward(g, g.relu(x))

    def test_unreached_leaf_gets_zeros(self):
        g = ValueGraph()
        x = g.leaf(np.ones(2), name="x", requires_grad=True)
        g.leaf(np.ones(3), name="unused", requires_grad=True)
        grads = backward(g, g.sum(x))
        np.testing.assert_array_equal(grads["unused"], np.zeros(3))

    def test_gradient_shapes_match_values(self, rng):
        g = ValueGraph()
        x = g.leaf(rng.standard_normal((4, 3)), name="x", requires_grad=True)
        w = g.leaf(rng.standard_normal((3, 2)), name="w", requires_grad=True)
        b = g.leaf(rng.standard_normal(2), name="b", requires_grad=True)
        grads = backward(g, g.mean(g.relu(g.linear(x, w, b))))
        for name, node in g.names.items():
            assert grads[name].shape == g.value(node).shape


class TestGradCheck:
    def test_quadratic(self, rng):
        g = ValueGraph()
        x = g.leaf(rng.standard_normal(5), name="x", requires_grad=True)
        loss = g.scale(g.sum(g.mul(x, x)), 0.5)
        assert grad_check(g, loss) < 1e-8

    def test_batch_norm_mlp(self, rng):
        g = ValueGraph()
        x = g.constant(rng.standard_normal((6, 4)))
        w = g.leaf(rng.standard_normal((4, 3)), name="w", requires_grad=True)
        b = g.leaf(rng.standard_normal(3), name="b", requires_grad=True)
        gamma = g.leaf(1.0 + 0.1 * rng.standard_normal(3), name="gamma", requires_grad=True)
        beta = g.leaf(0.1 * rng.standard_normal(3), name="beta", requires_grad=True)
        h = g.batch_norm(g.linear(x, w, b), gamma, beta, training=True)
        loss = g.mean(g.l2_normalize(h))
        loss = g.add(loss, g.mean(g.mul(h, h)))
        assert grad_check(g, loss) < 1e-4

    def test_simsiam_predictor_gradients(self, tiny_model, rng):
        # The stop-gradient branch makes the loss depend on z through a path
        # backward ignores, so finite differences agree only for predictor weights.
        model = tiny_model.astype("float64")
        model.train()
        v1, v2 = rng.standard_normal((2, 5, 6))
        fwd = model.forward_views(v1, v2, update_running=False)
        g = fwd.graph
        loss = g.mean(pair_loss_node(g, *fwd.predictions, *fwd.projections))
        pred_leaves = [leaf for name, leaf in fwd.leaves.items() if name.startswith("pred.")]
        assert grad_check(g, loss, leaves=pred_leaves) < 1e-4

    def test_symmetric_ssl_loss_all_parameters(self, tiny_model, rng):
        model = tiny_model.astype("float64")
        model.train()
        v1, v2 = rng.standard_normal((2, 5, 6))
        fwd = model.forward_views(v1, v2, update_running=False)
        g = fwd.graph
        (p1, p2), (z1, z2) = fwd.predictions, fwd.projections
        loss = g.mean(g.scale(g.add(g.cosine(p1, z2), g.cosine(p2, z1)), -0.5))
        assert grad_check(g, loss) < 1e-4

    def test_step_must_be_positive(self):
        g = ValueGraph()
        x = g.leaf(np.ones(2), name="x", requires_grad=True)
        with pytest.raises(ValueError):
            grad_check(g, g.sum(x), step=0.0)


class TestSGD:
    def test_plain_step(self):
        params = {"w": np.array([1.0])}
        state = OptimizerState.for_params(params, learning_rate=1.0, momentum=0.0)
        sgd_update(params, {"w": np.array([0.5])}, state)
        np.testing.assert_allclose(params["w"], [0.5])

    def test_momentum_two_steps(self):
        params = {"w": np.array([0.0])}
        state = OptimizerState.for_params(params, learning_rate=0.1, momentum=0.9)
        for _ in range(2):
            sgd_update(params, {"w": np.array([1.0])}, state)
        np.testing.assert_allclose(state.buffers["w"], [1.9])
        np.testing.assert_allclose(params["w"], [-0.29])

    def test_weight_decay_only(self):
        params = {"w": np.array([2.0])}
        state = OptimizerState.for_params(params, learning_rate=0.05, momentum=0.9,
                                          weight_decay=1e-4)
        sgd_update(params, {"w": np.array([0.0])}, state)
        np.testing.assert_allclose(params["w"], [1.99999])

    def test_missing_gradient_leaves_param(self):
        params = {"w": np.array([1.0]), "b": np.array([3.0])}
        state = OptimizerState.for_params(params, learning_rate=0.1)
        sgd_update(params, {"w": np.array([1.0])}, state)
        np.testing.assert_array_equal(params["b"], [3.0])

    def test_shape_mismatch(self):
        params = {"w": np.zeros(2)}
        state = OptimizerState.for_params(params, learning_rate=0.1)
        with pytest.raises(ValueError):
            sgd_update(params, {"w": np.zeros(3)}, state)

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0},
        {"learning_rate": 0.1, "momentum": 1.0},
        {"learning_rate": 0.1, "weight_decay": -1.0},
    ])
    def test_invalid_hyperparameters(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerState(**kwargs)


class TestGeometry:
    def test_identical_and_antipodal_angles_exact(self):
        u = np.array([[0.3, -0.4, 1.2]])
        assert angle(u, u)[0] == 0.0
        np.testing.assert_allclose(angle(u, -u), [np.pi], rtol=0, atol=1e-15)

    def test_mean_pairwise_angle_orthogonal(self):
        views = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(mean_pairwise_angle(views, include_self_pairs=True),
                                   np.pi / 4)
        np.testing.assert_allclose(mean_pairwise_angle(views, include_self_pairs=False),
                                   np.pi / 2)
