import numpy as np
import pytest

from metrics import deviation
from model import (
    LOSS_SHIFT,
    ModelConfig,
    SSLModel,
    encode,
    forward_views,
    multiview_ssl_loss,
    per_sample_stats,
    simsiam_pair_loss,
)
from stream import AugmentationConfig


class TestForwardViews:
    def test_identical_views_identical_outputs(self, tiny_model, rng):
        v = rng.standard_normal((4, 6)).astype(np.float32)
        fwd = forward_views(tiny_model, v, v.copy())
        for pair in (fwd.features, fwd.projections, fwd.predictions):
            a, b = fwd.values(pair)
            np.testing.assert_array_equal(a, b)

    def test_shapes_and_finiteness(self, tiny_model, rng):
        v1, v2 = rng.standard_normal((2, 4, 6))
        fwd = forward_views(tiny_model, v1, v2)
        f, _ = fwd.values(fwd.features)
        z, _ = fwd.values(fwd.projections)
        p, _ = fwd.values(fwd.predictions)
        assert f.shape == (4, 5) and z.shape == (4, 4) and p.shape == (4, 4)
        assert all(np.all(np.isfinite(a)) for a in (f, z, p))

    def test_zero_initialized_encoder_gives_zero_features(self, rng):
        cfg = ModelConfig(input_dim=6, hidden_dim=8, feature_dim=5, projector_hidden=6,
                          projection_dim=4, predictor_hidden=3, zero_init=True)
        features = encode(SSLModel(cfg), rng.standard_normal((3, 6)))
        np.testing.assert_array_equal(features, np.zeros((3, 5)))

    def test_batch_of_one_rejected_in_training(self, tiny_model, rng):
        v = rng.standard_normal((1, 6))
        with pytest.raises(ValueError):
            tiny_model.train().forward_views(v, v)

    def test_batch_of_one_allowed_in_eval(self, tiny_model, rng):
        v = rng.standard_normal((1, 6))
        fwd = tiny_model.eval().forward_views(v, v)
        assert fwd.values(fwd.features)[0].shape == (1, 5)

    def test_training_pass_updates_running_stats(self, tiny_model, rng):
        before = {k: v.copy() for k, v in tiny_model.running.items()}
        v1, v2 = rng.standard_normal((2, 8, 6)) + 2.0
        tiny_model.train().forward_views(v1, v2)
        assert not np.allclose(before["enc.bn.mean"], tiny_model.running["enc.bn.mean"])

    def test_deferred_running_stats(self, tiny_model, rng):
        before = {k: v.copy() for k, v in tiny_model.running.items()}
        v1, v2 = rng.standard_normal((2, 8, 6))
        fwd = tiny_model.train().forward_views(v1, v2, update_running=False)
        for k in before:
            np.testing.assert_array_equal(before[k], tiny_model.running[k])
        tiny_model.commit_batch_stats(fwd.graph, fwd.bn_nodes)
        assert not np.array_equal(before["enc.bn.var"], tiny_model.running["enc.bn.var"])

    def test_embed_is_side_effect_free(self, tiny_model, rng):
        state = {k: v.copy() for k, v in tiny_model.state_dict().items()}
        tiny_model.embed(rng.standard_normal((10, 6)))
        for k, v in tiny_model.state_dict().items():
            np.testing.assert_array_equal(state[k], v)

    def test_state_dict_round_trip(self, tiny_model_config, tiny_model):
        other = SSLModel(ModelConfig(**{**tiny_model_config.__dict__, "seed": 99}))
        other.load_state_dict(tiny_model.state_dict())
        assert other.encoder_checksum() == tiny_model.encoder_checksum()

    def test_astype_copies(self, tiny_model):
        wide = tiny_model.astype("float64")
        assert wide.params["enc.w1"].dtype == np.float64
        assert tiny_model.params["enc.w1"].dtype == np.float32
        wide.params["enc.w1"][0, 0] += 1.0
        assert wide.params["enc.w1"][0, 0] != tiny_model.params["enc.w1"][0, 0]


class TestPairLoss:
    def test_perfect_alignment(self, rng):
        z1, z2 = rng.standard_normal((2, 3, 4))
        np.testing.assert_allclose(simsiam_pair_loss(z2, z1, z1, z2), -1.0)

    def test_orthogonal(self):
        p = np.array([[1.0, 0.0]])
        z = np.array([[0.0, 1.0]])
        np.testing.assert_allclose(simsiam_pair_loss(p, p, z, z), [0.0])

    def test_antipodal(self, rng):
        z1, z2 = rng.standard_normal((2, 3, 4))
        np.testing.assert_allclose(simsiam_pair_loss(-z2, -z1, z1, z2), 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            simsiam_pair_loss(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 3)))


class TestMultiviewLoss:
    def test_two_identical(self):
        assert multiview_ssl_loss(np.array([[1.0, 0.0], [1.0, 0.0]])) == pytest.approx(-2.0)

    def test_three_orthogonal(self):
        assert multiview_ssl_loss(np.eye(3)) == pytest.approx(0.0)

    def test_cosine_half(self):
        views = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        assert multiview_ssl_loss(views) == pytest.approx(-1.0)

    @pytest.mark.parametrize("n", [2, 5, 20])
    @pytest.mark.parametrize("d_p", [3, 16])
    def test_deviation_is_affine_in_loss(self, n, d_p):
        rng = np.random.default_rng(n * 100 + d_p)
        for _ in range(1000):
            views = rng.standard_normal((n, d_p))
            expected = multiview_ssl_loss(views) / n ** 2 + (n - 1) / n
            assert abs(deviation(views) - expected) < 1e-9


class TestPerSampleStats:
    def test_identity_augmentation(self, tiny_model, rng):
        cfg = AugmentationConfig(noise_std=0.0, dropout=0.0)
        x = rng.standard_normal((3, 6)).astype(np.float32)
        stats = per_sample_stats(tiny_model, x, 4, cfg, rng)
        np.testing.assert_array_equal(stats.mean_angle, np.zeros(3))
        np.testing.assert_allclose(stats.mean_feature, encode(tiny_model, x), rtol=1e-6)

    def test_two_view_loss_is_shifted(self, tiny_model, rng, vector_augmentation):
        x = rng.standard_normal((5, 6))
        stats = per_sample_stats(tiny_model, x, 2, vector_augmentation, rng)
        assert stats.loss.shape == (5,)
        assert np.all(stats.loss >= 0.0) and np.all(stats.loss <= 2.0 + 1e-9)
        assert LOSS_SHIFT == 1.0

    def test_many_views_range(self, tiny_model, rng, vector_augmentation):
        x = rng.standard_normal((4, 6))
        stats = per_sample_stats(tiny_model, x, 20, vector_augmentation, rng)
        assert stats.loss is None
        assert stats.features.shape == (4, 20, 5)
        assert np.all((stats.mean_angle >= 0) & (stats.mean_angle <= np.pi))

    def test_self_pairs_halve_two_view_angle(self, tiny_model, rng, vector_augmentation):
        x = rng.standard_normal((4, 6))
        with_self = per_sample_stats(tiny_model, x, 2, vector_augmentation,
                                     np.random.default_rng(3), include_self_pairs=True)
        without = per_sample_stats(tiny_model, x, 2, vector_augmentation,
                                   np.random.default_rng(3), include_self_pairs=False)
        np.testing.assert_allclose(2 * with_self.mean_angle, without.mean_angle, rtol=1e-12)

    def test_single_view_rejected(self, tiny_model, rng, vector_augmentation):
        with pytest.raises(ValueError):
            per_sample_stats(tiny_model, rng.standard_normal((2, 6)), 1, vector_augmentation, rng)
