import numpy as np
import pytest

from metrics import (
    Hyperball,
    HyperballSet,
    avg_overlap_count,
    cev_levels,
    deviation,
    deviations,
    hyperball_summaries,
    hyperball_summary,
    latent_report,
    mean_angle,
    offline_buffer_overlap,
    online_buffer_overlap,
    overlap,
    overlap_matrix,
    svd_collapse_metrics,
    uniformity_loss,
)
from model import per_sample_stats
from replay import DeviationAwareBuffer
from stream import AugmentationConfig


def _ball_at(direction, theta):
    return Hyperball.from_stats(np.asarray(direction, dtype=np.float64), theta)


class TestDeviation:
    def test_identical_views(self):
        assert deviation(np.tile([0.3, 1.0, -2.0], (5, 1))) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_pair(self):
        assert deviation(np.eye(2)) == pytest.approx(0.5)

    def test_zero_view_self_pair_counts_as_aligned(self):
        views = np.array([[1.0, 0.0], [0.0, 0.0]])
        # cross pairs 0, self pairs 1
        assert deviation(views) == pytest.approx(0.5)
        np.testing.assert_allclose(deviations(views[None]), [0.5])

    def test_all_zero_views(self):
        assert deviation(np.zeros((3, 2))) == pytest.approx(2.0 / 3.0)

    def test_needs_projections(self):
        with pytest.raises(ValueError):
            deviation(_ball_at([1.0, 0.0], 0.1))


class TestMeanAngle:
    def test_identical_views(self):
        assert mean_angle(np.tile([1.0, 2.0], (4, 1))) == 0.0

    def test_antipodal_pair(self):
        views = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert mean_angle(views) == pytest.approx(np.pi / 2)

    def test_orthogonal_pair(self):
        assert mean_angle(np.eye(2)) == pytest.approx(np.pi / 4)


class TestOverlap:
    def test_identical_balls(self):
        a = _ball_at([1.0, 2.0, 3.0], 0.3)
        assert overlap(a, a) == pytest.approx(0.6, abs=1e-12)

    def test_zero_spread_orthogonal(self):
        assert overlap(_ball_at([1.0, 0.0], 0.0), _ball_at([0.0, 1.0], 0.0)) == \
            pytest.approx(-np.pi / 2, abs=1e-12)

    def test_no_intersection(self):
        a = _ball_at([1.0, 0.0], 0.2)
        b = _ball_at([np.cos(0.5), np.sin(0.5)], 0.2)
        assert overlap(a, b) == pytest.approx(-0.1, abs=1e-12)

    def test_self_overlap_is_twice_the_spread(self, rng):
        for _ in range(1000):
            views = rng.standard_normal((int(rng.integers(2, 10)), 6))
            ball = Hyperball.from_views(views)
            assert abs(overlap(ball, ball) - 2 * ball.mean_angle) < 1e-9

    def test_symmetry_and_rescaling(self, rng):
        for _ in range(1000):
            a = _ball_at(rng.standard_normal(5), rng.uniform(0, np.pi / 2))
            b = _ball_at(rng.standard_normal(5), rng.uniform(0, np.pi / 2))
            ab = overlap(a, b)
            assert abs(ab - overlap(b, a)) < 1e-9
            s, t = rng.uniform(0.01, 100.0, size=2)
            scaled = overlap(_ball_at(s * a.mean, a.mean_angle), _ball_at(t * b.mean, b.mean_angle))
            assert abs(ab - scaled) < 1e-9

    def test_matrix_matches_pairwise(self, rng):
        balls = [_ball_at(rng.standard_normal(4), rng.uniform(0, 1)) for _ in range(5)]
        means = np.stack([b.mean for b in balls])
        angles = np.array([b.mean_angle for b in balls])
        ov = overlap_matrix(means, angles)
        for i, a in enumerate(balls):
            for j, b in enumerate(balls):
                assert ov[i, j] == pytest.approx(overlap(a, b), abs=1e-12)


class TestAverageOverlapCount:
    def test_orthogonal_zero_spread(self):
        balls = [_ball_at(row, 0.0) for row in np.eye(4)]
        assert avg_overlap_count(balls) == 0.0

    def test_duplicated_ball(self):
        balls = [_ball_at([1.0, 1.0], 0.2)] * 5
        assert avg_overlap_count(balls) == 1.0

    def test_two_close_balls(self):
        a = _ball_at([1.0, 0.0], 0.3)
        b = _ball_at([np.cos(0.5), np.sin(0.5)], 0.3)
        assert avg_overlap_count([a, b]) == 1.0

    def test_without_self_pairs(self):
        a = _ball_at([1.0, 0.0], 0.1)
        b = _ball_at([0.0, 1.0], 0.1)
        assert avg_overlap_count([a, b], include_self_pairs=True) == 0.5
        assert avg_overlap_count([a, b], include_self_pairs=False) == 0.0

    def test_accepts_hyperball_set(self):
        means = np.array([[1.0, 0.0], [1.0, 0.01]])
        balls = HyperballSet(means, np.array([0.2, 0.2]), np.zeros(2))
        assert avg_overlap_count(balls) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            avg_overlap_count([])


class TestHyperballSummary:
    def test_identity_augmentation(self, tiny_model, rng):
        cfg = AugmentationConfig(noise_std=0.0, dropout=0.0)
        ball = hyperball_summary(tiny_model, rng.standard_normal(6), n_aug=5, cfg=cfg, rng=rng)
        assert ball.mean_angle == 0.0
        assert deviation(ball) == pytest.approx(0.0, abs=1e-6)

    def test_seeded_reproducible(self, tiny_model, vector_augmentation):
        x = np.linspace(-1, 1, 6)
        a = hyperball_summary(tiny_model, x, 20, vector_augmentation, np.random.default_rng(4))
        b = hyperball_summary(tiny_model, x, 20, vector_augmentation, np.random.default_rng(4))
        np.testing.assert_array_equal(a.mean, b.mean)
        assert a.mean_angle == b.mean_angle

    def test_deviation_range(self, tiny_model, vector_augmentation, toy_dataset):
        balls = hyperball_summaries(tiny_model, toy_dataset.X, 20, vector_augmentation, seed=1)
        assert len(balls) == len(toy_dataset)
        assert np.all((balls.deviations >= -1e-9) & (balls.deviations <= 2.0))


class TestCollapse:
    def test_uniformity_identical(self):
        assert uniformity_loss(np.tile([[1.0, 0.0]], (4, 1))) == pytest.approx(0.0)

    def test_uniformity_antipodal(self):
        assert uniformity_loss(np.array([[1.0, 0.0], [-1.0, 0.0]])) == pytest.approx(-8.0)

    def test_uniformity_orthogonal(self):
        assert uniformity_loss(np.eye(2)) == pytest.approx(-4.0)

    def test_rank_one(self, rng):
        features = np.outer(rng.standard_normal(10), rng.standard_normal(4))
        spectrum = svd_collapse_metrics(features)
        np.testing.assert_allclose(spectrum.normalized, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
        assert spectrum.cev_at(1) == pytest.approx(1.0)

    def test_orthonormal_rows(self):
        spectrum = svd_collapse_metrics(np.eye(4))
        for k in range(1, 5):
            assert spectrum.cev_at(k) == pytest.approx(k / 4)

    def test_random_monotone(self, rng):
        cev = svd_collapse_metrics(rng.standard_normal((30, 8))).cumulative
        assert np.all(np.diff(cev) >= -1e-12)
        assert cev[-1] == pytest.approx(1.0)

    def test_cev_levels(self):
        assert cev_levels(32) == [1, 2, 4, 8, 16, 32]
        assert cev_levels(6) == [1, 2, 4, 6]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            svd_collapse_metrics(np.zeros((0, 3)))


class TestLatentReport:
    def test_row_columns(self, tiny_model, toy_dataset, vector_augmentation):
        row = latent_report(tiny_model, toy_dataset, vector_augmentation, seed=0, n_aug=4,
                            subsample=16)
        assert {"deviation_mean", "avg_overlap_count", "uniformity", "cev_at_1",
                "cev_at_5"} <= set(row)
        assert 0.0 <= row["avg_overlap_count"] <= 1.0

    def test_reproducible(self, tiny_model, toy_dataset, vector_augmentation):
        a = latent_report(tiny_model, toy_dataset, vector_augmentation, seed=2, n_aug=4,
                          subsample=16)
        b = latent_report(tiny_model, toy_dataset, vector_augmentation, seed=2, n_aug=4,
                          subsample=16)
        assert a == b


class TestBufferOverlap:
    def test_online_estimate_tracks_offline_reference(self, tiny_model, toy_dataset):
        cfg = AugmentationConfig(noise_std=0.3, dropout=0.1)
        buffer = DeviationAwareBuffer(capacity=40, seed=0, eta=0.5)
        X = toy_dataset.X[::2]
        uids = np.arange(X.shape[0])
        rng = np.random.default_rng(8)
        first = per_sample_stats(tiny_model, X, 2, cfg, rng, include_self_pairs=False)
        buffer.insert(uids, X, first.loss, first.mean_feature, first.mean_angle)
        for _ in range(5):
            fresh = per_sample_stats(tiny_model, X, 2, cfg, rng, include_self_pairs=False)
            buffer.update_stats(uids, fresh.loss, fresh.mean_feature, fresh.mean_angle)

        online = online_buffer_overlap(buffer, include_self_pairs=False)
        offline = offline_buffer_overlap(tiny_model, buffer, cfg, seed=5, n_aug=20,
                                         include_self_pairs=False)
        assert online.relative_error(offline) < 0.10

    def test_needs_two_entries(self):
        buffer = DeviationAwareBuffer(capacity=4)
        buffer.insert([0], np.zeros((1, 3)), np.ones(1), np.ones((1, 2)), np.zeros(1))
        with pytest.raises(ValueError):
            online_buffer_overlap(buffer)
