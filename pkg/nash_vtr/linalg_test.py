import numpy as np
import pytest

from nash_vtr.linalg import (
    CorrelationVector,
    NumericError,
    RegressionHistory,
    WeightedCovariance,
    batch_ridge_solution,
    bonus_norm,
    bonus_norms,
    ellipsoid_distance,
    inverse_drift,
    rank_one_update,
    ridge_solve,
)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


class TestWeightedCovariance:
    def test_identity_initialization(self) -> None:
        cov = WeightedCovariance.identity(3, 0.5)
        np.testing.assert_allclose(cov.matrix, 0.5 * np.eye(3))
        np.testing.assert_allclose(cov.inverse, 2.0 * np.eye(3))
        assert cov.count == 0
        assert cov.dim == 3

    def test_reject_nonpositive_lambda(self) -> None:
        with pytest.raises(ValueError, match="lam"):
            WeightedCovariance.identity(2, 0.0)

    def test_copy_is_independent(self) -> None:
        cov = WeightedCovariance.identity(2, 1.0)
        other = cov.copy()
        rank_one_update(other, np.array([1.0, 0.0]), 1.0)
        np.testing.assert_allclose(cov.matrix, np.eye(2))


class TestRankOneUpdate:
    def test_axis_update(self) -> None:
        cov = rank_one_update(WeightedCovariance.identity(2, 1.0), np.array([1.0, 0.0]), 1.0)
        np.testing.assert_allclose(cov.matrix, np.diag([2.0, 1.0]))
        np.testing.assert_allclose(cov.inverse, np.diag([0.5, 1.0]))
        assert cov.count == 1

    def test_weighted_diagonal_update(self) -> None:
        cov = rank_one_update(WeightedCovariance.identity(2, 1.0), np.array([1.0, 1.0]), 4.0)
        np.testing.assert_allclose(cov.matrix, [[5.0, 4.0], [4.0, 5.0]])
        np.testing.assert_allclose(cov.inverse, np.array([[5.0, -4.0], [-4.0, 5.0]]) / 9.0, atol=1e-14)

    def test_maintained_inverse_matches_dense_inverse(self, rng: np.random.Generator) -> None:
        cov = WeightedCovariance.identity(8, 1.0)
        for _ in range(100):
            rank_one_update(cov, rng.normal(size=8), float(rng.uniform(0.1, 5.0)))
        np.testing.assert_allclose(cov.inverse, np.linalg.inv(cov.matrix), atol=1e-8)
        assert inverse_drift(cov) <= 1e-8

    def test_symmetry_and_lower_eigenvalue(self, rng: np.random.Generator) -> None:
        lam = 0.3
        cov = WeightedCovariance.identity(5, lam)
        for _ in range(600):
            rank_one_update(cov, rng.normal(size=5), float(rng.uniform(0.01, 2.0)))
        assert np.abs(cov.matrix - cov.matrix.T).max() <= 1e-12
        assert np.linalg.eigvalsh(cov.matrix).min() >= lam - 1e-9
        assert inverse_drift(cov) <= 1e-8

    def test_zero_vector_is_skipped(self) -> None:
        cov = rank_one_update(WeightedCovariance.identity(2, 1.0), np.zeros(2), 1.0)
        assert cov.count == 0
        np.testing.assert_allclose(cov.matrix, np.eye(2))

    def test_reject_nonfinite_input(self) -> None:
        with pytest.raises(NumericError):
            rank_one_update(WeightedCovariance.identity(2, 1.0), np.array([np.nan, 1.0]), 1.0)

    def test_reject_nonpositive_weight(self) -> None:
        with pytest.raises(ValueError, match="weight"):
            rank_one_update(WeightedCovariance.identity(2, 1.0), np.array([1.0, 1.0]), 0.0)

    def test_reject_wrong_shape(self) -> None:
        with pytest.raises(ValueError, match="shape"):
            rank_one_update(WeightedCovariance.identity(2, 1.0), np.ones(3), 1.0)


class TestRidgeSolve:
    def test_zero_correlation(self) -> None:
        theta = ridge_solve(WeightedCovariance.identity(3, 1.0), CorrelationVector.zeros(3))
        np.testing.assert_allclose(theta, np.zeros(3))

    def test_single_sample_hand_solve(self) -> None:
        x = np.array([1.0, 0.0])
        cov = rank_one_update(WeightedCovariance.identity(2, 1.0), x, 1.0)
        b = CorrelationVector.zeros(2).accumulate(x, 2.0, 1.0)
        np.testing.assert_allclose(ridge_solve(cov, b), [1.0, 0.0], atol=1e-12)

    def test_noiseless_interpolation(self) -> None:
        theta_star = np.array([0.2, -0.5, 0.9])
        cov = WeightedCovariance.identity(3, 1e-8)
        b = CorrelationVector.zeros(3)
        for x in np.eye(3):
            rank_one_update(cov, x, 1.0)
            b.accumulate(x, float(x @ theta_star), 1.0)
        np.testing.assert_allclose(ridge_solve(cov, b), theta_star, atol=1e-6)

    def test_residual_bound(self, rng: np.random.Generator) -> None:
        cov = WeightedCovariance.identity(6, 0.1)
        b = CorrelationVector.zeros(6)
        for _ in range(50):
            x = rng.normal(size=6)
            w = float(rng.uniform(0.5, 2.0))
            rank_one_update(cov, x, w)
            b.accumulate(x, float(rng.normal()), w)
        theta = ridge_solve(cov, b)
        residual = np.abs(cov.matrix @ theta - b.vector).max()
        assert residual <= 1e-10 * (1.0 + np.abs(b.vector).max())

    def test_corrupted_covariance_raises(self) -> None:
        cov = WeightedCovariance.identity(2, 1.0)
        cov.matrix = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericError):
            ridge_solve(cov, CorrelationVector.zeros(2))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_recursion_matches_batch_minimizer(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        dim, lam = 8, 0.25
        cov = WeightedCovariance.identity(dim, lam)
        b = CorrelationVector.zeros(dim)
        history = RegressionHistory()
        for _ in range(200):
            x = rng.normal(size=dim)
            y = float(rng.normal())
            w = float(rng.uniform(0.1, 3.0))
            rank_one_update(cov, x, w)
            b.accumulate(x, y, w)
            history.append(x, y, w)
        np.testing.assert_allclose(ridge_solve(cov, b), batch_ridge_solution(history, dim, lam), atol=1e-8)


class TestBonusNorm:
    def test_isotropic_covariance(self) -> None:
        x = np.array([3.0, 4.0])
        assert bonus_norm(WeightedCovariance.identity(2, 4.0), x) == pytest.approx(5.0 / 2.0)

    def test_diagonal_covariance(self) -> None:
        cov = WeightedCovariance.identity(2, 1.0)
        rank_one_update(cov, np.array([1.0, 0.0]), 3.0)
        assert bonus_norm(cov, np.array([2.0, 3.0])) == pytest.approx(np.sqrt(10.0))

    def test_batched_norms_match_single(self, rng: np.random.Generator) -> None:
        cov = WeightedCovariance.identity(4, 1.0)
        for _ in range(10):
            rank_one_update(cov, rng.normal(size=4), 1.0)
        xs = rng.normal(size=(3, 2, 4))
        norms = bonus_norms(cov, xs)
        assert norms.shape == (3, 2)
        assert norms[1, 1] == pytest.approx(bonus_norm(cov, xs[1, 1]))

    def test_nonincreasing_under_updates(self, rng: np.random.Generator) -> None:
        cov = WeightedCovariance.identity(5, 1.0)
        for _ in range(100):
            probe = rng.normal(size=5)
            before = bonus_norm(cov, probe)
            rank_one_update(cov, rng.normal(size=5), float(rng.uniform(0.1, 2.0)))
            assert bonus_norm(cov, probe) <= before + 1e-12

    def test_reject_nonfinite_probe(self) -> None:
        with pytest.raises(NumericError):
            bonus_norm(WeightedCovariance.identity(2, 1.0), np.array([np.inf, 0.0]))


class TestEllipsoidDistance:
    def test_isotropic(self) -> None:
        cov = WeightedCovariance.identity(2, 4.0)
        assert ellipsoid_distance(cov, np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(10.0)
