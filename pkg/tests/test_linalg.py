import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from creditquote.linalg import categorical, make_rng, min_eigenvalue, ridge_solve


class TestMinEigenvalue:
    def test_identity(self):
        assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert min_eigenvalue(np.diag([2.0, 5.0, 0.5])) == pytest.approx(0.5, abs=1e-12)

    def test_matches_dense_eigensolver(self):
        rng = make_rng(7)
        for _ in range(20):
            a = rng.standard_normal((5, 5))
            m = a + a.T
            want = float(np.min(np.linalg.eigvalsh(m)))
            assert min_eigenvalue(m) == pytest.approx(want, abs=1e-10)

    def test_similarity_transform(self):
        rng = make_rng(8)
        for d in (2, 4, 8):
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            diag = rng.uniform(0.1, 5.0, size=d)
            m = q @ np.diag(diag) @ q.T
            m = 0.5 * (m + m.T)
            assert min_eigenvalue(m) == pytest.approx(float(diag.min()), abs=1e-9)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="asymmetric"):
            min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            min_eigenvalue(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestRidgeSolve:
    def test_identity_design_no_penalty(self):
        got = ridge_solve(np.eye(2), np.array([3.0, 4.0]), 0.0)
        np.testing.assert_allclose(got, [3.0, 4.0], atol=1e-12)

    def test_identity_design_unit_penalty(self):
        got = ridge_solve(np.eye(2), np.array([3.0, 4.0]), 1.0)
        np.testing.assert_allclose(got, [1.5, 2.0], atol=1e-12)

    def test_recovers_noiseless_coefficients(self):
        rng = make_rng(11)
        X = rng.standard_normal((50, 4))
        theta = rng.standard_normal(4)
        got = ridge_solve(X, X @ theta, 1e-8)
        np.testing.assert_allclose(got, theta, atol=1e-6)

    def test_singular_without_penalty(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(ValueError, match="rank deficient"):
            ridge_solve(X, np.array([1.0, 2.0]), 0.0)

    def test_norm_shrinks_with_penalty(self):
        rng = make_rng(12)
        X = rng.standard_normal((30, 3))
        y = rng.standard_normal(30)
        norms = [float(np.linalg.norm(ridge_solve(X, y, a)))
                 for a in (0.1, 10.0, 1000.0)]
        assert norms[0] > norms[1] > norms[2]


class TestRng:
    def test_reproducible_streams(self):
        a = make_rng(42).standard_normal(8)
        b = make_rng(42).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_subkeys_fork_streams(self):
        a = make_rng(42, 0).standard_normal(8)
        b = make_rng(42, 1).standard_normal(8)
        assert not np.array_equal(a, b)

    def test_categorical_degenerate(self):
        rng = make_rng(1)
        draws = [categorical(rng, np.array([1.0, 0.0, 0.0])) for _ in range(50)]
        assert set(draws) == {0}

    def test_categorical_frequency(self):
        rng = make_rng(2)
        draws = np.array([categorical(rng, np.array([0.5, 0.5]))
                          for _ in range(100_000)])
        assert abs(float(np.mean(draws == 0)) - 0.5) < 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_rng_streams_equal_per_seed(seed):
    np.testing.assert_array_equal(make_rng(seed).random(4), make_rng(seed).random(4))
