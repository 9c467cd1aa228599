import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandwichpost.exceptions import NotSpdError, NumericDomainError
from sandwichpost.matrixkit import SpdMatrix, floor_eigenvalues, mvn_sample, spd_solve, spd_sqrt


def random_spd(dim, rng, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = np.linspace(1.0, cond, dim)
    return q @ np.diag(eigs) @ q.T


class TestSpdMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(NotSpdError):
            SpdMatrix([[1.0, 0.5], [0.1, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(NotSpdError):
            SpdMatrix([[1.0, 0.0], [0.0, -1.0]])

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericDomainError):
            SpdMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_near_singular_floors_with_warning(self):
        a = np.diag([1.0, 1e-16])
        with pytest.warns(RuntimeWarning):
            m = SpdMatrix(a)
        assert m.floored
        assert np.linalg.eigvalsh(m.values)[0] > 0

    def test_logdet_matches_slogdet(self):
        rng = np.random.default_rng(0)
        a = SpdMatrix(random_spd(4, rng))
        assert np.isclose(a.logdet(), np.linalg.slogdet(a.values)[1])


class TestSpdSqrt:
    def test_identity(self):
        m = spd_sqrt(SpdMatrix(np.eye(3)))
        assert np.allclose(m.factor, np.eye(3))

    def test_diagonal(self):
        m = spd_sqrt(SpdMatrix(np.diag([4.0, 9.0])))
        assert np.allclose(m.factor, np.diag([2.0, 3.0]))

    def test_random_spd_reconstructs(self):
        rng = np.random.default_rng(5)
        a = SpdMatrix(random_spd(5, rng))
        m = spd_sqrt(a)
        resid = np.linalg.norm(m.factor.T @ m.factor - a.values) / np.linalg.norm(a.values)
        assert resid < 1e-10

    def test_factor_is_symmetric(self):
        rng = np.random.default_rng(6)
        m = spd_sqrt(SpdMatrix(random_spd(4, rng)))
        assert np.allclose(m.factor, m.factor.T)


class TestSpdSolve:
    def test_identity(self):
        b = np.array([3.0, -1.0])
        assert np.allclose(spd_solve(SpdMatrix(np.eye(2)), b), b)

    def test_diagonal(self):
        x = spd_solve(SpdMatrix(np.diag([2.0, 4.0])), np.array([1.0, 1.0]))
        assert np.allclose(x, [0.5, 0.25])

    def test_residual_oracle(self):
        rng = np.random.default_rng(7)
        a = SpdMatrix(random_spd(6, rng))
        b = rng.standard_normal((6, 3))
        x = spd_solve(a, b)
        resid = np.linalg.norm(a.values @ x - b) / np.linalg.norm(b)
        assert resid < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(NumericDomainError):
            spd_solve(SpdMatrix(np.eye(2)), np.zeros(3))

    def test_roundtrip_recovery(self):
        # a x known, solve recovers x up to conditioning 1e7
        rng = np.random.default_rng(8)
        for cond in (1e4, 1e7):
            a = SpdMatrix(random_spd(5, rng, cond=cond))
            x = rng.standard_normal(5)
            x_hat = spd_solve(a, a.values @ x)
            assert np.linalg.norm(x_hat - x) / np.linalg.norm(x) < 1e-8


class TestMvnSample:
    def test_clt_bound_on_mean(self):
        rng = np.random.default_rng(11)
        draws = mvn_sample([0.0], SpdMatrix(np.eye(1)), 100_000, rng)
        assert abs(draws.mean()) < 4.0 / np.sqrt(100_000)

    def test_degenerate_limit(self):
        rng = np.random.default_rng(12)
        mu = np.array([2.0, -3.0])
        draws = mvn_sample(mu, SpdMatrix(1e-12 * np.eye(2)), 100, rng)
        assert np.max(np.abs(draws - mu)) < 1e-5

    def test_mc_variances(self):
        rng = np.random.default_rng(13)
        draws = mvn_sample([0.0, 0.0], SpdMatrix(np.diag([1.0, 4.0])), 100_000, rng)
        v = draws.var(axis=0)
        assert abs(v[0] - 1.0) < 0.05
        assert abs(v[1] - 4.0) < 0.2

    def test_seeded_bit_reproducibility(self):
        cov = SpdMatrix(np.diag([1.0, 2.0]))
        a = mvn_sample([0.0, 0.0], cov, 50, np.random.default_rng(99))
        b = mvn_sample([0.0, 0.0], cov, 50, np.random.default_rng(99))
        assert a.tobytes() == b.tobytes()

    def test_requires_positive_n(self):
        with pytest.raises(NumericDomainError):
            mvn_sample([0.0], SpdMatrix(np.eye(1)), 0, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=10_000))
def test_sqrt_property_reconstruction(dim, seed):
    rng = np.random.default_rng(seed)
    a = SpdMatrix(random_spd(dim, rng, cond=50.0))
    m = spd_sqrt(a)
    resid = np.linalg.norm(m.factor.T @ m.factor - a.values) / np.linalg.norm(a.values)
    assert resid < 1e-10


def test_floor_eigenvalues_indefinite():
    a = np.diag([1.0, -0.5])
    mat, floored = floor_eigenvalues(a)
    assert floored
    assert np.linalg.eigvalsh(mat.values)[0] > 0
