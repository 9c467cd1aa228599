import numpy as np
import pytest

from sandwichpost.adjust import (
    adjust_draws,
    build_C,
    estimate_H,
    estimate_J,
    full_adjustment_pipeline,
    godambe,
)
from sandwichpost.inference import GaussianLinkPrior, credible_interval
from sandwichpost.likelihoods import (
    CompositeLikelihood,
    CompositeTerm,
    NeighborStructure,
    ParamVector,
    gaussian_fixed_var_loglik,
    numeric_gradient,
    numeric_hessian,
    student_t_sample,
)
from sandwichpost.matrixkit import SpdMatrix


def random_spd(dim, rng, scale=1.0):
    a = rng.standard_normal((dim, dim))
    return SpdMatrix(scale * (a @ a.T + dim * np.eye(dim)))


class TestEstimateH:
    def test_iid_gaussian_information(self):
        y = np.random.default_rng(0).standard_normal(250)
        cl = gaussian_fixed_var_loglik(y)
        h, warn = estimate_H(cl, ParamVector(("mu",), [0.1]))
        assert h.values[0, 0] == pytest.approx(len(y), rel=1e-4)
        assert warn == ()

    def test_quadratic_terms_sum_curvature(self):
        a = np.array([[2.0, 0.3], [0.3, 1.5]])

        def make_term(k):
            return CompositeTerm(
                term_id=0, time_id=k, weight=1.0,
                evaluator=lambda th: -0.5 * float(th.values @ a @ th.values),
            )

        cl = CompositeLikelihood([make_term(k) for k in range(7)])
        h, _ = estimate_H(cl, ParamVector(("a", "b"), [0.2, -0.1]))
        assert np.allclose(h.values, 7 * a, rtol=1e-4)

    def test_matches_whole_function_hessian(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal(40)
        cl = gaussian_fixed_var_loglik(y)
        theta = ParamVector(("mu",), [0.3])
        h, _ = estimate_H(cl, theta)
        direct = -numeric_hessian(lambda u: cl.value(theta.with_unconstrained(u)), theta.to_unconstrained())
        assert np.allclose(h.values, direct, rtol=1e-6)


class TestEstimateJ:
    def test_window_zero_outer_product_oracle(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(60)
        cl = gaussian_fixed_var_loglik(y)
        theta = ParamVector(("mu",), [0.1])
        j, _ = estimate_J(cl, theta, NeighborStructure(0))
        # direct loop oracle: per-time scores, sum of outer products
        g = np.array([numeric_gradient(
            lambda u, yv=yv: -0.5 * (np.log(2 * np.pi) + (yv - u[0]) ** 2), theta.values
        )[0] for yv in y])
        want = np.sum(g * g)
        assert j.values[0, 0] == pytest.approx(want, rel=1e-6)

    def test_full_window_brute_force_double_sum(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal(5)

        def make_term(k):
            return CompositeTerm(
                term_id=0, time_id=k, weight=1.0,
                evaluator=lambda th, v=vals[k]: v * float(th.values[0]) - 0.5 * th.values[0] ** 2,
            )

        cl = CompositeLikelihood([make_term(k) for k in range(5)])
        theta = ParamVector(("x",), [0.4])
        j, _ = estimate_J(cl, theta, NeighborStructure(10))
        scores = vals - 0.4
        want = np.sum(scores) ** 2
        assert j.values[0, 0] == pytest.approx(want, rel=1e-6)

    def test_window_one_banded_oracle(self):
        rng = np.random.default_rng(4)
        vals = rng.standard_normal(6)

        def make_term(k):
            return CompositeTerm(
                term_id=0, time_id=k, weight=1.0,
                evaluator=lambda th, v=vals[k]: v * float(th.values[0]),
            )

        cl = CompositeLikelihood([make_term(k) for k in range(6)])
        theta = ParamVector(("x",), [0.0])
        j, _ = estimate_J(cl, theta, NeighborStructure(1))
        want = sum(
            vals[i] * vals[k]
            for i in range(6)
            for k in range(6)
            if abs(i - k) <= 1
        )
        assert j.values[0, 0] == pytest.approx(want, rel=1e-6)

    def test_fisher_identity_correct_model(self):
        rng = np.random.default_rng(5)
        y = rng.standard_normal(10_000)
        cl = gaussian_fixed_var_loglik(y)
        theta = ParamVector(("mu",), [float(np.mean(y))])
        h, _ = estimate_H(cl, theta)
        j, _ = estimate_J(cl, theta, NeighborStructure(0))
        rel = abs(j.values[0, 0] - h.values[0, 0]) / h.values[0, 0]
        assert rel < 0.10

    def test_relabel_terms_within_time_invariant(self):
        rng = np.random.default_rng(6)
        y = rng.standard_normal(12)

        def build(order):
            terms = []
            for t in range(6):
                ids = order(t)
                for i, k in enumerate(ids):
                    terms.append(
                        CompositeTerm(
                            term_id=i, time_id=t, weight=1.0,
                            evaluator=lambda th, v=y[k]: -0.5 * (v - th.values[0]) ** 2,
                        )
                    )
            return CompositeLikelihood(terms)

        theta = ParamVector(("mu",), [0.2])
        j1, _ = estimate_J(build(lambda t: (2 * t, 2 * t + 1)), theta, NeighborStructure(0))
        j2, _ = estimate_J(build(lambda t: (2 * t + 1, 2 * t)), theta, NeighborStructure(0))
        assert np.allclose(j1.values, j2.values, rtol=1e-10)


class TestGodambe:
    def test_equal_matrices_reduce_to_fisher(self):
        rng = np.random.default_rng(7)
        h = random_spd(3, rng)
        g = godambe(h, h)
        assert np.allclose(g.values, h.values, rtol=1e-10)

    def test_scalar_formula(self):
        h = SpdMatrix([[4.0]])
        j = SpdMatrix([[2.0]])
        assert godambe(h, j).values[0, 0] == pytest.approx(8.0)

    def test_random_pair_dense_oracle(self):
        rng = np.random.default_rng(8)
        h = random_spd(5, rng)
        j = random_spd(5, rng)
        want = h.values @ np.linalg.inv(j.values) @ h.values
        assert np.allclose(godambe(h, j).values, 0.5 * (want + want.T), rtol=1e-10)


class TestBuildC:
    def test_identity_when_h_equals_godambe(self):
        rng = np.random.default_rng(9)
        h = random_spd(4, rng)
        c = build_C(h, h)
        assert np.allclose(c, np.eye(4), atol=1e-10)

    def test_scalar_sqrt_ratio(self):
        c = build_C(SpdMatrix([[4.0]]), SpdMatrix([[9.0]]))
        assert c[0, 0] == pytest.approx(np.sqrt(4.0 / 9.0))

    def test_defining_equation_dim6(self):
        rng = np.random.default_rng(10)
        h = random_spd(6, rng)
        g = random_spd(6, rng)
        c = build_C(h, g)
        h_inv = np.linalg.inv(h.values)
        g_inv = np.linalg.inv(g.values)
        resid = np.linalg.norm(c @ h_inv @ c.T - g_inv) / np.linalg.norm(g_inv)
        assert resid < 1e-8


def _gaussian_draws(rng, mean, cov, n, names):
    from sandwichpost.inference import PosteriorDraws

    chol = np.linalg.cholesky(cov)
    u = mean + rng.standard_normal((n, len(mean))) @ chol.T
    return PosteriorDraws(
        names=names,
        links=("identity",) * len(names),
        draws=u.copy(),
        draws_unconstrained=u,
        sampler="test",
        seed=None,
        mode=ParamVector(names, mean),
    )


class TestAdjustDraws:
    def make_estimate(self, theta_star, h, g):
        from sandwichpost.adjust import SandwichEstimate

        c = build_C(h, g)
        return SandwichEstimate(
            theta_star=theta_star, h_mat=h, j_mat=h, godambe_mat=g, c_mat=c, window=0
        )

    def test_identity_c_leaves_draws(self):
        rng = np.random.default_rng(11)
        h = random_spd(2, rng)
        est = self.make_estimate(ParamVector(("a", "b"), [0.5, -0.5]), h, h)
        draws = _gaussian_draws(rng, np.array([0.5, -0.5]), np.eye(2), 100, ("a", "b"))
        out = adjust_draws(draws, est)
        assert np.allclose(out.draws, draws.draws, atol=1e-12)
        assert out.sampler == "adjusted:test"

    def test_center_is_fixed_point(self):
        rng = np.random.default_rng(12)
        h = random_spd(2, rng)
        g = random_spd(2, rng)
        center = np.array([1.0, 2.0])
        est = self.make_estimate(ParamVector(("a", "b"), center), h, g)
        draws = _gaussian_draws(rng, center, 1e-30 * np.eye(2), 5, ("a", "b"))
        out = adjust_draws(draws, est)
        assert np.allclose(out.draws, center, atol=1e-9)

    def test_pushforward_covariance_is_godambe_inverse(self):
        rng = np.random.default_rng(13)
        h = random_spd(3, rng)
        g = random_spd(3, rng)
        center = np.zeros(3)
        est = self.make_estimate(ParamVector(("a", "b", "c"), center), h, g)
        h_inv = np.linalg.inv(h.values)
        draws = _gaussian_draws(rng, center, h_inv, 10_000, ("a", "b", "c"))
        out = adjust_draws(draws, est)
        emp = np.cov(out.draws.T)
        g_inv = np.linalg.inv(g.values)
        assert np.all(np.abs(emp - g_inv) <= 0.10 * np.maximum(np.abs(g_inv), np.max(np.abs(g_inv)) * 0.3))

    def test_affine_mean_identity(self):
        rng = np.random.default_rng(14)
        h = random_spd(2, rng)
        g = random_spd(2, rng)
        center = np.array([0.3, -0.7])
        est = self.make_estimate(ParamVector(("a", "b"), center), h, g)
        draws = _gaussian_draws(rng, center + 0.5, np.eye(2), 200, ("a", "b"))
        out = adjust_draws(draws, est)
        want = center + est.c_mat @ (draws.draws.mean(axis=0) - center)
        assert np.allclose(out.draws.mean(axis=0), want, atol=1e-12)

    def test_empirical_cov_transforms_exactly(self):
        rng = np.random.default_rng(15)
        h = random_spd(2, rng)
        g = random_spd(2, rng)
        est = self.make_estimate(ParamVector(("a", "b"), [0.0, 0.0]), h, g)
        draws = _gaussian_draws(rng, np.zeros(2), np.eye(2), 300, ("a", "b"))
        out = adjust_draws(draws, est)
        want = est.c_mat @ np.cov(draws.draws.T) @ est.c_mat.T
        assert np.allclose(np.cov(out.draws.T), want, atol=1e-10)


class TestPipeline:
    def test_correctly_specified_c_near_identity(self):
        rng = np.random.default_rng(16)
        y = rng.standard_normal(10_000)
        cl = gaussian_fixed_var_loglik(y)
        pipe = full_adjustment_pipeline(
            cl,
            [GaussianLinkPrior("mu", 0.0, 1000.0)],
            ParamVector(("mu",), [0.0]),
            n_s=500,
            rng=np.random.default_rng(17),
            two_step=False,
        )
        c = pipe.estimate.c_mat
        assert np.linalg.norm(c - np.eye(1), 2) < 0.10

    def test_heavy_tail_study_widens_by_factor_three(self):
        rng = np.random.default_rng(18)
        y = student_t_sample(1.0, 100, rng)
        cl = gaussian_fixed_var_loglik(y)
        pipe = full_adjustment_pipeline(
            cl,
            [GaussianLinkPrior("mu", 0.0, np.sqrt(1000.0))],
            ParamVector(("mu",), [0.0]),
            n_s=4000,
            rng=np.random.default_rng(19),
            two_step=False,
        )
        ci_u = credible_interval(pipe.unadjusted, 0.95)
        ci_a = credible_interval(pipe.adjusted, 0.95)
        width_u = ci_u.upper[0] - ci_u.lower[0]
        width_a = ci_a.upper[0] - ci_a.lower[0]
        assert width_a / width_u > 3.0

    def test_pipeline_determinism_under_seed(self):
        y = student_t_sample(1.0, 50, np.random.default_rng(20))
        cl = gaussian_fixed_var_loglik(y)

        def run():
            return full_adjustment_pipeline(
                cl,
                [GaussianLinkPrior("mu", 0.0, 30.0)],
                ParamVector(("mu",), [0.0]),
                n_s=100,
                rng=np.random.default_rng(21),
                two_step=False,
            )

        a, b = run(), run()
        assert np.array_equal(a.adjusted.draws, b.adjusted.draws)
        assert np.array_equal(a.estimate.c_mat, b.estimate.c_mat)

    def test_adjusted_shares_draws_with_unadjusted(self):
        y = student_t_sample(1.0, 50, np.random.default_rng(22))
        cl = gaussian_fixed_var_loglik(y)
        pipe = full_adjustment_pipeline(
            cl,
            [GaussianLinkPrior("mu", 0.0, 30.0)],
            ParamVector(("mu",), [0.0]),
            n_s=100,
            rng=np.random.default_rng(23),
            two_step=False,
        )
        est = pipe.estimate
        u_star = est.theta_star.to_unconstrained()
        want = u_star + (pipe.unadjusted.draws_unconstrained - u_star) @ est.c_mat.T
        assert np.allclose(pipe.adjusted.draws_unconstrained, want, atol=1e-12)

    def test_report_contains_key_fields(self):
        y = student_t_sample(1.0, 30, np.random.default_rng(24))
        cl = gaussian_fixed_var_loglik(y)
        pipe = full_adjustment_pipeline(
            cl,
            [GaussianLinkPrior("mu", 0.0, 30.0)],
            ParamVector(("mu",), [0.0]),
            n_s=50,
            rng=np.random.default_rng(25),
            two_step=False,
        )
        report = pipe.estimate.report()
        for needle in ("theta*", "Godambe", "C (adjustment matrix)", "window"):
            assert needle in report


class TestSandwichInvariants:
    def test_defining_equation_every_constructed_c(self):
        rng = np.random.default_rng(26)
        for _ in range(25):
            dim = int(rng.integers(2, 7))
            h = random_spd(dim, rng)
            g = random_spd(dim, rng)
            c = build_C(h, g)
            h_inv = np.linalg.inv(h.values)
            g_inv = np.linalg.inv(g.values)
            resid = np.linalg.norm(c @ h_inv @ c.T - g_inv) / np.linalg.norm(g_inv)
            assert resid < 1e-8
