import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from sandwichpost.condextremes import (
    CondExtremesModel,
    CondExtremesParams,
    condex_composite,
    condex_loglik,
    laplace_threshold,
    mean_profile,
    scale_profile,
    simulate_single_site,
)
from sandwichpost.exceptions import EmptyCompositeError, NumericDomainError
from sandwichpost.fields import SiteSet


def brute_force_loglik(model, y, s0, y0, params=None):
    """Independent oracle: plain-python mean/cov assembly + scipy logpdf."""
    p = params if params is not None else model.params
    coords = model.sites.coords
    used = [k for k in range(len(coords)) if k != s0]
    if model.selection_radius is not None:
        used = [
            k for k in used
            if np.hypot(*(coords[k] - coords[s0])) <= model.selection_radius
        ]
    mean = []
    for k in used:
        d = float(np.hypot(*(coords[k] - coords[s0])))
        mean.append(y0 * np.exp(-((d / p.lambda_a) ** p.kappa_a)))
    n = len(used)
    cov = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            da = float(np.hypot(*(coords[used[a]] - coords[s0])))
            db = float(np.hypot(*(coords[used[b]] - coords[s0])))
            ba = p.sigma_b * np.sqrt(1.0 - np.exp(-2.0 * da / p.rho_b))
            bb = p.sigma_b * np.sqrt(1.0 - np.exp(-2.0 * db / p.rho_b))
            dd = float(np.hypot(*(coords[used[a]] - coords[used[b]])))
            kap = np.sqrt(8.0 * p.nu_z) / p.rho_z
            x = kap * dd
            corr = 1.0 if dd == 0.0 else (1.0 + x) * np.exp(-x)
            cov[a, b] = ba * bb * corr
            if a == b:
                cov[a, b] += 1.0 / p.tau
    return multivariate_normal.logpdf(np.asarray(y)[used], mean=np.asarray(mean), cov=cov)


def default_params(**kw):
    base = dict(lambda_a=19.1, kappa_a=0.6, sigma_b=1.9, rho_b=4.6, rho_z=13.0, tau=23.1)
    base.update(kw)
    return CondExtremesParams(**base)


def grid_model(n=4, spacing=2.0, threshold_prob=0.9975, **kw):
    xs = spacing * np.arange(n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    sites = SiteSet(np.column_stack([gx.ravel(), gy.ravel()]))
    return CondExtremesModel(
        params=default_params(), sites=sites, threshold=laplace_threshold(threshold_prob), **kw
    )


class TestProfiles:
    def test_mean_equals_exceedance_at_zero_distance(self):
        p = default_params()
        assert mean_profile(0.0, 6.0, p) == pytest.approx(6.0)

    def test_mean_vanishes_far_away(self):
        p = default_params()
        assert mean_profile(1e7, 6.0, p) < 1e-10

    def test_mean_at_range_distance(self):
        p = default_params(lambda_a=19.1, kappa_a=0.6)
        assert mean_profile(19.1, 1.0, p) == pytest.approx(np.exp(-1.0))

    def test_scale_zero_at_reference(self):
        assert scale_profile(0.0, default_params()) == 0.0

    def test_scale_saturates(self):
        p = default_params()
        assert scale_profile(1e6, p) == pytest.approx(p.sigma_b)

    def test_scale_closed_form_at_half_range(self):
        p = default_params()
        want = p.sigma_b * np.sqrt(1.0 - np.exp(-1.0))
        assert scale_profile(p.rho_b / 2.0, p) == pytest.approx(want)


class TestLaplaceThreshold:
    def test_quantile_formula(self):
        # upper-tail Laplace quantile: P(Y > t) = exp(-t)/2 for t >= 0
        t = laplace_threshold(0.9975)
        assert 0.5 * np.exp(-t) == pytest.approx(0.0025, rel=1e-12)

    def test_median_is_zero(self):
        assert laplace_threshold(0.5) == pytest.approx(0.0)


class TestCondexLoglik:
    def test_single_far_site_closed_form(self):
        p = default_params()
        sites = SiteSet([[0.0, 0.0], [7.0, 0.0]])
        model = CondExtremesModel(params=p, sites=sites, threshold=laplace_threshold(0.9975))
        y0 = 6.2
        yvec = np.array([y0, 3.3])
        want = norm.logpdf(
            3.3,
            loc=mean_profile(7.0, y0, p),
            scale=np.sqrt(scale_profile(7.0, p) ** 2 + 1.0 / p.tau),
        )
        assert condex_loglik(model, yvec, 0, y0) == pytest.approx(want, rel=1e-12)

    def test_vanishing_scale_gives_independent_nuggets(self):
        p = default_params(sigma_b=1e-8)
        model = grid_model()
        model = CondExtremesModel(params=p, sites=model.sites, threshold=model.threshold)
        rng = np.random.default_rng(0)
        y = rng.normal(size=len(model.sites))
        y0 = 6.0
        y[5] = y0
        got = condex_loglik(model, y, 5, y0)
        d = model.sites.distances[5]
        keep = np.arange(len(y)) != 5
        want = np.sum(
            norm.logpdf(y[keep], loc=y0 * np.exp(-((d[keep] / p.lambda_a) ** p.kappa_a)),
                        scale=np.sqrt(1.0 / p.tau))
        )
        assert got == pytest.approx(want, rel=1e-6)

    def test_brute_force_oracle_six_sites(self):
        rng = np.random.default_rng(1)
        coords = rng.uniform(0, 10, size=(6, 2))
        model = CondExtremesModel(
            params=default_params(), sites=SiteSet(coords), threshold=laplace_threshold(0.9975)
        )
        y0 = 5.9
        y = rng.normal(2.0, 1.0, size=6)
        y[2] = y0
        got = condex_loglik(model, y, 2, y0)
        want = brute_force_loglik(model, y, 2, y0)
        assert got == pytest.approx(want, abs=1e-10)

    def test_requires_exceedance(self):
        model = grid_model()
        with pytest.raises(NumericDomainError):
            condex_loglik(model, np.zeros(len(model.sites)), 0, model.threshold - 0.1)

    def test_far_site_independence_limit(self):
        # a single very distant site approaches the unconditional density
        p = default_params()
        sites = SiteSet([[0.0, 0.0], [1e5, 0.0]])
        model = CondExtremesModel(params=p, sites=sites, threshold=laplace_threshold(0.9975))
        y0 = 6.5
        val = 0.77
        got = condex_loglik(model, np.array([y0, val]), 0, y0)
        want = norm.logpdf(val, loc=0.0, scale=np.sqrt(p.sigma_b**2 + 1.0 / p.tau))
        assert got == pytest.approx(want, rel=1e-9)


class TestCondexComposite:
    def test_single_conditioning_site_reduces_to_sum(self):
        model = grid_model(cond_site_indices=(5,))
        rng = np.random.default_rng(2)
        t = model.threshold
        panel = rng.normal(0.0, 1.0, size=(6, len(model.sites)))
        panel[::2, 5] = t + rng.exponential(size=3)
        cl = condex_composite(model, panel)
        theta = model.param_vector()
        want = sum(
            condex_loglik(model, panel[j], 5, panel[j, 5])
            for j in range(6)
            if panel[j, 5] > t
        )
        assert cl.value(theta) == pytest.approx(want, rel=1e-12)

    def test_no_exceedances_raises(self):
        model = grid_model()
        panel = np.zeros((4, len(model.sites)))
        with pytest.raises(EmptyCompositeError):
            condex_composite(model, panel)

    def test_two_site_hand_built_double_sum(self):
        p = default_params()
        sites = SiteSet([[0.0, 0.0], [3.0, 0.0]])
        t = laplace_threshold(0.99)
        model = CondExtremesModel(params=p, sites=sites, threshold=t)
        rng = np.random.default_rng(3)
        panel = rng.normal(1.0, 2.5, size=(8, 2))
        if not np.any(panel > t):
            panel[0, 0] = t + 1.0
        cl = condex_composite(model, panel)
        theta = model.param_vector()
        want = 0.0
        for i in (0, 1):
            for j in range(8):
                if panel[j, i] > t:
                    want += condex_loglik(model, panel[j], i, panel[j, i])
        assert cl.value(theta) == pytest.approx(want, rel=1e-12)

    def test_value_equals_eval_of_own_terms(self):
        # no special-cased evaluation path: the batch evaluator agrees with
        # the per-term evaluators
        model = grid_model()
        rng = np.random.default_rng(4)
        panel = rng.normal(0.0, 2.2, size=(5, len(model.sites)))
        panel[0, 3] = model.threshold + 1.0
        cl = condex_composite(model, panel)
        theta = model.param_vector()
        batch = cl.term_values(theta)
        per_term = np.array([term.evaluator(theta) for term in cl.terms])
        assert np.allclose(batch, per_term, rtol=1e-10)

    def test_weights_are_exceedance_indicators(self):
        model = grid_model()
        rng = np.random.default_rng(5)
        panel = rng.normal(0.0, 2.2, size=(5, len(model.sites)))
        panel[1, 7] = model.threshold + 0.5
        cl = condex_composite(model, panel)
        assert np.all(cl.weights == 1.0)
        for term in cl.terms:
            assert panel[term.time_id, term.term_id] > model.threshold


class TestSimulateSingleSite:
    def test_conditioning_value_is_exceedance(self):
        model = grid_model()
        draws = simulate_single_site(model, 5, 500, np.random.default_rng(6))
        assert np.all(draws[:, 5] > model.threshold)

    def test_mean_at_distance_matches_profile(self):
        model = grid_model()
        p = model.params
        rng = np.random.default_rng(7)
        n = 200_000
        draws = simulate_single_site(model, 0, n, rng)
        d = model.sites.distances[0]
        k = 3  # a site at distance d[k]
        # E[y(s)] = E[y0] * alpha(d); y0 = t + Exp(1)
        alpha = np.exp(-((d[k] / p.lambda_a) ** p.kappa_a))
        want = (model.threshold + 1.0) * alpha
        sd = np.sqrt(scale_profile(d[k], p) ** 2 + 1.0 / p.tau + alpha**2)
        assert draws[:, k].mean() == pytest.approx(want, abs=3 * sd / np.sqrt(n))

    def test_variance_at_distance(self):
        model = grid_model()
        p = model.params
        draws = simulate_single_site(model, 0, 100_000, np.random.default_rng(8))
        d = model.sites.distances[0]
        k = 9
        alpha = np.exp(-((d[k] / p.lambda_a) ** p.kappa_a))
        want = scale_profile(d[k], p) ** 2 + 1.0 / p.tau + alpha**2 * 1.0  # Var(y0) = 1
        got = draws[:, k].var()
        assert abs(got - want) / want < 0.05

    def test_deterministic_under_seed(self):
        model = grid_model()
        a = simulate_single_site(model, 2, 20, np.random.default_rng(9))
        b = simulate_single_site(model, 2, 20, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestModelValidation:
    def test_positive_parameters_required(self):
        with pytest.raises(NumericDomainError):
            default_params(tau=-1.0)

    def test_cond_site_indices_validated(self):
        with pytest.raises(NumericDomainError):
            grid_model(cond_site_indices=(999,))

    def test_free_names_validated(self):
        with pytest.raises(NumericDomainError):
            grid_model(free_names=("nonsense",))

    def test_param_vector_roundtrip(self):
        model = grid_model(free_names=("lambda", "tau"))
        theta = model.param_vector()
        assert theta.names == ("lambda", "tau")
        params = model.params_from_theta(theta.with_values([10.0, 5.0]))
        assert params.lambda_a == 10.0
        assert params.tau == 5.0
        assert params.kappa_a == model.params.kappa_a
