"""Priors, posterior mode finding, posterior samplers and scoring.

The posterior is always explored on the unconstrained (link-transformed)
scale, with the change-of-variable Jacobian included, and draws are
reported back on the natural scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.special

from . import config
from .exceptions import NotSpdError, NumericDomainError, SandwichPostError
from .likelihoods import CompositeLikelihood, ParamVector, numeric_gradient, numeric_hessian
from .matrixkit import floor_eigenvalues, mvn_sample

__all__ = [
    "GaussianLinkPrior",
    "GammaPrior",
    "PcJointRangeSdPrior",
    "LogPosterior",
    "log_posterior",
    "ModeResult",
    "find_mode",
    "PosteriorDraws",
    "laplace_sample",
    "mcmc_sample",
    "CredibleInterval",
    "credible_interval",
    "log_score",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianLinkPrior:
    """Gaussian prior on a parameter's link scale.

    For a log-linked parameter this is a log-normal natural-scale prior;
    for an identity link it is a plain Gaussian.  ``link`` must match the
    parameter's link in the ParamVector.
    """

    name: str
    mean: float
    sd: float
    link: str = "identity"

    def __post_init__(self):
        if self.sd <= 0:
            raise NumericDomainError("prior sd must be positive")

    @property
    def names(self):
        return (self.name,)

    def logpdf(self, values) -> float:
        x = float(values[0])
        if self.link == "log":
            if x <= 0:
                return -np.inf
            u = np.log(x)
            jac = -u  # d(log x)/dx = 1/x
        else:
            u = x
            jac = 0.0
        return -0.5 * (_LOG_2PI + ((u - self.mean) / self.sd) ** 2) - np.log(self.sd) + jac


@dataclass(frozen=True)
class GammaPrior:
    """Gamma prior with shape/scale parameterization."""

    name: str
    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise NumericDomainError("gamma shape and scale must be positive")

    @property
    def names(self):
        return (self.name,)

    def logpdf(self, values) -> float:
        x = float(values[0])
        if x <= 0:
            return -np.inf
        return (
            (self.shape - 1.0) * np.log(x)
            - x / self.scale
            - scipy.special.gammaln(self.shape)
            - self.shape * np.log(self.scale)
        )


@dataclass(frozen=True)
class PcJointRangeSdPrior:
    """Joint penalised-complexity prior for a range and a standard deviation.

    Density factorizes into an inverse-exponential piece for the range and
    an exponential piece for the sd.  Hyperparameters come from the two
    probability statements P(range < range_bound) = range_prob and
    P(sd > sd_bound) = sd_prob.
    """

    range_name: str
    sd_name: str
    range_bound: float
    range_prob: float
    sd_bound: float
    sd_prob: float

    def __post_init__(self):
        if not (0 < self.range_prob < 1 and 0 < self.sd_prob < 1):
            raise NumericDomainError("probabilities must lie in (0, 1)")
        if self.range_bound <= 0 or self.sd_bound <= 0:
            raise NumericDomainError("bounds must be positive")

    @property
    def names(self):
        return (self.range_name, self.sd_name)

    @property
    def lambda_range(self) -> float:
        return -np.log(self.range_prob) * self.range_bound

    @property
    def lambda_sd(self) -> float:
        return -np.log(self.sd_prob) / self.sd_bound

    def logpdf(self, values) -> float:
        rho, sd = float(values[0]), float(values[1])
        if rho <= 0 or sd <= 0:
            return -np.inf
        lr, ls = self.lambda_range, self.lambda_sd
        return (np.log(lr) - 2.0 * np.log(rho) - lr / rho) + (np.log(ls) - ls * sd)


class LogPosterior:
    """Composite log-likelihood plus log-priors, on both scales.

    ``value_natural`` evaluates at a ParamVector; ``value_unconstrained``
    evaluates at an unconstrained vector and includes the link Jacobian so
    the two describe the same distribution.
    """

    def __init__(self, cl: CompositeLikelihood, priors: Sequence, template: ParamVector):
        self.cl = cl
        self.priors = list(priors)
        self.template = template
        known = set(template.names)
        for pr in self.priors:
            for nm in pr.names:
                if nm not in known:
                    raise NumericDomainError(f"prior refers to unknown parameter '{nm}'")

    def log_prior_natural(self, theta: ParamVector) -> float:
        total = 0.0
        for pr in self.priors:
            vals = np.array([theta[nm] for nm in pr.names])
            total += pr.logpdf(vals)
        return float(total)

    def value_natural(self, theta: ParamVector) -> float:
        return self.cl.value(theta) + self.log_prior_natural(theta)

    def value_unconstrained(self, u) -> float:
        theta = self.template.with_unconstrained(u)
        return self.value_natural(theta) + self.template.link_log_jacobian(u)

    def safe_unconstrained(self, u) -> float:
        """Like value_unconstrained but maps failures to a finite cliff."""
        try:
            val = self.value_unconstrained(u)
        except (SandwichPostError, np.linalg.LinAlgError):
            return -1e15
        if not np.isfinite(val):
            return -1e15
        return val


def log_posterior(cl: CompositeLikelihood, priors: Sequence, theta: ParamVector) -> float:
    """Natural-scale log-posterior density at theta (up to a constant)."""
    return LogPosterior(cl, priors, theta).value_natural(theta)


@dataclass(frozen=True)
class ModeResult:
    theta: ParamVector
    u: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    n_iter: int
    message: str


def find_mode(
    logpost: LogPosterior,
    theta_init: ParamVector,
    grad_tol: float = config.MODE_GRAD_TOL,
    max_iter: int = config.MODE_MAX_ITER,
    max_polish: int = 6,
) -> ModeResult:
    """Quasi-Newton ascent of the posterior on the unconstrained scale.

    L-BFGS-B with numeric central-difference gradients, followed by a few
    Newton polishing steps.  The result carries an explicit convergence
    flag: ``converged`` is True only when the final gradient sup-norm is
    below ``grad_tol``.
    """
    u0 = theta_init.to_unconstrained()

    def neg(u):
        return -logpost.safe_unconstrained(u)

    def neg_grad(u):
        try:
            return -numeric_gradient(logpost.safe_unconstrained, u)
        except SandwichPostError:
            return np.zeros_like(u)

    res = scipy.optimize.minimize(
        neg,
        u0,
        jac=neg_grad,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-14},
    )
    u = np.asarray(res.x, dtype=float)
    n_iter = int(res.nit)

    # Newton polish: cheap for the small parameter counts used here and
    # sharpens the mode well past quasi-Newton's stopping point.  Stops on
    # gradient success, a failed line search, or a negligible improvement.
    for _ in range(max_polish):
        g = numeric_gradient(logpost.safe_unconstrained, u)
        if np.max(np.abs(g)) < 0.1 * grad_tol:
            break
        hess = numeric_hessian(logpost.safe_unconstrained, u)
        w, v = np.linalg.eigh(hess)
        cap = -1e-8 * max(1.0, float(np.max(np.abs(w))))
        w = np.minimum(w, cap)
        step = -(v @ ((v.T @ g) / w))
        f_cur = logpost.safe_unconstrained(u)
        scale = 1.0
        improved = False
        for _ in range(12):
            u_try = u + scale * step
            f_try = logpost.safe_unconstrained(u_try)
            if f_try > f_cur:
                u = u_try
                improved = f_try - f_cur > 1e-12 * max(1.0, abs(f_cur))
                break
            scale *= 0.5
        n_iter += 1
        if not improved:
            break

    g = numeric_gradient(logpost.safe_unconstrained, u)
    grad_norm = float(np.max(np.abs(g)))
    converged = grad_norm < grad_tol
    theta = logpost.template.with_unconstrained(u)
    msg = res.message if isinstance(res.message, str) else str(res.message)
    if not converged:
        msg = f"not converged: gradient sup-norm {grad_norm:.3e} >= {grad_tol:.1e} ({msg})"
    return ModeResult(
        theta=theta,
        u=u,
        value=float(logpost.safe_unconstrained(u)),
        grad_norm=grad_norm,
        converged=converged,
        n_iter=n_iter,
        message=msg,
    )


@dataclass(frozen=True)
class PosteriorDraws:
    """Posterior samples with provenance.

    ``draws`` is on the natural scale, ``draws_unconstrained`` on the link
    scale; both are (n_s, p) with columns ordered as ``names``.
    """

    names: tuple
    links: tuple
    draws: np.ndarray
    draws_unconstrained: np.ndarray
    sampler: str
    seed: int | None
    mode: ParamVector
    flags: tuple = field(default=())

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def param_template(self) -> ParamVector:
        return self.mode

    def skewness(self) -> np.ndarray:
        """Per-parameter skewness of the unconstrained draws.

        The adjustment's coverage guarantee is asymptotic and Gaussian;
        strong skewness flags posteriors where it should be read with
        care.  Diagnostic only, no correction is applied.
        """
        u = self.draws_unconstrained
        centered = u - u.mean(axis=0)
        sd = centered.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        return np.mean(centered**3, axis=0) / sd**3

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.draws_unconstrained).tobytes()).hexdigest()


def _back_transform(u_draws: np.ndarray, template: ParamVector) -> np.ndarray:
    nat = u_draws.copy()
    with np.errstate(over="ignore"):
        for k, lk in enumerate(template.links):
            if lk == "log":
                nat[:, k] = np.exp(u_draws[:, k])
    return nat


def laplace_sample(
    logpost: LogPosterior,
    mode: ModeResult,
    n_s: int,
    rng: np.random.Generator,
    seed: int | None = None,
) -> PosteriorDraws:
    """Gaussian draws from the Laplace approximation at the posterior mode.

    The negative Hessian of the unconstrained log-posterior must be
    positive definite apart from a tiny eigenvalue floor; a genuinely
    indefinite Hessian raises with a recommendation to use the MCMC path.
    """
    if n_s < 1:
        raise NumericDomainError("n_s must be >= 1")
    hess = numeric_hessian(logpost.safe_unconstrained, mode.u)
    neg_hess = -hess
    w = np.linalg.eigvalsh(neg_hess)
    if w[0] < -1e-2 * abs(w[-1]):
        raise NotSpdError(
            "posterior Hessian is indefinite at the mode; the Laplace "
            "approximation does not apply -- use mcmc_sample instead"
        )
    prec, _ = floor_eigenvalues(neg_hess)
    cov_u = prec.inv()
    u_draws = mvn_sample(mode.u, cov_u, n_s, rng)
    template = logpost.template
    natural = _back_transform(u_draws, template)
    if not np.all(np.isfinite(natural)):
        raise NumericDomainError(
            "posterior draws overflow the natural scale; the mode appears "
            "to sit at an extreme parameter value"
        )
    return PosteriorDraws(
        names=template.names,
        links=template.links,
        draws=natural,
        draws_unconstrained=u_draws,
        sampler="laplace",
        seed=seed,
        mode=mode.theta,
    )


def mcmc_sample(
    logpost: LogPosterior,
    theta_init: ParamVector,
    n_s: int,
    rng: np.random.Generator,
    tuning: dict | None = None,
    seed: int | None = None,
) -> PosteriorDraws:
    """Adaptive random-walk Metropolis on the unconstrained scale.

    The proposal scale adapts toward a 0.234 acceptance rate during
    burn-in, with the proposal covariance taken from the accumulated chain;
    adaptation freezes after burn-in so the retained chain satisfies
    detailed balance.  A post-adaptation acceptance rate below
    ``config.MCMC_MIN_ACCEPT`` sets a 'tuning-failure' flag.
    """
    if n_s < 1:
        raise NumericDomainError("n_s must be >= 1")
    tuning = dict(tuning or {})
    burn_in = int(tuning.get("burn_in", max(1000, n_s // 2)))
    adapt_interval = int(tuning.get("adapt_interval", 50))
    p = theta_init.dim
    u = theta_init.to_unconstrained()
    log_scale = np.log(tuning.get("init_scale", 2.38 / np.sqrt(p)))
    cov = np.eye(p)
    chol = np.linalg.cholesky(cov)

    f_cur = logpost.safe_unconstrained(u)
    best_u, best_f = u.copy(), f_cur
    history = np.empty((burn_in + n_s, p))
    n_accept_adapted = 0
    accept_window = 0
    adapt_count = 0

    for it in range(burn_in + n_s):
        prop = u + np.exp(log_scale) * (chol @ rng.standard_normal(p))
        f_prop = logpost.safe_unconstrained(prop)
        if np.log(rng.uniform()) < f_prop - f_cur:
            u = prop
            f_cur = f_prop
            if f_cur > best_f:
                best_u, best_f = u.copy(), f_cur
            accept_window += 1
            if it >= burn_in:
                n_accept_adapted += 1
        history[it] = u
        in_burn = it < burn_in
        if in_burn and (it + 1) % adapt_interval == 0:
            adapt_count += 1
            rate = accept_window / adapt_interval
            log_scale += (rate - config.MCMC_TARGET_ACCEPT) / np.sqrt(adapt_count)
            accept_window = 0
            if it + 1 >= 10 * p:
                emp = np.cov(history[: it + 1].T)
                emp = np.atleast_2d(emp) + 1e-10 * np.eye(p)
                try:
                    chol = np.linalg.cholesky(emp)
                except np.linalg.LinAlgError:
                    pass

    u_draws = history[burn_in:]
    rate_adapted = n_accept_adapted / n_s
    flags = ()
    if rate_adapted < config.MCMC_MIN_ACCEPT:
        flags = ("tuning-failure",)
        warnings.warn(
            f"mcmc_sample: post-adaptation acceptance rate {rate_adapted:.4f} "
            "below minimum; treat draws with suspicion",
            RuntimeWarning,
        )
    template = theta_init
    mode_guess = template.with_unconstrained(best_u)
    return PosteriorDraws(
        names=template.names,
        links=template.links,
        draws=_back_transform(u_draws, template),
        draws_unconstrained=u_draws,
        sampler="mcmc",
        seed=seed,
        mode=mode_guess,
        flags=flags,
    )


@dataclass(frozen=True)
class CredibleInterval:
    """Equal-tailed credible intervals per parameter."""

    level: float
    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (self.lower <= values) & (values <= self.upper)


def credible_interval(draws: PosteriorDraws | np.ndarray, level: float) -> CredibleInterval:
    """Equal-tailed empirical quantile interval at the given level."""
    if not (0.0 < level < 1.0):
        raise NumericDomainError("level must lie in (0, 1)")
    if isinstance(draws, PosteriorDraws):
        mat = draws.draws
        names = draws.names
    else:
        mat = np.atleast_2d(np.asarray(draws, dtype=float))
        names = tuple(f"p{k}" for k in range(mat.shape[1]))
    alpha = 1.0 - level
    lower = np.quantile(mat, alpha / 2.0, axis=0)
    upper = np.quantile(mat, 1.0 - alpha / 2.0, axis=0)
    return CredibleInterval(level=level, names=names, lower=lower, upper=upper)


def log_score(loglik_fn: Callable[[ParamVector], float], draws: PosteriorDraws) -> float:
    """Monte Carlo log marginal likelihood over posterior draws.

    Computes log( (1/n_s) sum_i L(theta_i) ) via log-sum-exp.  Returns -inf
    (with a warning) when every draw has zero likelihood.
    """
    template = draws.mode
    vals = np.array(
        [loglik_fn(template.with_values(row)) for row in draws.draws], dtype=float
    )
    if np.all(np.isneginf(vals)):
        warnings.warn("log_score: all draws scored -inf", RuntimeWarning)
        return -np.inf
    return float(scipy.special.logsumexp(vals) - np.log(len(vals)))
