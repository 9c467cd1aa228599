"""Spatial conditional extremes model on Laplace margins.

Given an exceedance y0 above threshold t at a conditioning site s0, the
field at the remaining sites is Gaussian with mean y0 * exp(-(d/lambda)^kappa),
covariance b(d_i) b(d_j) * matern_corr(d_ij) + (1/tau) I, and
b(d) = sigma_b * sqrt(1 - exp(-2 d / rho_b)).  Because b(0) = 0, the
residual field needs no explicit constraint at the conditioning site, and
the conditioning site itself is excluded from the likelihood (its residual
and nugget vanish almost surely).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import EmptyCompositeError, NotSpdError, NumericDomainError
from .fields import SiteSet, matern_corr
from .likelihoods import (
    CompositeLikelihood,
    CompositeTerm,
    NeighborStructure,
    ParamVector,
    mvn_logpdf_chol,
)

__all__ = [
    "CondExtremesParams",
    "CondExtremesModel",
    "mean_profile",
    "scale_profile",
    "condex_loglik",
    "condex_composite",
    "simulate_single_site",
    "laplace_threshold",
]

PARAM_NAMES = ("lambda", "kappa", "sigma_b", "rho_b", "rho_z", "tau")


def laplace_threshold(prob: float) -> float:
    """Upper quantile of the standard Laplace distribution."""
    if not 0.5 <= prob < 1.0:
        raise NumericDomainError("threshold probability must lie in [0.5, 1)")
    return -np.log(2.0 * (1.0 - prob))


@dataclass(frozen=True)
class CondExtremesParams:
    """Parameters of the conditional extremes model.

    lambda_a, kappa_a shape the conditional-mean decay; sigma_b, rho_b the
    residual scale profile; rho_z is the residual Matern range (variance
    fixed at 1, smoothness nu_z fixed); tau the nugget precision.
    """

    lambda_a: float
    kappa_a: float
    sigma_b: float
    rho_b: float
    rho_z: float
    tau: float
    nu_z: float = 1.5

    def __post_init__(self):
        vals = (self.lambda_a, self.kappa_a, self.sigma_b, self.rho_b, self.rho_z, self.tau)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise NumericDomainError("all conditional extremes parameters must be positive")

    def values(self) -> np.ndarray:
        return np.array(
            [self.lambda_a, self.kappa_a, self.sigma_b, self.rho_b, self.rho_z, self.tau]
        )

    @classmethod
    def from_values(cls, values, nu_z: float = 1.5) -> "CondExtremesParams":
        values = np.asarray(values, dtype=float)
        return cls(*values.tolist(), nu_z=nu_z)

    def replace_named(self, names: Sequence[str], values) -> "CondExtremesParams":
        base = dict(zip(PARAM_NAMES, self.values()))
        for nm, v in zip(names, np.asarray(values, dtype=float)):
            base[nm] = float(v)
        return CondExtremesParams(*[base[nm] for nm in PARAM_NAMES], nu_z=self.nu_z)


def mean_profile(d, y0, params: CondExtremesParams) -> np.ndarray:
    """Conditional mean y0 * exp(-(d/lambda)^kappa); equals y0 at d = 0."""
    d = np.asarray(d, dtype=float)
    return y0 * np.exp(-((d / params.lambda_a) ** params.kappa_a))


def scale_profile(d, params: CondExtremesParams) -> np.ndarray:
    """Residual scale sigma_b * sqrt(1 - exp(-2 d / rho_b)); zero at d = 0."""
    d = np.asarray(d, dtype=float)
    return params.sigma_b * np.sqrt(1.0 - np.exp(-2.0 * d / params.rho_b))


@dataclass(frozen=True)
class CondExtremesModel:
    """Model = parameters + geometry + threshold + conditioning sites.

    ``cond_site_indices`` are the sites used as conditioning sites when
    building the composite likelihood; ``selection_radius`` (km) restricts
    each conditioning site's likelihood to nearby sites, which is how the
    desk-scale fits stay fast.  ``free_names`` lists the parameters exposed
    to inference (the rest stay fixed, e.g. the fixed-rho_b variant).
    """

    params: CondExtremesParams
    sites: SiteSet
    threshold: float
    cond_site_indices: tuple = None
    selection_radius: float | None = None
    free_names: tuple = PARAM_NAMES

    def __post_init__(self):
        if self.cond_site_indices is None:
            object.__setattr__(self, "cond_site_indices", tuple(range(len(self.sites))))
        else:
            idx = tuple(int(i) for i in self.cond_site_indices)
            if any(i < 0 or i >= len(self.sites) for i in idx):
                raise NumericDomainError("conditioning site index out of range")
            object.__setattr__(self, "cond_site_indices", idx)
        if not np.isfinite(self.threshold):
            raise NumericDomainError("threshold must be finite")
        bad = set(self.free_names) - set(PARAM_NAMES)
        if bad:
            raise NumericDomainError(f"unknown parameter names {sorted(bad)}")

    def param_vector(self, params: CondExtremesParams | None = None) -> ParamVector:
        """ParamVector over the free parameters (log links throughout)."""
        p = params if params is not None else self.params
        full = dict(zip(PARAM_NAMES, p.values()))
        vals = [full[nm] for nm in self.free_names]
        return ParamVector(self.free_names, vals, links=("log",) * len(self.free_names))

    def params_from_theta(self, theta: ParamVector) -> CondExtremesParams:
        return self.params.replace_named(theta.names, theta.values)

    def used_sites(self, s0_index: int) -> np.ndarray:
        """Indices entering the likelihood for a given conditioning site."""
        d = self.sites.distances[s0_index]
        keep = np.ones(len(self.sites), dtype=bool)
        keep[s0_index] = False
        if self.selection_radius is not None:
            keep &= d <= self.selection_radius
        return np.nonzero(keep)[0]


def _conditional_chol(model, params, used, s0_index):
    d0 = model.sites.distances[s0_index][used]
    with np.errstate(over="ignore", invalid="ignore"):
        b = scale_profile(d0, params)
        r = matern_corr(model.sites.distances[np.ix_(used, used)], params.rho_z, params.nu_z)
        cov = np.outer(b, b) * r + (1.0 / params.tau) * np.eye(len(used))
    if not np.all(np.isfinite(cov)):
        raise NotSpdError("conditional covariance overflowed for extreme parameters")
    try:
        return np.linalg.cholesky(cov), d0
    except np.linalg.LinAlgError as exc:
        raise NotSpdError("conditional covariance is not positive definite") from exc


def condex_loglik(
    model: CondExtremesModel,
    y,
    s0_index: int,
    y0: float,
    params: CondExtremesParams | None = None,
) -> float:
    """Log-density of one field observation given an exceedance at s0.

    ``y`` holds the values at all sites; the conditioning site's entry is
    excluded from the density (its residual and nugget are almost surely
    zero).  Requires y0 > threshold.
    """
    params = params if params is not None else model.params
    y = np.asarray(y, dtype=float)
    if y0 <= model.threshold:
        raise NumericDomainError("y0 must exceed the threshold")
    used = model.used_sites(s0_index)
    chol, d0 = _conditional_chol(model, params, used, s0_index)
    resid = y[used] - mean_profile(d0, y0, params)
    return float(mvn_logpdf_chol(resid, chol)[0])


def condex_composite(model: CondExtremesModel, panel) -> CompositeLikelihood:
    """Composite likelihood over conditioning sites and exceedance times.

    One unit-weight term per (conditioning site, time) pair whose value at
    that site exceeds the threshold; pairs below the threshold carry weight
    zero and are omitted.  Term ids are conditioning-site indices, time ids
    index panel rows.
    """
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    if panel.shape[1] != len(model.sites):
        raise NumericDomainError("panel columns must match the model's sites")
    t = model.threshold

    groups = []  # (s0_index, used, d0_used, times)
    for s0 in model.cond_site_indices:
        times = np.nonzero(panel[:, s0] > t)[0]
        if len(times) == 0:
            continue
        used = model.used_sites(s0)
        groups.append((s0, used, panel[np.ix_(times, used)], panel[times, s0], times))
    if not groups:
        raise EmptyCompositeError("no threshold exceedances at any conditioning site")

    def batch(theta: ParamVector) -> np.ndarray:
        params = model.params_from_theta(theta)
        out = []
        for s0, used, y_used, y0s, _times in groups:
            chol, d0 = _conditional_chol(model, params, used, s0)
            alpha = np.exp(-((d0 / params.lambda_a) ** params.kappa_a))
            resid = y_used - y0s[:, None] * alpha[None, :]
            out.append(mvn_logpdf_chol(resid, chol))
        return np.concatenate(out)

    def make_eval(s0, j, y_row, y0):
        def ev(theta: ParamVector) -> float:
            params = model.params_from_theta(theta)
            return condex_loglik(model, y_row, s0, y0, params=params)

        return ev

    terms = []
    for s0, used, y_used, y0s, times in groups:
        for k, j in enumerate(times):
            terms.append(
                CompositeTerm(
                    term_id=int(s0),
                    time_id=int(j),
                    weight=1.0,
                    evaluator=make_eval(s0, int(j), panel[j], float(y0s[k])),
                )
            )
    return CompositeLikelihood(terms, NeighborStructure(0), batch_eval=batch)


class _FieldSimulator:
    """Cached machinery for simulating the conditional model at all sites."""

    def __init__(self, model: CondExtremesModel):
        self.model = model
        p = model.params
        r = matern_corr(model.sites.distances, p.rho_z, p.nu_z)
        n = len(model.sites)
        try:
            self.chol_z = np.linalg.cholesky(r + 1e-12 * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NotSpdError("residual correlation matrix is not positive definite") from exc
        self.n_sites = n

    def conditional(self, s0_index: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws of the full field given an exceedance at s0_index."""
        model = self.model
        p = model.params
        t = model.threshold
        d0 = model.sites.distances[s0_index]
        alpha = np.exp(-((d0 / p.lambda_a) ** p.kappa_a))
        b = scale_profile(d0, p)
        y0 = t + rng.exponential(size=n)
        z = rng.standard_normal((n, self.n_sites)) @ self.chol_z.T
        eps = rng.standard_normal((n, self.n_sites)) / np.sqrt(p.tau)
        eps[:, s0_index] = 0.0
        out = y0[:, None] * alpha[None, :] + b[None, :] * z + eps
        out[:, s0_index] = y0
        return out


def simulate_single_site(
    model: CondExtremesModel,
    s0_index: int,
    n_reps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replicates of the field given an exceedance at one conditioning site.

    The exceedance itself is drawn from the Laplace tail above the
    threshold (a unit exponential shifted by t), and the value at the
    conditioning site equals it exactly.
    """
    if n_reps < 1:
        raise NumericDomainError("n_reps must be >= 1")
    return _FieldSimulator(model).conditional(s0_index, n_reps, rng)
