"""Composite log-likelihoods, numeric differentiation, concrete models.

A composite likelihood is a weighted sum of per-term log-likelihood
contributions, each tagged with a term id and a time index.  The time index
drives the sliding-window score-covariance estimator; weights of zero drop
a term without evaluating it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import config
from .exceptions import EmptyCompositeError, EvaluationError, NumericDomainError
from .fields import GridGmrfSpec, MaternParams, SiteSet, grid_gmrf_precision, grid_interp_matrix, matern_cov

__all__ = [
    "ParamVector",
    "CompositeTerm",
    "NeighborStructure",
    "CompositeLikelihood",
    "eval_composite",
    "numeric_gradient",
    "numeric_hessian",
    "gaussian_fixed_var_loglik",
    "student_t_sample",
    "block_composite_gaussian",
    "lowrank_grid_loglik",
    "mvn_logpdf_chol",
]

_LINKS = ("identity", "log")


@dataclass(frozen=True)
class ParamVector:
    """An ordered, named parameter vector with per-parameter links.

    ``links`` maps each parameter to the unconstrained scale used by
    optimizers and samplers: 'identity' leaves it alone, 'log' maps a
    positive parameter to its logarithm.
    """

    names: tuple
    values: np.ndarray
    links: tuple

    def __init__(self, names: Sequence[str], values, links: Sequence[str] | None = None):
        names = tuple(names)
        values = np.atleast_1d(np.asarray(values, dtype=float)).copy()
        if links is None:
            links = ("identity",) * len(names)
        links = tuple(links)
        if len(names) != len(values) or len(links) != len(values):
            raise NumericDomainError("names, values and links must have equal length")
        for lk in links:
            if lk not in _LINKS:
                raise NumericDomainError(f"unknown link '{lk}'")
        if not np.all(np.isfinite(values)):
            raise NumericDomainError("parameter values must be finite")
        for name, val, lk in zip(names, values, links):
            if lk == "log" and val <= 0.0:
                raise NumericDomainError(f"parameter '{name}' must be positive for a log link")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "links", links)

    @property
    def dim(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    def to_unconstrained(self) -> np.ndarray:
        u = self.values.copy()
        for k, lk in enumerate(self.links):
            if lk == "log":
                u[k] = np.log(u[k])
        return u

    def with_values(self, values) -> "ParamVector":
        return ParamVector(self.names, values, self.links)

    def with_unconstrained(self, u) -> "ParamVector":
        u = np.asarray(u, dtype=float)
        v = u.copy()
        with np.errstate(over="ignore"):
            for k, lk in enumerate(self.links):
                if lk == "log":
                    v[k] = np.exp(u[k])
        return ParamVector(self.names, v, self.links)

    def link_log_jacobian(self, u) -> float:
        """log |d theta / d u| of the back-transform at unconstrained u."""
        u = np.asarray(u, dtype=float)
        total = 0.0
        for k, lk in enumerate(self.links):
            if lk == "log":
                total += u[k]
        return float(total)


@dataclass(frozen=True)
class CompositeTerm:
    """One weighted log-likelihood contribution.

    ``evaluator`` maps a ParamVector to this term's log-likelihood value.
    """

    term_id: int
    time_id: int
    weight: float
    evaluator: Callable[[ParamVector], float]

    def __post_init__(self):
        if self.weight < 0:
            raise NumericDomainError("term weights must be nonnegative")


@dataclass(frozen=True)
class NeighborStructure:
    """Terms at times j, j' are neighbors iff |j - j'| <= window."""

    window: int = config.DEFAULT_WINDOW_RADIUS

    def __post_init__(self):
        if self.window < 0:
            raise NumericDomainError("window radius must be >= 0")


class CompositeLikelihood:
    """A collection of weighted log-likelihood terms with a time structure.

    ``batch_eval``, when provided, returns the vector of all per-term
    (unweighted) values at once and is used in place of the per-term
    evaluators; factories supply it for grouped Cholesky work.
    """

    def __init__(
        self,
        terms: Sequence[CompositeTerm],
        neighbors: NeighborStructure | None = None,
        batch_eval: Callable[[ParamVector], np.ndarray] | None = None,
    ):
        terms = list(terms)
        if not terms:
            raise EmptyCompositeError("a composite likelihood needs at least one term")
        self.terms = terms
        self.neighbors = neighbors if neighbors is not None else NeighborStructure()
        self._batch_eval = batch_eval
        self.weights = np.array([t.weight for t in terms], dtype=float)
        self.time_ids = np.array([t.time_id for t in terms], dtype=int)
        self.term_ids = np.array([t.term_id for t in terms], dtype=int)

    def __len__(self):
        return len(self.terms)

    def term_values(self, theta: ParamVector) -> np.ndarray:
        """Unweighted per-term log-likelihood values at theta."""
        if self._batch_eval is not None:
            vals = np.asarray(self._batch_eval(theta), dtype=float)
            if vals.shape != (len(self.terms),):
                raise EvaluationError(
                    f"batch evaluator returned shape {vals.shape}, expected ({len(self.terms)},)"
                )
        else:
            vals = np.array([t.evaluator(theta) for t in self.terms], dtype=float)
        return vals

    def value(self, theta: ParamVector) -> float:
        vals = self.term_values(theta)
        active = self.weights > 0
        bad = active & ~np.isfinite(vals)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise EvaluationError(
                f"term (id={self.terms[k].term_id}, time={self.terms[k].time_id}) "
                f"evaluated to {vals[k]}",
                term_id=self.terms[k].term_id,
                time_id=self.terms[k].time_id,
            )
        return float(np.dot(self.weights[active], vals[active]))

    def reweighted(self, weights) -> "CompositeLikelihood":
        weights = np.asarray(weights, dtype=float)
        if weights.shape != self.weights.shape:
            raise NumericDomainError("weight vector has wrong length")
        terms = [replace(t, weight=float(w)) for t, w in zip(self.terms, weights)]
        return CompositeLikelihood(terms, self.neighbors, self._batch_eval)


def eval_composite(cl: CompositeLikelihood, theta: ParamVector) -> float:
    """Weighted sum of all term log-likelihoods at theta."""
    return cl.value(theta)


def _steps(x: np.ndarray, base: float) -> np.ndarray:
    return base * np.maximum(1.0, np.abs(x))


def numeric_gradient(f, x, h=None) -> np.ndarray:
    """Central-difference gradient of f at x.

    Works for scalar- or vector-valued f; for vector-valued f of output
    shape (m,), returns an (m, p) array of per-output gradients.  Default
    step is cbrt(machine eps) * max(1, |x_k|) per component.
    """
    x = np.asarray(x, dtype=float)
    hs = _steps(x, config.GRAD_STEP) if h is None else np.broadcast_to(np.asarray(h, float), x.shape)
    cols = []
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += hs[k]
        xm[k] -= hs[k]
        fp = np.asarray(f(xp), dtype=float)
        fm = np.asarray(f(xm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"non-finite value in gradient stencil at component {k}")
        cols.append((fp - fm) / (2.0 * hs[k]))
    return np.stack(cols, axis=-1)


def numeric_hessian(f, x, h=None) -> np.ndarray:
    """Second-order central-difference Hessian of scalar f, symmetrized."""
    x = np.asarray(x, dtype=float)
    p = x.size
    hs = _steps(x, config.HESS_STEP) if h is None else np.broadcast_to(np.asarray(h, float), x.shape)

    def ev(z):
        val = float(f(z))
        if not np.isfinite(val):
            raise EvaluationError("non-finite value in Hessian stencil")
        return val

    f0 = ev(x)
    hess = np.empty((p, p))
    for i in range(p):
        xp = x.copy()
        xm = x.copy()
        xp[i] += hs[i]
        xm[i] -= hs[i]
        hess[i, i] = (ev(xp) - 2.0 * f0 + ev(xm)) / hs[i] ** 2
    for i in range(p):
        for j in range(i + 1, p):
            xpp = x.copy(); xpm = x.copy(); xmp = x.copy(); xmm = x.copy()
            xpp[i] += hs[i]; xpp[j] += hs[j]
            xpm[i] += hs[i]; xpm[j] -= hs[j]
            xmp[i] -= hs[i]; xmp[j] += hs[j]
            xmm[i] -= hs[i]; xmm[j] -= hs[j]
            val = (ev(xpp) - ev(xpm) - ev(xmp) + ev(xmm)) / (4.0 * hs[i] * hs[j])
            hess[i, j] = val
            hess[j, i] = val
    return 0.5 * (hess + hess.T)


_LOG_2PI = float(np.log(2.0 * np.pi))


def mvn_logpdf_chol(resid: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Gaussian log-density of residual rows given a lower Cholesky factor.

    ``resid`` is (n, d) or (d,); returns per-row values.
    """
    resid = np.atleast_2d(np.asarray(resid, dtype=float))
    d = chol.shape[0]
    w = scipy.linalg.solve_triangular(chol, resid.T, lower=True, check_finite=False)
    quad = np.sum(w * w, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG_2PI + logdet + quad)


def gaussian_fixed_var_loglik(y) -> CompositeLikelihood:
    """Unit-variance Gaussian location model: one term per observation.

    The single parameter is named 'mu' with an identity link.  Each term's
    evaluator is the N(mu, 1) log-density of its observation.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y)):
        raise NumericDomainError("observations must be finite")

    def batch(theta: ParamVector) -> np.ndarray:
        mu = theta["mu"]
        return -0.5 * (_LOG_2PI + (y - mu) ** 2)

    def make_eval(yk):
        return lambda theta: -0.5 * (_LOG_2PI + (yk - theta["mu"]) ** 2)

    terms = [
        CompositeTerm(term_id=0, time_id=j, weight=1.0, evaluator=make_eval(float(yj)))
        for j, yj in enumerate(y)
    ]
    return CompositeLikelihood(terms, NeighborStructure(0), batch_eval=batch)


def student_t_sample(df: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """iid Student-t draws; deterministic under a seeded rng."""
    if df <= 0:
        raise NumericDomainError("degrees of freedom must be positive")
    return rng.standard_t(df, size=n)


def block_composite_gaussian(
    sites: SiteSet,
    data,
    blocks: Sequence[Sequence[int]],
    nu: float = 1.5,
) -> CompositeLikelihood:
    """Block composite likelihood for a Matern field with a nugget.

    ``blocks`` is a partition of site indices; each (block, replicate) pair
    becomes one unit-weight term whose evaluator is the dense Gaussian
    log-density of that block's sites with covariance
    matern + (1/tau) I.  Parameters are ('tau', 'rho', 'sigma'), all with
    log links; ``nu`` stays fixed.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_reps, n_sites = data.shape
    if n_sites != len(sites):
        raise NumericDomainError("data columns must match the number of sites")
    blocks = [np.asarray(b, dtype=int) for b in blocks]
    flat = np.concatenate(blocks) if blocks else np.array([], dtype=int)
    if len(flat) != n_sites or len(np.unique(flat)) != n_sites:
        raise NumericDomainError("blocks must partition the site indices")
    dists = [sites.distances[np.ix_(b, b)] for b in blocks]
    block_data = [data[:, b] for b in blocks]

    def batch(theta: ParamVector) -> np.ndarray:
        tau = theta["tau"]
        rho = theta["rho"]
        sigma = theta["sigma"]
        p = MaternParams(sigma2=sigma**2, rho=rho, nu=nu)
        out = np.empty((len(blocks), n_reps))
        for bi, (dmat, ydat) in enumerate(zip(dists, block_data)):
            with np.errstate(over="ignore", invalid="ignore"):
                cov = matern_cov(dmat, p) + (1.0 / tau) * np.eye(dmat.shape[0])
            if not np.all(np.isfinite(cov)):
                out[bi, :] = np.nan
                continue
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                out[bi, :] = np.nan
                continue
            out[bi, :] = mvn_logpdf_chol(ydat, chol)
        # term order: block-major, replicate-minor
        return out.reshape(-1)

    def make_eval(bi, j):
        def ev(theta: ParamVector) -> float:
            tau = theta["tau"]
            p = MaternParams(sigma2=theta["sigma"] ** 2, rho=theta["rho"], nu=nu)
            cov = matern_cov(dists[bi], p) + (1.0 / tau) * np.eye(dists[bi].shape[0])
            chol = np.linalg.cholesky(cov)
            return float(mvn_logpdf_chol(block_data[bi][j], chol)[0])

        return ev

    terms = [
        CompositeTerm(term_id=bi, time_id=j, weight=1.0, evaluator=make_eval(bi, j))
        for bi in range(len(blocks))
        for j in range(n_reps)
    ]
    return CompositeLikelihood(terms, NeighborStructure(0), batch_eval=batch)


def lowrank_grid_loglik(sites: SiteSet, data, spec: GridGmrfSpec) -> CompositeLikelihood:
    """Low-rank lattice-GMRF likelihood for replicated field observations.

    The fitted covariance is A Q(rho, sigma)^-1 A' + (1/tau) I with A the
    bilinear interpolation matrix from lattice nodes to sites; when the
    lattice is coarser than the data's variability this family is
    deliberately misspecified.  One unit-weight term per replicate;
    parameters ('tau', 'rho', 'sigma') with log links.  Determinants and
    quadratic forms use the matrix-inversion identity on the node scale, so
    cost scales with the node count, not the site count.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_reps, n_sites = data.shape
    if n_sites != len(sites):
        raise NumericDomainError("data columns must match the number of sites")
    a_mat = grid_interp_matrix(spec, sites)
    ata = a_mat.T @ a_mat
    at_y = a_mat.T @ data.T  # (n_nodes, n_reps)
    y_sq = np.sum(data * data, axis=1)

    def per_replicate(theta: ParamVector) -> np.ndarray:
        tau = theta["tau"]
        with np.errstate(over="ignore", invalid="ignore"):
            q_mat = grid_gmrf_precision(spec, rho=theta["rho"], sigma2=theta["sigma"] ** 2)
            m_mat = q_mat + tau * ata
        if not (np.all(np.isfinite(q_mat)) and np.all(np.isfinite(m_mat))):
            return np.full(n_reps, np.nan)
        try:
            chol_q = np.linalg.cholesky(q_mat)
            chol_m = np.linalg.cholesky(m_mat)
        except np.linalg.LinAlgError:
            return np.full(n_reps, np.nan)
        logdet_sigma = (
            2.0 * np.sum(np.log(np.diag(chol_m)))
            - 2.0 * np.sum(np.log(np.diag(chol_q)))
            - n_sites * np.log(tau)
        )
        w = scipy.linalg.solve_triangular(chol_m, at_y, lower=True)
        quad = tau * y_sq - tau**2 * np.sum(w * w, axis=0)
        return -0.5 * (n_sites * _LOG_2PI + logdet_sigma + quad)

    def make_eval(j):
        return lambda theta: float(per_replicate(theta)[j])

    terms = [
        CompositeTerm(term_id=0, time_id=j, weight=1.0, evaluator=make_eval(j))
        for j in range(n_reps)
    ]
    return CompositeLikelihood(terms, NeighborStructure(0), batch_eval=per_replicate)
