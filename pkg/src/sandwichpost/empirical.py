"""Empirical marginal transforms and pairwise dependence diagnostics.

Data-side procedures: the probability integral transform to standard
Laplace margins with spatially pooled empirical distribution functions,
and the pairwise conditional fits used to choose parametric shapes for the
mean and scale profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import config
from .exceptions import NumericDomainError

__all__ = [
    "to_laplace_margins",
    "laplace_pit",
    "gaussian_to_laplace",
    "PairwiseFit",
    "fit_pairwise",
    "pairwise_residuals",
]

PAIRWISE_VARIANTS = ("alpha", "alpha-beta", "alpha-gamma", "free")


def to_laplace_margins(cdf_values) -> np.ndarray:
    """Map CDF values in (0, 1) to the standard Laplace scale.

    Two branches: log(2 F) below the median, -log(2 (1 - F)) at or above
    it, so F = 1/2 maps to exactly 0.
    """
    f = np.asarray(cdf_values, dtype=float)
    if np.any(f <= 0.0) or np.any(f >= 1.0):
        raise NumericDomainError("CDF values must lie strictly inside (0, 1)")
    return np.where(f < 0.5, np.log(2.0 * f), -np.log(2.0 * (1.0 - f)))


def gaussian_to_laplace(x) -> np.ndarray:
    """Transform standard Gaussian data to standard Laplace margins."""
    from scipy.stats import norm

    return to_laplace_margins(norm.cdf(np.asarray(x, dtype=float)))


def laplace_pit(
    panel,
    coords,
    radius: float,
    min_obs: int = config.PIT_MIN_POOLED_OBS,
) -> np.ndarray:
    """Empirical probability integral transform to Laplace margins.

    The distribution function at each site is the empirical CDF of data
    pooled from every site within ``radius`` of it (plug-in rank / (n + 1),
    so the output is always finite).  Point masses (e.g. exact zeros in
    precipitation) should be removed upstream; the transform assumes
    continuous data.  Monotone within each site by construction.
    """
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    coords = np.asarray(coords, dtype=float)
    n_times, n_sites = panel.shape
    if coords.shape != (n_sites, 2):
        raise NumericDomainError("coords must be (n_sites, 2) matching the panel")
    if radius < 0:
        raise NumericDomainError("radius must be >= 0")
    out = np.empty_like(panel)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    for k in range(n_sites):
        pool_sites = np.nonzero(dist[k] <= radius)[0]
        pool = np.sort(panel[:, pool_sites].ravel())
        n_pool = pool.size
        if n_pool < min_obs:
            raise NumericDomainError(
                f"site {k}: only {n_pool} pooled observations, need at least {min_obs}"
            )
        ranks = np.searchsorted(pool, panel[:, k], side="right")
        out[:, k] = to_laplace_margins(ranks / (n_pool + 1.0))
    return out


@dataclass(frozen=True)
class PairwiseFit:
    """One pairwise conditional fit keyed by the pair's distance."""

    s0: int
    s1: int
    distance: float
    alpha: float
    gamma: float
    zeta: float
    beta: float
    n_exceed: int
    converged: bool


def _pairwise_negloglik(y0, y1, alpha, gamma, zeta, beta):
    sd = zeta * y0**beta
    z = (y1 - alpha * y0 - gamma) / sd
    return float(np.sum(np.log(sd) + 0.5 * z * z))


def _fit_one_pair(y0, y1, variant):
    corr0 = float(np.clip(np.corrcoef(y0, y1)[0, 1], -0.9, 0.9)) if len(y0) > 2 else 0.5
    resid0 = y1 - corr0 * y0
    zeta0 = float(np.clip(np.std(resid0), 1e-3, 50.0))

    free = {
        "alpha": ("alpha", "zeta"),
        "alpha-beta": ("alpha", "zeta", "beta"),
        "alpha-gamma": ("alpha", "zeta", "gamma"),
        "free": ("alpha", "zeta", "gamma", "beta"),
    }[variant]
    start = {"alpha": corr0, "zeta": zeta0, "gamma": 0.0, "beta": 0.0}
    bounds = {"alpha": (-1.0, 1.0), "zeta": (1e-4, 100.0), "gamma": (-10.0, 10.0), "beta": (-1.0, 1.0)}

    def unpack(x):
        full = {"alpha": 0.0, "zeta": 1.0, "gamma": 0.0, "beta": 0.0}
        for nm, v in zip(free, x):
            full[nm] = float(v)
        return full

    def nll(x):
        full = unpack(x)
        return _pairwise_negloglik(y0, y1, full["alpha"], full["gamma"], full["zeta"], full["beta"])

    res = scipy.optimize.minimize(
        nll,
        np.array([start[nm] for nm in free]),
        method="L-BFGS-B",
        bounds=[bounds[nm] for nm in free],
    )
    full = unpack(res.x)
    return full, bool(res.success)


def fit_pairwise(
    panel,
    coords,
    threshold: float,
    n_pairs: int,
    variant: str,
    rng: np.random.Generator,
    min_exceed: int = 5,
) -> list:
    """Fit the pairwise conditional model to random site pairs.

    For each pair (s0, s1) the model y1 = alpha y0 + gamma + zeta y0^beta Z
    is fitted by constrained maximum likelihood to the times where y0
    exceeds the threshold; ``variant`` fixes subsets of (gamma, beta) at
    zero.  Pairs with the same site twice or too few exceedances are
    skipped; non-converged fits are flagged, not dropped silently.
    """
    if variant not in PAIRWISE_VARIANTS:
        raise NumericDomainError(f"variant must be one of {PAIRWISE_VARIANTS}")
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    coords = np.asarray(coords, dtype=float)
    n_sites = panel.shape[1]
    if n_sites < 2:
        raise NumericDomainError("need at least two sites")
    fits = []
    attempts = 0
    while len(fits) < n_pairs and attempts < 50 * n_pairs:
        attempts += 1
        s0, s1 = rng.integers(0, n_sites, size=2)
        if s0 == s1:
            continue
        exc = panel[:, s0] > threshold
        if int(exc.sum()) < min_exceed:
            continue
        y0 = panel[exc, s0]
        y1 = panel[exc, s1]
        full, ok = _fit_one_pair(y0, y1, variant)
        fits.append(
            PairwiseFit(
                s0=int(s0),
                s1=int(s1),
                distance=float(np.linalg.norm(coords[s0] - coords[s1])),
                alpha=full["alpha"],
                gamma=full["gamma"],
                zeta=full["zeta"],
                beta=full["beta"],
                n_exceed=int(exc.sum()),
                converged=ok,
            )
        )
    return fits


def pairwise_residuals(panel, threshold: float, pairs, alpha_fn, zeta_fn, coords) -> np.ndarray:
    """Standardized residuals (y1 - alpha(d) y0) / zeta(d) over exceedances.

    Under a well-specified mean/scale profile these have mean near zero and
    variance near one, which is the second-stage diagnostic for fixing the
    remaining profile shapes at zero.
    """
    panel = np.atleast_2d(np.asarray(panel, dtype=float))
    coords = np.asarray(coords, dtype=float)
    out = []
    for s0, s1 in pairs:
        if s0 == s1:
            raise NumericDomainError("degenerate pair: conditioning site equals target site")
        exc = panel[:, s0] > threshold
        if not np.any(exc):
            continue
        d = float(np.linalg.norm(coords[s0] - coords[s1]))
        out.append((panel[exc, s1] - alpha_fn(d) * panel[exc, s0]) / zeta_fn(d))
    if not out:
        raise NumericDomainError("no exceedances in any supplied pair")
    return np.concatenate(out)
