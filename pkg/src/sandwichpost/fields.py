"""Gaussian Matern random fields on scattered sites and coarse grids.

Dense, desk-scale machinery: exact covariance construction and Cholesky
sampling for up to ~1500 sites, the three strategies for constraining a
residual field to vanish at a reference site, and a deliberately coarse
lattice GMRF builder used by the low-rank misspecification study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

from .exceptions import NotSpdError, NumericDomainError
from .matrixkit import SpdMatrix

__all__ = [
    "MaternParams",
    "SiteSet",
    "GridGmrfSpec",
    "matern_cov",
    "matern_corr",
    "sample_field",
    "add_nugget",
    "constrain_subtraction",
    "subtraction_corr",
    "constrain_by_b_modulation",
    "constrain_conditioning",
    "grid_gmrf_precision",
    "grid_interp_matrix",
]


@dataclass(frozen=True)
class MaternParams:
    """Matern covariance parameters: variance, range (km), smoothness."""

    sigma2: float
    rho: float
    nu: float = 1.5

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.rho > 0 and self.nu > 0):
            raise NumericDomainError("sigma2, rho and nu must all be positive")

    @property
    def kappa_m(self) -> float:
        """Matern scale sqrt(8 nu) / rho."""
        return np.sqrt(8.0 * self.nu) / self.rho


class SiteSet:
    """A set of 2-D site coordinates with cached pairwise distances."""

    def __init__(self, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise NumericDomainError("coords must be an (n, 2) array")
        if not np.all(np.isfinite(coords)):
            raise NumericDomainError("coords contain non-finite values")
        self.coords = coords
        self._dist = None

    def __len__(self):
        return self.coords.shape[0]

    @property
    def distances(self) -> np.ndarray:
        if self._dist is None:
            diff = self.coords[:, None, :] - self.coords[None, :, :]
            self._dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return self._dist

    def distances_from(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        return np.sqrt(np.sum((self.coords - point[None, :]) ** 2, axis=1))


def matern_corr(d, rho: float, nu: float) -> np.ndarray:
    """Matern correlation at distance d for range rho and smoothness nu.

    Closed forms are used for nu in {0.5, 1.5, 2.5}; the general case goes
    through the modified Bessel function.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise NumericDomainError("distances must be nonnegative")
    kap = np.sqrt(8.0 * nu) / rho
    x = kap * d
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = (2.0 ** (1.0 - nu) / scipy.special.gamma(nu)) * xp**nu * scipy.special.kv(nu, xp)
    return out


def matern_cov(d, p: MaternParams) -> np.ndarray:
    """Matern covariance; returns sigma2 at d = 0 (continuous limit)."""
    return p.sigma2 * matern_corr(d, p.rho, p.nu)


def _covariance_matrix(sites: SiteSet, p: MaternParams, jitter: float = 0.0) -> SpdMatrix:
    cov = matern_cov(sites.distances, p)
    if jitter > 0.0:
        cov = cov + jitter * np.eye(len(sites))
    dmat = sites.distances
    n = len(sites)
    off = dmat + np.eye(n)
    if np.any(off == 0.0) and jitter == 0.0:
        raise NotSpdError("duplicate sites make the covariance singular; pass jitter > 0 to proceed")
    return SpdMatrix(cov)


def sample_field(
    sites: SiteSet,
    p: MaternParams,
    n_reps: int,
    rng: np.random.Generator,
    jitter: float = 0.0,
) -> np.ndarray:
    """Zero-mean draws with exact Matern covariance, shape (n_reps, n_sites).

    Dense Cholesky path; duplicate sites are rejected unless a positive
    jitter is supplied (robustness runs use jitter = 1e-8 * rho).
    """
    cov = _covariance_matrix(sites, p, jitter=jitter)
    chol = cov.cholesky()
    z = rng.standard_normal((n_reps, len(sites)))
    return z @ chol.T


def add_nugget(draws, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Add iid Gaussian noise with precision tau to every entry."""
    if tau <= 0:
        raise NumericDomainError("nugget precision must be positive")
    draws = np.asarray(draws, dtype=float)
    return draws + rng.standard_normal(draws.shape) / np.sqrt(tau)


def constrain_subtraction(draws, s0_index: int) -> np.ndarray:
    """Constrain draws to vanish at one site by subtracting its column."""
    draws = np.asarray(draws, dtype=float)
    n_sites = draws.shape[-1]
    if not (0 <= s0_index < n_sites):
        raise NumericDomainError(f"site index {s0_index} out of range")
    return draws - draws[..., s0_index : s0_index + 1]


def subtraction_corr(d1: float, d2: float, d12: float, p) -> float:
    """Correlation of a subtraction-constrained field between two sites.

    d1 and d2 are the distances of the two sites from the reference site,
    d12 the distance between them.  ``p`` is either MaternParams or any
    isotropic autocorrelation function r(d).  In the symmetric case
    (d1 = d2 = h, d12 = 2h) this reduces to
    (1 - 2 r(h) + r(2h)) / (2 (1 - r(h))), and the opposite-direction
    far-field limit is 1/2.
    """
    if isinstance(p, MaternParams):
        corr = lambda d: matern_corr(d, p.rho, p.nu)
    elif callable(p):
        corr = p
    else:
        raise NumericDomainError("p must be MaternParams or an autocorrelation function")
    r1 = float(corr(d1))
    r2 = float(corr(d2))
    r12 = float(corr(d12))
    v1 = 1.0 - r1
    v2 = 1.0 - r2
    if v1 <= 0.0 or v2 <= 0.0:
        raise NumericDomainError(
            "a site coincides with the reference site; the constrained field "
            "is degenerate there"
        )
    return (1.0 - r1 - r2 + r12) / (2.0 * np.sqrt(v1 * v2))


def constrain_by_b_modulation(draws, b_values) -> np.ndarray:
    """Scale each site's draws by a nonnegative per-site factor.

    With b = 0 at the reference site this realizes the zero-variance
    constraint without conditioning the latent field.
    """
    draws = np.asarray(draws, dtype=float)
    b = np.asarray(b_values, dtype=float)
    if np.any(b < 0):
        raise NumericDomainError("b values are standard-deviation scales and must be >= 0")
    if b.shape[0] != draws.shape[-1]:
        raise NumericDomainError("b values must match the number of sites")
    return draws * b[..., None, :] if draws.ndim > 1 else draws * b


def constrain_conditioning(cov: SpdMatrix, s0_index: int):
    """Covariance of [Z | Z(s0) = 0] and its (zero) conditional mean.

    Returns (cond_cov, cond_mean) as full-size arrays; the reference site's
    row and column of the covariance are exactly zero.  Dense reference
    implementation via the Schur complement.
    """
    if not isinstance(cov, SpdMatrix):
        cov = SpdMatrix(cov)
    n = cov.dim
    if not (0 <= s0_index < n):
        raise NumericDomainError(f"site index {s0_index} out of range")
    sig = cov.values
    var0 = sig[s0_index, s0_index]
    cross = sig[:, s0_index]
    cond = sig - np.outer(cross, cross) / var0
    cond[s0_index, :] = 0.0
    cond[:, s0_index] = 0.0
    cond = 0.5 * (cond + cond.T)
    return cond, np.zeros(n)


@dataclass(frozen=True)
class GridGmrfSpec:
    """A regular lattice GMRF approximating a Matern field (smoothness 1).

    The lattice covers ``nx`` by ``ny`` cells of the given spacing, extended
    by ``extension`` cells on every side to push boundary effects away from
    the data region.  Coarse spacing is the single dial that controls how
    bad the approximation is.
    """

    nx: int
    ny: int
    spacing: float
    matern: MaternParams
    extension: int = 0

    def __post_init__(self):
        if self.spacing <= 0:
            raise NumericDomainError("spacing must be positive")
        if self.nx < 2 or self.ny < 2:
            raise NumericDomainError("grid must have at least 2 nodes per axis")
        if self.extension < 0:
            raise NumericDomainError("extension must be >= 0")

    @property
    def full_nx(self) -> int:
        return self.nx + 2 * self.extension

    @property
    def full_ny(self) -> int:
        return self.ny + 2 * self.extension

    @property
    def n_nodes(self) -> int:
        return self.full_nx * self.full_ny

    @property
    def extension_recommended(self) -> bool:
        """True when the extension spans at least two correlation ranges."""
        return self.extension * self.spacing >= 2.0 * self.matern.rho

    def node_coords(self) -> np.ndarray:
        """Node locations; the unextended region starts at (0, 0)."""
        off = -self.extension * self.spacing
        xs = off + self.spacing * np.arange(self.full_nx)
        ys = off + self.spacing * np.arange(self.full_ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


def grid_gmrf_precision(spec: GridGmrfSpec, rho: float | None = None, sigma2: float | None = None) -> np.ndarray:
    """Dense precision matrix of the lattice GMRF.

    Second-order lattice stencil: Q = (tau_s^2 / h^2) (a I - D)^2 with
    a = 4 + (kappa h)^2, D the 4-neighbor adjacency, kappa = sqrt(8)/rho for
    smoothness 1, and tau_s^2 = 1 / (4 pi kappa^2 sigma^2) matching the
    asymptotic marginal variance.  ``rho`` and ``sigma2`` override the spec's
    Matern parameters, so a likelihood can rebuild Q as parameters move.
    """
    rho = spec.matern.rho if rho is None else rho
    sigma2 = spec.matern.sigma2 if sigma2 is None else sigma2
    if rho <= 0 or sigma2 <= 0:
        raise NumericDomainError("rho and sigma2 must be positive")
    h = spec.spacing
    nx, ny = spec.full_nx, spec.full_ny
    kappa = np.sqrt(8.0) / rho
    a = 4.0 + (kappa * h) ** 2
    n = nx * ny
    b = np.zeros((n, n))
    idx = np.arange(n).reshape(nx, ny)
    b[idx, idx] = a
    b[idx[:-1, :].ravel(), idx[1:, :].ravel()] = -1.0
    b[idx[1:, :].ravel(), idx[:-1, :].ravel()] = -1.0
    b[idx[:, :-1].ravel(), idx[:, 1:].ravel()] = -1.0
    b[idx[:, 1:].ravel(), idx[:, :-1].ravel()] = -1.0
    tau_s2 = 1.0 / (4.0 * np.pi * kappa**2 * sigma2)
    return (tau_s2 / h**2) * (b @ b)


def grid_interp_matrix(spec: GridGmrfSpec, sites: SiteSet) -> np.ndarray:
    """Bilinear interpolation weights from lattice nodes to sites.

    Sites must fall inside the (extended) lattice hull.
    """
    h = spec.spacing
    off = -spec.extension * h
    nx, ny = spec.full_nx, spec.full_ny
    coords = sites.coords
    gx = (coords[:, 0] - off) / h
    gy = (coords[:, 1] - off) / h
    if np.any(gx < 0) or np.any(gy < 0) or np.any(gx > nx - 1) or np.any(gy > ny - 1):
        raise NumericDomainError("a site falls outside the extended lattice")
    ix = np.minimum(np.floor(gx).astype(int), nx - 2)
    iy = np.minimum(np.floor(gy).astype(int), ny - 2)
    fx = gx - ix
    fy = gy - iy
    a_mat = np.zeros((len(sites), spec.n_nodes))
    rows = np.arange(len(sites))
    a_mat[rows, ix * ny + iy] = (1 - fx) * (1 - fy)
    a_mat[rows, (ix + 1) * ny + iy] = fx * (1 - fy)
    a_mat[rows, ix * ny + iy + 1] = (1 - fx) * fy
    a_mat[rows, (ix + 1) * ny + iy + 1] = fx * fy
    return a_mat
