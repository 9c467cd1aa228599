"""Dense symmetric-positive-definite matrix utilities.

Everything downstream (sandwich estimation, Gaussian field simulation,
Laplace sampling) funnels its linear algebra through this module so that
positive-definiteness handling and tolerances are applied in one place.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import config
from .exceptions import NotSpdError, NumericDomainError

__all__ = [
    "SpdMatrix",
    "MatrixSqrtFactor",
    "spd_sqrt",
    "spd_solve",
    "mvn_sample",
    "floor_eigenvalues",
]


@dataclass(frozen=True)
class SpdMatrix:
    """A validated dense symmetric positive definite matrix.

    Construction symmetrizes the input (averaging with its transpose,
    rejected if the asymmetry exceeds ``config.SYM_RTOL`` relative to the
    largest entry) and verifies all eigenvalues are positive.  Eigenvalues
    below ``SPD_FLOOR_RATIO`` times the spectral radius are clamped to that
    floor with a warning instead of failing, because sandwich estimates
    from short series are frequently near-singular.
    """

    values: np.ndarray
    floored: bool = field(default=False, compare=False)

    def __init__(self, values, floor_ratio: float = config.SPD_FLOOR_RATIO):
        a = np.asarray(values, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise NotSpdError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericDomainError("matrix contains non-finite entries")
        scale = np.max(np.abs(a))
        if scale == 0.0:
            raise NotSpdError("zero matrix is not positive definite")
        asym = np.max(np.abs(a - a.T)) / scale
        if asym > config.SYM_RTOL * max(1.0, a.shape[0]):
            raise NotSpdError(f"matrix is not symmetric (relative asymmetry {asym:.3e})")
        a = 0.5 * (a + a.T)
        eigvals = np.linalg.eigvalsh(a)
        lam_max = eigvals[-1]
        if lam_max <= 0.0:
            raise NotSpdError("matrix has no positive eigenvalues")
        floor = floor_ratio * lam_max
        floored = False
        if eigvals[0] < floor:
            if eigvals[0] <= -config.SYM_RTOL * lam_max:
                raise NotSpdError(
                    f"matrix is not positive definite (min eigenvalue {eigvals[0]:.3e})"
                )
            # near-singular: clamp, keep going
            w, v = np.linalg.eigh(a)
            w = np.maximum(w, floor)
            a = (v * w) @ v.T
            a = 0.5 * (a + a.T)
            floored = True
            warnings.warn(
                f"SpdMatrix: eigenvalues clamped at {floor:.3e} (near-singular input)",
                RuntimeWarning,
                stacklevel=2,
            )
        object.__setattr__(self, "values", a)
        object.__setattr__(self, "floored", floored)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor, with one retry after a tiny jitter."""
        try:
            return np.linalg.cholesky(self.values)
        except np.linalg.LinAlgError:
            lam_max = float(np.linalg.eigvalsh(self.values)[-1])
            jitter = config.SPD_FLOOR_RATIO * lam_max * 10.0
            try:
                return np.linalg.cholesky(self.values + jitter * np.eye(self.dim))
            except np.linalg.LinAlgError as exc:
                raise NotSpdError("Cholesky factorization failed") from exc

    def inv(self) -> "SpdMatrix":
        return SpdMatrix(spd_solve(self, np.eye(self.dim)))

    def logdet(self) -> float:
        chol = self.cholesky()
        return 2.0 * float(np.sum(np.log(np.diag(chol))))

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.values.astype(dtype)
        return self.values


@dataclass(frozen=True)
class MatrixSqrtFactor:
    """A factor M with M'M equal to the source matrix."""

    source: SpdMatrix
    factor: np.ndarray

    def residual(self) -> float:
        a = self.source.values
        return float(
            np.linalg.norm(self.factor.T @ self.factor - a) / np.linalg.norm(a)
        )


def spd_sqrt(a: SpdMatrix) -> MatrixSqrtFactor:
    """Symmetric square root of an SPD matrix.

    Uses the eigendecomposition U diag(sqrt(s)) U', which is the SVD-based
    root for symmetric input.  Any root works for downstream distributional
    guarantees; the symmetric one is canonical and deterministic.
    """
    if not isinstance(a, SpdMatrix):
        a = SpdMatrix(a)
    w, v = np.linalg.eigh(a.values)
    if w[0] <= 0.0:
        raise NotSpdError("cannot take square root: non-positive eigenvalue")
    m = (v * np.sqrt(w)) @ v.T
    m = 0.5 * (m + m.T)
    out = MatrixSqrtFactor(source=a, factor=m)
    if out.residual() > config.SQRT_RTOL:
        raise NotSpdError(f"square-root residual {out.residual():.3e} above tolerance")
    return out


def spd_solve(a: SpdMatrix, b) -> np.ndarray:
    """Solve a x = b for SPD a via Cholesky."""
    if not isinstance(a, SpdMatrix):
        a = SpdMatrix(a)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.dim:
        raise NumericDomainError(
            f"dimension mismatch: matrix dim {a.dim}, rhs leading dim {b.shape[0]}"
        )
    chol = a.cholesky()
    return scipy.linalg.cho_solve((chol, True), b)


def mvn_sample(mean, cov: SpdMatrix, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n multivariate normal vectors; deterministic under a seeded rng.

    Returns an (n, dim) array.  The Cholesky factor of ``cov`` maps iid
    standard normals, so the draw stream depends only on the rng state.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if not isinstance(cov, SpdMatrix):
        cov = SpdMatrix(cov)
    if mean.shape[0] != cov.dim:
        raise NumericDomainError("mean / covariance dimension mismatch")
    if n < 1:
        raise NumericDomainError("n must be >= 1")
    chol = cov.cholesky()
    z = rng.standard_normal((n, cov.dim))
    return mean[None, :] + z @ chol.T


def floor_eigenvalues(a, ratio: float = config.SANDWICH_EIG_FLOOR_RATIO):
    """Symmetrize and clamp eigenvalues at ratio * spectral radius.

    Returns (SpdMatrix, floored_flag).  Used for estimated sandwich pieces,
    which can be indefinite for short series.
    """
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    lam_max = float(np.max(np.abs(w)))
    if lam_max == 0.0:
        raise NotSpdError("zero matrix cannot be floored into an SPD matrix")
    floor = ratio * lam_max
    floored = bool(w[0] < floor)
    if floored:
        w = np.maximum(w, floor)
        a = (v * w) @ v.T
        a = 0.5 * (a + a.T)
    return SpdMatrix(a), floored
