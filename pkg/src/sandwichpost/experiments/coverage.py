"""Coverage bookkeeping for the simulation studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError

LEVELS = (0.90, 0.95, 0.99)
METHODS = ("unadjusted", "adjusted")


@dataclass(frozen=True)
class CoverageTable:
    """Counts of credible intervals containing theta*, by level and method.

    ``counts`` has shape (n_levels, n_params, 2) with the last axis indexing
    (unadjusted, adjusted).  Counts are nested across levels by construction
    because wider intervals contain narrower ones; ``validate`` re-checks.
    """

    study: str
    param_names: tuple
    levels: tuple
    counts: np.ndarray
    n_effective: int
    n_failed: int
    theta_star: np.ndarray

    def validate(self):
        c = self.counts
        if np.any(c < 0) or np.any(c > self.n_effective):
            raise ConfigurationError("coverage counts out of range")
        order = np.argsort(self.levels)
        for a, b in zip(order[:-1], order[1:]):
            if np.any(c[b] < c[a]):
                raise ConfigurationError("coverage counts are not nested across levels")
        return self

    def rates(self) -> np.ndarray:
        if self.n_effective == 0:
            raise ConfigurationError("no effective replications")
        return self.counts / float(self.n_effective)

    def rate(self, level: float, param: str, method: str) -> float:
        li = self.levels.index(level)
        pi = self.param_names.index(param)
        mi = METHODS.index(method)
        return float(self.counts[li, pi, mi]) / float(self.n_effective)

    @staticmethod
    def from_membership(study, param_names, levels, membership, n_failed, theta_star):
        """Build from a list of per-replication membership arrays.

        Each membership entry is a (n_levels, n_params, 2) boolean array.
        """
        if membership:
            counts = np.sum(np.stack(membership).astype(int), axis=0)
        else:
            counts = np.zeros((len(levels), len(param_names), 2), dtype=int)
        return CoverageTable(
            study=study,
            param_names=tuple(param_names),
            levels=tuple(levels),
            counts=counts,
            n_effective=len(membership),
            n_failed=int(n_failed),
            theta_star=np.asarray(theta_star, dtype=float),
        ).validate()
