"""Pseudo-true parameter oracles for the misspecified studies.

Where the fitted family does not contain the generator, coverage must be
measured against the large-sample optimum of the fitted family.  Oracles
are estimated once per (study, seed, sample size), cached as regenerable
JSON fixtures, and never hard-coded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = ["ThetaStarOracle", "load_oracle", "save_oracle"]


@dataclass(frozen=True)
class ThetaStarOracle:
    """The centering point used to score coverage for one study."""

    study: str
    names: tuple
    values: tuple
    method: str  # 'analytic' or 'large-n-mle'
    n_used: int
    seed: int
    converged: bool = True

    def vector(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def to_json(self) -> str:
        d = asdict(self)
        d["names"] = list(self.names)
        d["values"] = [float(v) for v in self.values]
        return json.dumps(d, indent=2, sort_keys=True)


def _fixture_path(out_dir, study: str, seed: int, n_used: int) -> Path:
    return Path(out_dir) / "fixtures" / f"oracle_{study}_seed{seed}_n{n_used}.json"


def load_oracle(out_dir, study: str, seed: int, n_used: int) -> ThetaStarOracle | None:
    if out_dir is None:
        return None
    path = _fixture_path(out_dir, study, seed, n_used)
    if not path.exists():
        return None
    d = json.loads(path.read_text())
    return ThetaStarOracle(
        study=d["study"],
        names=tuple(d["names"]),
        values=tuple(d["values"]),
        method=d["method"],
        n_used=int(d["n_used"]),
        seed=int(d["seed"]),
        converged=bool(d["converged"]),
    )


def save_oracle(oracle: ThetaStarOracle, out_dir) -> None:
    if out_dir is None:
        return
    path = _fixture_path(out_dir, oracle.study, oracle.seed, oracle.n_used)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(oracle.to_json() + "\n")
