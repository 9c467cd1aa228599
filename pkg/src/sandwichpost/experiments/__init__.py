"""Reproducible simulation studies for the posterior adjustment method."""

from .config import STUDY_IDS, ExperimentConfig, default_config
from .coverage import LEVELS, CoverageTable
from .oracles import ThetaStarOracle
from .studies import rank_by_logscore, run_logscore_ranking, run_study

__all__ = [
    "STUDY_IDS",
    "ExperimentConfig",
    "default_config",
    "LEVELS",
    "CoverageTable",
    "ThetaStarOracle",
    "run_study",
    "rank_by_logscore",
    "run_logscore_ranking",
]
