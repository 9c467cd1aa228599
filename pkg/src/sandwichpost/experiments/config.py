"""Experiment configuration and desk-scale / paper-scale defaults."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..exceptions import ConfigurationError

STUDY_IDS = (
    "student-t",
    "coarse-grid",
    "block-composite",
    "condex-global",
    "condex-gaussian-s2",
    "self-inconsistency",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One study run: what to simulate, how often, and where to write.

    ``params`` holds per-study knobs (grid sizes, replicate counts per fit,
    oracle sample sizes); the defaults below are desk scale, with
    ``paper_scale`` switching to the published experiment sizes.
    """

    study: str
    replications: int
    seed: int
    sampler: str = "laplace"
    n_draws: int = 2000
    out_dir: str | None = None
    paper_scale: bool = False
    workers: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDY_IDS:
            raise ConfigurationError(f"unknown study '{self.study}'; choose from {STUDY_IDS}")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.sampler not in ("laplace", "mcmc"):
            raise ConfigurationError("sampler must be 'laplace' or 'mcmc'")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def with_params(self, **kwargs) -> "ExperimentConfig":
        merged = dict(self.params)
        merged.update(kwargs)
        return replace(self, params=merged)


_DESK_DEFAULTS = {
    "student-t": dict(
        replications=200,
        n_draws=4000,
        params=dict(n_obs=100, prior_precision=0.001, t_df=1.0),
    ),
    "coarse-grid": dict(
        replications=100,
        n_draws=2000,
        params=dict(
            n_sites=400,
            domain=25.0,
            n_field_reps=200,
            true_tau=100.0,
            true_rho=12.0,
            true_sigma=1.0,
            nu=1.5,
            grid_spacing=5.0,
            grid_extension=3,
            oracle_n=2000,
            mode_grad_tol=1e-3,
        ),
    ),
    "block-composite": dict(
        replications=100,
        n_draws=2000,
        params=dict(
            n_sites=400,
            domain=25.0,
            n_field_reps=100,
            true_tau=100.0,
            true_rho=12.0,
            true_sigma=1.0,
            nu=1.5,
            block_size=5.0,
            mode_grad_tol=1e-3,
        ),
    ),
    "condex-global": dict(
        replications=50,
        n_draws=2000,
        params=dict(
            grid_n=13,
            grid_spacing=2.0,
            cond_stride=1,
            selection_radius=7.0,
            threshold_prob=0.9975,
            n_global=40,
            oracle_n=1200,
            fix_rho_b=False,
            mode_grad_tol=1e-3,
            true_params=(19.1, 0.6, 1.9, 4.6, 13.0, 23.1),
        ),
    ),
    "condex-gaussian-s2": dict(
        replications=100,
        n_draws=2000,
        params=dict(
            grid_n=13,
            grid_spacing=1.0,
            cond_stride=2,
            selection_radius=8.0,
            threshold_prob=0.95,
            n_keep=600,
            oracle_n=2400,
            oracle_batches=10,
            field_rho=8.0,
            data_nugget_tau=25.0,
            fix_rho_b=True,
            mode_grad_tol=1e-3,
        ),
    ),
    "self-inconsistency": dict(
        replications=1,
        n_draws=1,
        params=dict(mu=0.0, sigma=1.0, alpha=0.9, beta=0.8, threshold=4.0, n_mc=200000),
    ),
}

_PAPER_OVERRIDES = {
    "student-t": dict(replications=1000),
    "coarse-grid": dict(replications=300, params=dict(oracle_n=10000)),
    "block-composite": dict(replications=300),
    "condex-global": dict(
        replications=300,
        params=dict(
            grid_n=31, grid_spacing=1.0, cond_stride=4, n_global=10, oracle_n=50000
        ),
    ),
    "condex-gaussian-s2": dict(
        replications=300, params=dict(n_keep=500, oracle_n=5000, oracle_batches=10)
    ),
    "self-inconsistency": dict(params=dict(n_mc=1000000)),
}


def default_config(study: str, seed: int = 0, paper_scale: bool = False, **overrides) -> ExperimentConfig:
    """Desk-scale defaults for a study, optionally at paper scale."""
    if study not in STUDY_IDS:
        raise ConfigurationError(f"unknown study '{study}'; choose from {STUDY_IDS}")
    base = dict(_DESK_DEFAULTS[study])
    params = dict(base.pop("params"))
    if paper_scale:
        over = _PAPER_OVERRIDES.get(study, {})
        params.update(over.get("params", {}))
        base.update({k: v for k, v in over.items() if k != "params"})
    params.update(overrides.pop("params", {}))
    base.update(overrides)
    return ExperimentConfig(study=study, seed=seed, paper_scale=paper_scale, params=params, **base)
