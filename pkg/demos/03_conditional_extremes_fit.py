"""Walkthrough: fitting the spatial conditional extremes model globally.

Simulates fields conditioned on 'an exceedance somewhere', fits the
composite likelihood that pools every conditioning site, and applies the
posterior adjustment.  The composite treats simultaneously-observed terms
as independent, so its raw posterior is overconfident; the sandwich
adjustment widens it back out.
"""

import numpy as np

from sandwichpost import credible_interval, full_adjustment_pipeline
from sandwichpost.condextremes import (
    CondExtremesModel,
    CondExtremesParams,
    condex_composite,
    laplace_threshold,
)
from sandwichpost.fields import SiteSet
from sandwichpost.globalsim import simulate_global_wadsworth
from sandwichpost.experiments.studies import condex_priors

rng = np.random.default_rng(11)

# truth: mean profile decays over ~19 km, residual scale saturates at 1.9
true_params = CondExtremesParams(
    lambda_a=19.1, kappa_a=0.6, sigma_b=1.9, rho_b=4.6, rho_z=13.0, tau=23.1
)
xs = 2.0 * np.arange(9)
gx, gy = np.meshgrid(xs, xs, indexing="ij")
sites = SiteSet(np.column_stack([gx.ravel(), gy.ravel()]))
threshold = laplace_threshold(0.9975)

model = CondExtremesModel(
    params=true_params, sites=sites, threshold=threshold, selection_radius=8.0
)
print(f"{len(sites)} sites, threshold t = {threshold:.3f} (99.75% Laplace quantile)")

batch = simulate_global_wadsworth(model, 40, rng)
print(f"40 global replicates (exceedance-set path), acceptance {batch.acceptance_rate:.0%}")
print(f"exceedances per replicate: mean {np.mean(np.sum(batch.values > threshold, 1)):.1f}")

cl = condex_composite(model, batch.values)
print(f"composite likelihood: {len(cl)} exceedance terms")

result = full_adjustment_pipeline(
    cl,
    condex_priors(model.free_names),
    model.param_vector(),
    n_s=2000,
    rng=np.random.default_rng(2),
    grad_tol=1e-3,
)
print(f"mode converged: {result.mode.converged} "
      f"(gradient sup-norm {result.mode.grad_norm:.1e})")

print(f"\n{'parameter':>10} {'truth':>7} {'mode':>7} {'unadjusted 95%':>22} {'adjusted 95%':>22}")
ci_u = credible_interval(result.unadjusted, 0.95)
ci_a = credible_interval(result.adjusted, 0.95)
truth = dict(zip(
    ("lambda", "kappa", "sigma_b", "rho_b", "rho_z", "tau"), true_params.values()
))
for k, name in enumerate(result.unadjusted.names):
    print(
        f"{name:>10} {truth[name]:7.2f} {result.estimate.theta_star.values[k]:7.2f} "
        f"[{ci_u.lower[k]:8.2f}, {ci_u.upper[k]:8.2f}] "
        f"[{ci_a.lower[k]:8.2f}, {ci_a.upper[k]:8.2f}]"
    )
print(
    "\nNote: with a self-inconsistent generator the pseudo-true parameter"
    "\ndiffers from the simulation truth, so adjusted intervals are wider"
    "\nbut not guaranteed to cover the truth itself (see demo 04)."
)
