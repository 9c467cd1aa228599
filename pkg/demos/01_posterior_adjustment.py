"""Walkthrough: why misspecified likelihoods break credible intervals,
and how the affine posterior adjustment repairs them.

Data come from a heavy-tailed distribution, but the model insists on a
unit-variance Gaussian.  The pseudo-true location is still zero (both are
symmetric), yet the posterior concentrates far too tightly, so nominal
95% intervals miss the target most of the time.  The sandwich-based
adjustment re-scales posterior draws to the correct asymptotic spread.
"""

import numpy as np

from sandwichpost import (
    GaussianLinkPrior,
    ParamVector,
    credible_interval,
    full_adjustment_pipeline,
    gaussian_fixed_var_loglik,
    student_t_sample,
)

rng = np.random.default_rng(7)

# 100 observations from a t distribution with one degree of freedom
y = student_t_sample(df=1.0, n=100, rng=rng)
print(f"data: n={len(y)}, a few extremes: {np.round(np.sort(np.abs(y))[-3:], 1)}")

# the (misspecified) model: N(mu, 1) with a weak Gaussian prior on mu
cl = gaussian_fixed_var_loglik(y)
prior = GaussianLinkPrior("mu", mean=0.0, sd=np.sqrt(1.0 / 0.001))

result = full_adjustment_pipeline(
    cl,
    [prior],
    ParamVector(("mu",), [0.0]),
    n_s=4000,
    rng=np.random.default_rng(1),
    two_step=False,
)

est = result.estimate
print(f"\nposterior mode (theta*): {est.theta_star.values[0]:+.3f}")
print(f"H (curvature):           {est.h_mat.values[0, 0]:8.1f}")
print(f"J (score covariance):    {est.j_mat.values[0, 0]:8.1f}")
print(f"adjustment factor C:     {est.c_mat[0, 0]:8.2f}")

for label, draws in (("unadjusted", result.unadjusted), ("adjusted", result.adjusted)):
    ci = credible_interval(draws, 0.95)
    covers = "covers" if ci.lower[0] <= 0.0 <= ci.upper[0] else "misses"
    print(f"{label:>11} 95% interval: [{ci.lower[0]:+.3f}, {ci.upper[0]:+.3f}]  ({covers} 0)")

print(
    "\nThe heavy tails make the score covariance J vastly larger than the"
    "\ncurvature H, so C = sqrt(J)/sqrt(H) stretches the posterior by that"
    "\nfactor and the interval regains its frequentist meaning."
)
print("\nFull audit report:\n")
print(est.report())
