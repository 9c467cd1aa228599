"""Central numerical constants.

Every tolerance or step size that both the library and its test suite rely
on lives here, so the two can never drift apart.
"""

import numpy as np

_EPS = float(np.finfo(float).eps)

# Symmetry / positive-definiteness checks
SYM_RTOL = 1e-10            # max relative asymmetry accepted by SpdMatrix
SPD_FLOOR_RATIO = 1e-12     # eigenvalue floor (relative to spectral radius)
                            # applied when an SpdMatrix is nearly singular
SANDWICH_EIG_FLOOR_RATIO = 1e-10  # floor used for estimated H / J matrices

# Residual tolerances promised by the matrix kit
SQRT_RTOL = 1e-10           # |M'M - A|_F / |A|_F for matrix square roots
SOLVE_RTOL = 1e-10          # relative residual of spd_solve
C_DEFINING_RTOL = 1e-8      # |C H^-1 C' - G^-1|_F / |G^-1|_F for build_C

# Finite-difference step scales (central differences)
GRAD_STEP = _EPS ** (1.0 / 3.0)
HESS_STEP = _EPS ** (1.0 / 4.0)

# Mode finding
MODE_GRAD_TOL = 1e-6        # gradient sup-norm required to report convergence
MODE_MAX_ITER = 500

# Posterior sampling
DEFAULT_POSTERIOR_DRAWS = 5000
MCMC_TARGET_ACCEPT = 0.234
MCMC_MIN_ACCEPT = 0.01      # below this after adaptation -> tuning failure

# Composite-likelihood score covariance
DEFAULT_WINDOW_RADIUS = 0   # iid replicate designs; hourly panels use 5

# Global simulation
GLOBAL_MIN_ACCEPT_RATE = 1e-4

# Empirical marginal transform
PIT_MIN_POOLED_OBS = 20
