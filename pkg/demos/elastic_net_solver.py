"""
Coding a vector with the elastic net
====================================

Every SF and CSF layer solves the same small problem in its forward pass:

    minimize_a  0.5 * ||x - P a||^2 + lambda1 * ||a||_1 + 0.5 * lambda2 * ||a||^2

This walk-through solves it with the active-set homotopy solver, checks the
answer against plain coordinate descent and looks at the optimality
conditions.
"""

import numpy as np

from sfnet.elastic_net import ElasticNetParams, kkt_residual, oracle_solve, solve
from sfnet.sf_layer import init_dictionary

rng = np.random.default_rng(0)

# An orthonormal dictionary turns the problem into soft-thresholding: each
# coefficient is the input shrunk towards zero by lambda1.
code = solve(np.array([1.0, 0.2]), np.eye(2), ElasticNetParams(0.5, 1e-12))
print("soft threshold of (1.0, 0.2) at 0.5:", np.round(code.alpha, 6))

# A redundant dictionary: 12 unit-norm atoms in 8 dimensions.
P = init_dictionary(8, 12, rng)
x = rng.standard_normal(8)
params = ElasticNetParams(lambda1=0.15, lambda2=0.01)

ours = solve(x, P, params)
reference = oracle_solve(x, P, params)
print("support:", ours.support.tolist())
print("largest difference from coordinate descent: %.2e" % np.abs(ours.alpha - reference.alpha).max())

# At the optimum, every active atom's correlation with the residual equals
# lambda1 * sign + lambda2 * a, and no inactive atom's correlation exceeds lambda1.
corr = P.T @ ours.residual
for j in ours.support:
    print(f"  atom {j:2d}: corr {corr[j]:+.6f}   lambda1*sign + lambda2*a {0.15 * np.sign(ours.alpha[j]) + 0.01 * ours.alpha[j]:+.6f}")
print("max |corr| off the support: %.4f (threshold 0.15)" % np.abs(np.delete(corr, ours.support)).max(initial=0))
print("KKT residual: %.1e" % kkt_residual(ours, x, P, params))

# Raising lambda1 up to max |P^T x| empties the support, exactly.
sizes = []
top = np.abs(P.T @ x).max()
for frac in (0.05, 0.2, 0.4, 0.6, 0.8, 1.0):
    sizes.append((frac, solve(x, P, ElasticNetParams(frac * top, 0.01)).support.size))
print("support size as lambda1 grows towards max|P^T x|:", sizes)
