"""
Checking the sparse-layer gradients by finite differences
=========================================================

The SF layer is differentiable wherever the support of its code does not
change. Its dictionary and input gradients come from the auxiliary vector
``b = (P_S^T P_S + lambda2 I)^-1 g_S``. This script compares them, together
with the CSF layer, the reconstruction loss and the ordinary layers, against
central differences. The same table is printed by ``sfnet gradcheck``.
"""

import numpy as np

from sfnet import gradcheck

rng = np.random.default_rng(0)

# One instance in detail: errors are relative to the largest gradient entry.
errors = None
while errors is None:
    try:
        errors = gradcheck.sf_instance(rng)
    except gradcheck.UnstableSupport:
        # a +-h step changed the support; the formulas do not apply there
        pass
for name, err in errors.items():
    print(f"{name:16s} {err:.2e}")

# The full suite: 50 support-stable instances per sparse layer, the classic
# layers, and a spot check of the whole LeNet.
print()
for kind, err, tol in gradcheck.run_all(seed=1, instances=50):
    print(f"{kind:28s} {err:10.2e}  {'ok' if err < tol else 'FAIL'}")
