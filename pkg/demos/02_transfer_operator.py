"""Kernel matrix, invariant density and spectral gap for the double well.

Run: python3 demos/02_transfer_operator.py
"""

import numpy as np

from optresp import parse_config
from optresp.experiment import ExperimentContext, local_maxima, operator_law_audit
from optresp.transfer import norms

config = parse_config()  # coarse profile: dx = 8e-3, dt = 2e-3, eps = 0.25, T = 1
ctx = ExperimentContext(config, cache_dir="out/kernel-cache")

K = ctx.kernel
print(f"kernel {K.values.shape}, loaded from cache: {ctx.cache_status}")
dev = np.abs(K.row_masses - 1)
print(f"row masses within {dev.max():.2e} of 1; smallest entry {K.values.min():.2e}")

# Rows started right of the barrier end up near +1 and vice versa.
y = ctx.grid.nodes
for x in (-1.0, -0.2, 0.2, 1.0):
    row = K.values[ctx.grid.node_index(x)]
    print(f"  kappa(x={x:+.1f}, .) has its peak at y = {y[np.argmax(row)]:+.3f}")

f0 = ctx.f0
print(f"\ninvariant density: {f0.iterations} power sweeps, residual {f0.residual:.1e}, mass {f0.mass:.12f}")
print(f"interior maxima at {local_maxima(f0.values, y)}")
print(f"|lambda_2| = {ctx.gap:.6f}  (so the resolvent is bounded on zero-mass functions)")

nr = norms(f0.values, ctx.grid, alpha=2, restriction=ctx.restriction)
print(f"norms of f0: L1 {nr.l1:.6f}, L2 {nr.l2:.6f}, sup {nr.linf:.6f}, L1_2 {nr.l1_alpha:.6f}, strong {nr.strong:.6f}")

laws = operator_law_audit(K, n=100, seed=1)
print(f"\n100 random signed functions: worst relative mass error {laws['max_mass_error']:.1e}, "
      f"L1 growth {laws['max_contraction_excess']:+.2f}")
print(f"100 random nonnegative functions: smallest image value {laws['min_positive_image']:.1e}")
