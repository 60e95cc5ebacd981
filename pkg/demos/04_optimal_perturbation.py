"""The perturbation that most increases <phi, f> per unit L2 size.

Run: python3 demos/04_optimal_perturbation.py
"""

import numpy as np

from optresp import parse_config
from optresp.experiment import ExperimentContext, local_maxima, optimality_sampling

for label, overrides in (("symmetric, phi centred at 0", []), ("asymmetric, phi centred at -0.5", ["obs_mu=-0.5"])):
    ctx = ExperimentContext(parse_config(overrides=overrides), cache_dir="out/kernel-cache")
    print(f"== {label}")
    table = ctx.table
    print(f"{len(ctx.basis)} basis elements (I = J = 35), ||G|| = {table.norm:.6f}")
    top = np.argsort(-np.abs(table.values))[:4]
    for k in top:
        idx = table.indices[k]
        print(f"   G({idx.i:2d},{idx.j:2d},{idx.kind}) = {table.values[k]:+.5f}")
    if not overrides:
        kinds = np.array([k.kind for k in table.indices])
        print(f"   largest |G| over elements with a sine factor: {np.abs(table.values[kinds != 'cc']).max():.1e}")

    g = ctx.optimal
    print(f"g has L2 norm {g.l2_norm():.8f} and max |x-mean| {g.constraint_violation():.1e}")

    opt = optimality_sampling(ctx, n=1000)
    print(f"1000 random unit directions: best {opt['max_sampled']:.4f} vs optimum {opt['objective_g']:.4f}")

    for delta in (0.5,):
        _, fd = ctx.perturbed(delta)
        print(f"f_delta at delta = {delta}: maxima at {local_maxima(fd.values, ctx.grid.nodes)}, "
              f"<phi, f> moves {ctx.rate(fd.values) - ctx.rate(ctx.f0.values):+.4f}")
    print()
