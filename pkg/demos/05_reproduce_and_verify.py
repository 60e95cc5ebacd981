"""Full pipeline with audits and figure data, then the cross-checks.

Run: python3 demos/05_reproduce_and_verify.py
The same steps are available as `optresp reproduce-figures` and `optresp verify`.
"""

from pathlib import Path

from optresp import parse_config
from optresp.experiment import ExperimentContext, run_experiment, verify

out = Path("out/demo")
config = parse_config(overrides=["delta=[0.5]"])
ctx = ExperimentContext(config, cache_dir="out/kernel-cache")

report = run_experiment(config, out, context=ctx)
print(f"wrote {len(report.files)} files to {out}/")
for audit in report.audits:
    print(f"  {audit['status']:>4}  {audit['name']}  ({audit['value']:.3g} vs {audit['threshold']:.3g})")

result = verify(config, context=ctx)
print("\ncross-checks:")
for audit in result["audits"]:
    print(f"  {audit['status']:>4}  {audit['name']}")
print(f"OU oracle L1 errors: {[round(r['l1_error'], 6) for r in result['ou']['rows']]}")
print(f"timings (s): { {k: round(v, 2) for k, v in ctx.timings.items()} }")
