"""Where the ML potential's extra cost comes from, on the 22-atom dipeptide.

Prints per-stage counted operations for the ANI pipeline and the classical
nonbonded kernel, then the same numbers as the ensemble grows.
"""
from mlffbench import generate_polyalanine, init_model, mlff_vs_cff_ratio
from mlffbench.bench import DIPEPTIDE

system = generate_polyalanine(DIPEPTIDE)
report = mlff_vs_cff_ratio(system, init_model(0))
print(f"{system.n_atoms} atoms, {report.cff_pairs} nonbonded pairs")
for stage, ops in report.breakdown.items():
    print(f"  {stage:15s} {ops:>14,d}")
print(f"ratio {report.ratio:.0f}")

for members in (1, 2, 4, 8):
    r = mlff_vs_cff_ratio(system, init_model(0, ensemble_size=members))
    print(f"ensemble {members}: ratio {r.ratio:8.0f}")
