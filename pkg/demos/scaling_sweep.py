"""Counted operations and wall time of the AEV stages across system sizes.

Usage: python demos/scaling_sweep.py [max_residues]
"""
import sys
import time

from mlffbench import OpCounters, WorkloadSpec, build_pairs, compute_aev, generate_polyalanine
from mlffbench.costmodel import log_log_slope

limit = int(sys.argv[1]) if len(sys.argv) > 1 else 300
sizes = [r for r in (10, 20, 50, 100, 200, 300, 500, 1000) if r <= limit]
atoms, ops, secs = [], [], []
print("residues  atoms  M     staged_s  fused_s   counted_ops")
for residues in sizes:
    s = generate_polyalanine(WorkloadSpec(residues=residues, geometry="compact"))
    pairs = build_pairs(s, 5.1)
    c = OpCounters()
    compute_aev(s, pairs, strategy="fused", counters=c)
    t = {}
    for strategy in ("staged", "fused"):
        t0 = time.perf_counter()
        compute_aev(s, pairs, strategy=strategy)
        t[strategy] = time.perf_counter() - t0
    atoms.append(s.n_atoms)
    ops.append(c["aev_radial"].flops + c["aev_angular"].flops)
    secs.append(t["fused"])
    print(f"{residues:8d} {s.n_atoms:6d} {len(pairs) / s.n_atoms:5.1f} {t['staged']:9.4f} {t['fused']:9.4f} "
          f"{ops[-1]:13,d}")
print(f"log-log slope: counted {log_log_slope(atoms, ops):.3f}, fused wall {log_log_slope(atoms, secs):.3f}")
