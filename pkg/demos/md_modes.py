"""Short NVE runs of the three system configurations on one solvated peptide.

Each system is relaxed first; the generated water lattice has close contacts.
"""
from mlffbench import minimize, SimConfig, WorkloadSpec, compose_forces, generate_polyalanine, init_model, integrate, solvate

solute = generate_polyalanine(WorkloadSpec(residues=4))
solvated = solvate(solute, padding=4.0)
model = init_model(0)
print(f"solute {solute.n_atoms} atoms, solvated {solvated.n_atoms} atoms")
for mode, system in (("CFFsys", solvated), ("MLFFsys", solute), ("CMLsys", solvated)):
    provider = compose_forces(mode, system, mlff_model=model)
    system, _ = minimize(system, provider, max_iter=200)
    stats = integrate(system, provider, SimConfig(mode=mode, steps=40, warmup_steps=5, temperature=100.0))
    force = {k: v for k, v in stats.per_step.items() if k.startswith("force/")}
    top = sorted(force.items(), key=lambda kv: -kv[1])[:3]
    print(f"{mode:8s} {stats.ns_per_day:8.3f} ns/day  drift {stats.energy_drift():.1e}  "
          + ", ".join(f"{k[6:]} {1e3 * v:.2f} ms" for k, v in top))
