"""Singular extremals of the four-level system are not traps.

Two singular controls are generated from the ground state, perturbed by at
most 0.01 per sample, and used as starting points for steepest ascent on
J = |<e4|psi(T)>|^2.  Both runs climb to a near-perfect yield while moving
away from the singular control they started next to.

Writes ``trap_escape.csv`` with the J and distance traces of both runs.
"""
from qlandscape.io import write_csv
from qlandscape.landscape import LandscapeProblem, trap_experiment
from qlandscape.quantum_core import basis_state, four_level_system
from qlandscape.singularity import find_singular_extremals

system = four_level_system()
e1, e4 = basis_state(4, 0), basis_state(4, 3)
problem = LandscapeProblem(system, e1, e4, T=10.0, M=256)

rows = []
for i, (seed, ex) in enumerate(find_singular_extremals(system, 2, 10.0, 256, psi0=e1,
                                                       start_seed=1)):
    rep = trap_experiment(problem, ex, radius=0.01, n_trials=1, rng_seed=i)
    rec = rep.trials[0].record
    print(f"extremal {i} (seed {seed}): J {rec.J[0]:.4f} -> {rec.final_J:.6f} "
          f"in {rec.iterations[-1]} iterations; distance "
          f"{rec.distance_to_reference[0]:.4f} -> {rec.distance_to_reference[-1]:.3f}")
    rows += [[i, it, j, d] for it, j, d in zip(rec.iterations, rec.J, rec.distance_to_reference)]

write_csv("trap_escape.csv", ["extremal", "iteration", "J", "distance"], rows)
print("traces written to trap_escape.csv")
