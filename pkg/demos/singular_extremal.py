"""Generating a second-order singular extremal and checking it three ways.

A seed pair (psi0, phi0) is drawn with phi0 orthogonal to A1 psi0 and
[A0, A1] psi0.  The control that keeps those two pairings at zero is fed back
into the propagator equation and integrated with RK4.  We then confirm:

* the constraint pairings stay at rounding level along the whole arc;
* the control-to-state map loses rank along the trajectory;
* for a two-level system, the Wronskian of the response functions vanishes.
"""
import numpy as np

from qlandscape.quantum_core import basis_state, four_level_system, random_system
from qlandscape.singularity import (SingularArcTransition, corank_state, find_singular_extremals,
                                    generate_singular_extremal, sample_seed_pair,
                                    wronskian_residual)

system = four_level_system()
e1 = basis_state(4, 0)

(seed_id, ex), = find_singular_extremals(system, 1, T=10.0, M=2048, psi0=e1, start_seed=1)
print(f"rng seed {seed_id}, bracket pattern {ex.seed.pattern}")
for name, value in ex.residuals.max_abs().items():
    print(f"  max |{name}| = {value:.2e}")
print(f"  unitarity error {ex.trajectory.unitarity_error():.1e}")
print(f"  control range [{ex.control.samples.min():.3f}, {ex.control.samples.max():.3f}]")

rep = corank_state(system, ex)
print(f"state-map corank along the extremal: {rep.corank} "
      f"(singular values {np.array2string(rep.singular_values, precision=2)})")

# Two-level check: the Wronskian oracle and the corank agree.
two = random_system(2, np.random.default_rng(3))
for s in range(20):
    try:
        ex2 = generate_singular_extremal(two, sample_seed_pair(two, 2, rng_seed=s), 3.0, 256)
        break
    except SingularArcTransition:
        continue
w = wronskian_residual(two, ex2)
print(f"N = 2: max relative Wronskian {np.max(np.abs(w.relative)):.1e}, "
      f"corank {corank_state(two, ex2).corank}")
