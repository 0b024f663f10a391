"""A critical point that is not kinematic, and why it is not a trap.

A final state is chosen on the order-2 singular surface, where the gradient
of the yield lies in the singular cone.  Integrating the singular feedback
law backwards from that state gives a control whose discretized landscape
gradient vanishes even though the final state is far from the target.  The
Hessian spectrum at that control has eigenvalues of both signs, so ascent
can leave it.
"""
from qlandscape.landscape import LandscapeProblem, classify
from qlandscape.quantum_core import basis_state, four_level_system
from qlandscape.singularity import (backward_singular_from_surface, sample_surface_point,
                                    singular_surface_residual)

system = four_level_system()
e4 = basis_state(4, 3)

psiT = sample_surface_point(system, e4, k=2, rng_seed=1)
print(f"surface residual {singular_surface_residual(system, psiT, e4, 2).value:.1e}, "
      f"J at psiT = {abs(e4.conj() @ psiT) ** 2:.3f}")

ex = backward_singular_from_surface(system, psiT, e4, 2, T=2.0, M=512)
problem = LandscapeProblem(system, ex.psi0, e4, T=2.0, M=512)
rep = classify(problem, ex, hessian=True)
print(f"classification {rep.classification}: gradient {rep.grad_norm:.1e}, "
      f"kinematic gradient {rep.kinematic_grad_norm:.3f}, corank {rep.corank_state}")
lo, hi = rep.hessian_extremes
print(f"Hessian eigenvalues span [{lo:.2e}, {hi:.2e}]: a saddle, not a local maximum")
