"""Constant controls are singular for the propagator map.

Under a constant field the propagator is a single exponential, so in the
eigenbasis of the generator the diagonal of the rotated coupling never
changes with time.  Those N functions are constant and therefore linearly
dependent, which costs at least N - 1 dimensions of the N^2-dimensional
tangent space of the unitary group.
"""
import numpy as np

from qlandscape.dynamics import ControlField
from qlandscape.quantum_core import four_level_system, random_system
from qlandscape.singularity import corank_propagator, corank_state

system = four_level_system()
psi0 = np.eye(4)[0]

# At eps = 0 the drift's slowest transition (0.2) turns only two radians over
# T = 10, so one response function is close to a constant; the small spectral
# gap reported next to the corank marks that verdict as borderline.
for c in (0.0, 0.3, -0.8):
    field = ControlField.constant(c, 10.0, 256)
    rep = corank_propagator(system, field)
    print(f"eps = {c:+.1f}: propagator rank {rep.rank:2d} of {rep.ambient_dim}, "
          f"corank {rep.corank}, gap {rep.spectral_gap:.1e}")

# A generic time-varying control is regular for both maps.
rng = np.random.default_rng(0)
field = ControlField(10.0, rng.uniform(-1, 1, 256))
print("random control: propagator corank", corank_propagator(system, field).corank,
      "| state corank", corank_state(system, field, psi0).corank)

# The bound holds across random systems of several sizes.
for n in (2, 3, 4, 5):
    worst = min(corank_propagator(random_system(n, rng),
                                  ControlField.constant(rng.uniform(-1, 1), 5.0, 256)).corank
                for _ in range(50))
    print(f"N = {n}: smallest corank over 50 random draws = {worst} (bound {n - 1})")
