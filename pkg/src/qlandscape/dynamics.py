"""Piecewise-constant propagation and Fréchet derivatives of the end-point maps.

Each control sample ``eps_j`` is held on ``[j dt, (j+1) dt)``.  A step is the
exact exponential ``exp(dt (a0 + eps_j a1))``, obtained from the Hermitian
eigendecomposition of ``1j * (a0 + eps_j a1)``, so unitarity holds to rounding.

Derivative columns are anchored at interval midpoints ``t_j* = (j + 1/2) dt``.
On interval ``j`` the derivative of the step exponential is

    d/d eps_j exp(dt G_j) = exp(dt G_j / 2) (dt B_j) exp(dt G_j / 2),

where ``B_j`` is ``a1`` averaged over the interval in the interaction picture
of ``G_j``.  In the eigenbasis of ``G_j`` the average multiplies the
off-diagonal entries of ``a1`` by ``sinc((l_k - l_l) dt / 2)``, hence
``B_j = a1 + O(dt^2)``.  With ``B_j`` in place of ``a1`` the midpoint formula
is the exact derivative of the discretized end-point map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantum_core import DimensionError, QuantumSystem

DEFAULT_M = 256


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise-constant control on a uniform grid over ``[0, duration]``."""

    duration: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        if samples.size < 1:
            raise ValueError("control needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("control samples must be finite")
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive, got {self.duration}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return self.duration / self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.n_samples + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_samples) + 0.5) * self.dt

    @classmethod
    def constant(cls, value, duration, n_samples=DEFAULT_M):
        return cls(duration, np.full(n_samples, float(value)))

    @classmethod
    def from_function(cls, func, duration, n_samples=DEFAULT_M):
        """Sample ``func`` at the interval midpoints."""
        t = (np.arange(n_samples) + 0.5) * duration / n_samples
        return cls(duration, np.asarray(func(t), dtype=float) * np.ones(n_samples))

    def refine(self, factor: int) -> "ControlField":
        """The same piecewise-constant function on a grid ``factor`` times finer."""
        return ControlField(self.duration, np.repeat(self.samples, factor))

    def with_samples(self, samples) -> "ControlField":
        return ControlField(self.duration, samples)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (M+1, N)
    propagators: np.ndarray  # (M+1, N, N)

    @property
    def psi0(self):
        return self.states[0]

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_propagator(self):
        return self.propagators[-1]

    def unitarity_error(self) -> float:
        """Largest ``||U^H U - I||_F`` along the trajectory."""
        u = self.propagators
        eye = np.eye(u.shape[-1])
        return float(np.max(np.linalg.norm(u.conj().transpose(0, 2, 1) @ u - eye, axis=(1, 2))))

    def norm_error(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.states, axis=1) - 1.0)))


@dataclass(frozen=True, eq=False)
class FrechetMatrix:
    """Discretized derivative of an end-point map, one column per control sample.

    ``columns`` is real with shape ``(2N, M)`` for the state map (stacked
    real/imaginary parts of ``delta psi(T)``) and ``(N^2, M)`` for the
    propagator map (coordinates of ``U(T)^H delta U(T)``; see
    :func:`skew_coordinates`).
    """

    which_map: str
    columns: np.ndarray
    dt: float
    final_propagator: np.ndarray = field(repr=False)

    def complex_columns(self) -> np.ndarray:
        """State map only: columns as complex vectors, shape ``(N, M)``."""
        if self.which_map != "state":
            raise ValueError("complex columns are defined for the state map only")
        n = self.columns.shape[0] // 2
        return self.columns[:n] + 1j * self.columns[n:]


def _check_state(system, psi0, normalized=True):
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (system.dim,):
        raise DimensionError(f"state has shape {psi0.shape}, system dimension is {system.dim}")
    if normalized and abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValueError("state must be normalized")
    return psi0


def step_spectra(system: QuantumSystem, control: ControlField):
    """Eigenvalues ``(M, N)`` and eigenvectors ``(M, N, N)`` of ``1j * (a0 + eps_j a1)``."""
    h = 1j * (system.a0[None] + control.samples[:, None, None] * system.a1[None])
    h = (h + h.conj().transpose(0, 2, 1)) / 2
    return np.linalg.eigh(h)


def _exp_from_spectrum(lam, vec, tau):
    phase = np.exp(-1j * lam * tau)
    return (vec * phase[:, None, :]) @ vec.conj().transpose(0, 2, 1)


def _averaged_coupling(system, lam, vec, dt):
    a1_eig = vec.conj().transpose(0, 2, 1) @ system.a1[None] @ vec
    gaps = lam[:, :, None] - lam[:, None, :]
    # np.sinc(x) = sin(pi x) / (pi x)
    a1_eig = a1_eig * np.sinc(gaps * dt / (2 * np.pi))
    return vec @ a1_eig @ vec.conj().transpose(0, 2, 1)


def sweep(system: QuantumSystem, control: ControlField):
    """Node propagators ``(M+1, N, N)``, midpoint propagators ``(M, N, N)`` and
    interval-averaged couplings ``B_j`` ``(M, N, N)``."""
    lam, vec = step_spectra(system, control)
    dt = control.dt
    steps = _exp_from_spectrum(lam, vec, dt)
    halves = _exp_from_spectrum(lam, vec, dt / 2)
    m, n = control.n_samples, system.dim
    nodes = np.empty((m + 1, n, n), dtype=complex)
    nodes[0] = np.eye(n)
    for j in range(m):
        nodes[j + 1] = steps[j] @ nodes[j]
    mids = halves @ nodes[:-1]
    coupling = _averaged_coupling(system, lam, vec, dt)
    return nodes, mids, coupling


def propagate(system: QuantumSystem, control: ControlField, psi0) -> Trajectory:
    psi0 = _check_state(system, psi0)
    nodes, _, _ = sweep(system, control)
    return Trajectory(control.times, nodes @ psi0, nodes)


def final_propagator(system: QuantumSystem, control: ControlField) -> np.ndarray:
    lam, vec = step_spectra(system, control)
    steps = _exp_from_spectrum(lam, vec, control.dt)
    u = np.eye(system.dim, dtype=complex)
    for s in steps:
        u = s @ u
    return u


def final_state(system: QuantumSystem, control: ControlField, psi0) -> np.ndarray:
    return final_propagator(system, control) @ np.asarray(psi0, dtype=complex)


def interaction_couplings(system: QuantumSystem, control: ControlField):
    """``U(t_j*)^H B_j U(t_j*)`` for every interval, plus the node propagators."""
    nodes, mids, coupling = sweep(system, control)
    return mids.conj().transpose(0, 2, 1) @ coupling @ mids, nodes


def frechet_state(system: QuantumSystem, control: ControlField, psi0) -> FrechetMatrix:
    """Column ``j`` is ``d psi(T) / d eps_j``."""
    psi0 = _check_state(system, psi0)
    x, nodes = interaction_couplings(system, control)
    u_final = nodes[-1]
    cols = u_final @ (x @ psi0).T * control.dt
    return FrechetMatrix("state", np.vstack([cols.real, cols.imag]), control.dt, u_final)


def skew_coordinates(x) -> np.ndarray:
    """Real coordinates of skew-Hermitian matrices, shape ``(..., N^2)``.

    Order: ``Im`` of the N diagonal entries, then ``sqrt(2) Re`` and
    ``sqrt(2) Im`` of the strictly upper entries.  The map is an isometry for
    the Frobenius inner product ``Re tr(X^H Y)``.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    iu = np.triu_indices(n, 1)
    diag = np.diagonal(x, axis1=-2, axis2=-1).imag
    upper = x[..., iu[0], iu[1]]
    return np.concatenate([diag, np.sqrt(2) * upper.real, np.sqrt(2) * upper.imag], axis=-1)


def frechet_propagator(system: QuantumSystem, control: ControlField) -> FrechetMatrix:
    """Column ``j`` holds the coordinates of ``U(T)^H dU(T)/d eps_j``."""
    x, nodes = interaction_couplings(system, control)
    cols = skew_coordinates(x).T * control.dt
    return FrechetMatrix("propagator", cols, control.dt, nodes[-1])
