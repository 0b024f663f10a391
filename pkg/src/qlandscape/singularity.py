"""Singular controls: corank of the end-point maps, singular cones and extremals.

A control is singular for the control-to-state map when some nonzero tangent
covector ``phi0`` at ``psi0`` annihilates every response function
``U(t)^H a1 U(t) psi0``.  Feedback-generated extremals keep that pairing at
zero by construction; the corank and Wronskian routines test it from the
other side, on sampled response functions.

Functions that take a ``control`` accept either a :class:`ControlField`
(re-propagated with piecewise-constant steps) or a :class:`SingularExtremal`
(sampled along its own Runge-Kutta trajectory).  A smooth singular control
resampled piecewise-constant is singular only up to ``O(dt^2)``, whereas its
generating trajectory is accurate to ``O(dt^4)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .dynamics import ControlField, Trajectory, skew_coordinates, sweep
from .quantum_core import (
    RANK_THRESHOLD_REL,
    QuantumSystem,
    bracket_space_basis,
    commutator,
    complex_vec,
    nested_commutator,
    numerical_rank,
    random_state,
    real_inner,
    real_vec,
    tangent_project,
)

K_MAX = 6
SEED_DEN_FLOOR = 1e-6
DEN_FLOOR_REL = 1e-8
MAX_SEED_TRIES = 1000
#: allowed local RK4 error per unit time before an interval is bisected
SUBSTEP_TOL = 1e-10
MAX_SUBSTEP_DEPTH = 10


class UnderResolvedError(ValueError):
    """The sample grid is too coarse to certify a rank."""

    def __init__(self, message, required_m):
        super().__init__(message)
        self.required_m = required_m


class OrderCapError(ValueError):
    pass


class NoSeedFound(RuntimeError):
    pass


class SingularArcTransition(RuntimeError):
    """The feedback denominator reached zero; the order changes at ``time``."""

    def __init__(self, time, den):
        super().__init__(f"feedback denominator reached zero near t = {time:.6g} "
                         f"(sign change or floor, den = {den:.3g})")
        self.time = time
        self.den = den


class NotOnSurface(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CorankReport:
    which_map: str
    ambient_dim: int
    rank: int
    corank: int
    singular_values: np.ndarray
    threshold: float
    spectral_gap: float
    n_samples: int

    @property
    def singular(self) -> bool:
        return self.corank > 0

    def to_dict(self):
        return {
            "map": self.which_map,
            "ambient_dim": self.ambient_dim,
            "rank": self.rank,
            "corank": self.corank,
            "singular_values": [float(s) for s in self.singular_values],
            "threshold": self.threshold,
            "spectral_gap": self.spectral_gap,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True, eq=False)
class SeedPair:
    psi0: np.ndarray
    phi0: np.ndarray
    order: int
    pattern: tuple = (0, 1)

    def to_dict(self):
        return {
            "order": self.order,
            "pattern": list(self.pattern),
            "psi0": [[float(z.real), float(z.imag)] for z in self.psi0],
            "phi0": [[float(z.real), float(z.imag)] for z in self.phi0],
        }

    @classmethod
    def from_dict(cls, d):
        def vec(pairs):
            return np.array([complex(re, im) for re, im in pairs])
        return cls(vec(d["psi0"]), vec(d["phi0"]), int(d["order"]), tuple(d["pattern"]))


@dataclass(frozen=True, eq=False)
class ConstraintResiduals:
    """``r1 = <phi, a1 psi>``, ``r2 = <phi, [a0,a1] psi>`` and the second
    derivative combination ``r3``; ``rk`` is the order-k feedback identity."""

    times: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    rk: np.ndarray

    def max_abs(self) -> dict:
        return {name: float(np.max(np.abs(getattr(self, name))))
                for name in ("r1", "r2", "r3", "rk")}


@dataclass(frozen=True, eq=False)
class SingularExtremal:
    control: ControlField
    trajectory: Trajectory
    conjugate: np.ndarray  # (M+1, N)
    node_controls: np.ndarray  # feedback control at the grid nodes
    order: int
    seed: SeedPair
    residuals: ConstraintResiduals = field(repr=False)
    denominators: np.ndarray = field(repr=False, default=None)

    @property
    def psi0(self):
        return self.trajectory.states[0]

    def max_residual(self) -> float:
        return max(self.residuals.max_abs().values())


# -- sampled response functions ---------------------------------------------

def _response_path(system, control):
    """Times, interaction-picture couplings ``X(t)`` and control values."""
    if isinstance(control, SingularExtremal):
        u = control.trajectory.propagators
        x = u.conj().transpose(0, 2, 1) @ system.a1[None] @ u
        dt = control.control.dt
        return control.trajectory.times, x, control.node_controls, u, dt
    _, mids, coupling = sweep(system, control)
    x = mids.conj().transpose(0, 2, 1) @ coupling @ mids
    return control.midpoints, x, control.samples, mids, control.dt


def _corank(rows, ambient, which, threshold_rel):
    s = np.linalg.svd(rows, compute_uv=False)
    s_pad = np.concatenate([s, np.zeros(max(0, ambient - s.size))])
    rank = min(numerical_rank(s_pad, threshold_rel), ambient)
    if rank == 0:
        gap = 1.0
    elif rank < s_pad.size and s_pad[rank] > 0:
        gap = float(s_pad[rank - 1] / s_pad[rank])
    else:
        gap = float("inf")
    return CorankReport(which, ambient, rank, ambient - rank, s_pad,
                        threshold_rel, gap, rows.shape[1])


def corank_state(system: QuantumSystem, control, psi0=None,
                 threshold_rel=RANK_THRESHOLD_REL) -> CorankReport:
    """Corank of the control-to-state map, ambient dimension ``2N - 1``."""
    n = system.dim
    ambient = 2 * n - 1
    if psi0 is None:
        if not isinstance(control, SingularExtremal):
            raise ValueError("psi0 is required for a plain control field")
        psi0 = control.psi0
    psi0 = np.asarray(psi0, dtype=complex)
    _, x, _, _, dt = _response_path(system, control)
    if x.shape[0] < ambient:
        raise UnderResolvedError(
            f"{x.shape[0]} samples cannot resolve {ambient} response functions", ambient)
    xi = x @ psi0
    rows = np.vstack([xi.real.T, xi.imag.T]) * np.sqrt(dt)
    return _corank(rows, ambient, "state", threshold_rel)


def corank_propagator(system: QuantumSystem, control,
                      threshold_rel=RANK_THRESHOLD_REL) -> CorankReport:
    """Corank of the control-to-propagator map, ambient dimension ``N^2``."""
    ambient = system.dim ** 2
    _, x, _, _, dt = _response_path(system, control)
    if x.shape[0] < ambient:
        raise UnderResolvedError(
            f"{x.shape[0]} samples cannot resolve {ambient} response functions", ambient)
    rows = skew_coordinates(x).T * np.sqrt(dt)
    return _corank(rows, ambient, "propagator", threshold_rel)


# -- cones and seeds ---------------------------------------------------------

def _check_order(k):
    if k < 2:
        raise ValueError("singular order must be at least 2")
    if k > K_MAX:
        raise OrderCapError(f"order {k} exceeds the cap k_max = {K_MAX}")


def constraint_rows(system, psi, k):
    """Real rows ``psi`` and ``B psi`` for ``B`` in the bracket spaces of level <= k."""
    rows = [real_vec(psi)]
    for level in range(1, k + 1):
        rows.extend(real_vec(b @ psi) for b in bracket_space_basis(system, level))
    return np.array(rows)


def singular_subspace_basis(system: QuantumSystem, psi, k: int,
                            threshold_rel=RANK_THRESHOLD_REL):
    """Real-orthonormal basis of tangent vectors at ``psi`` orthogonal to all
    bracket images of level ``1..k``; empty when the constraints span."""
    _check_order(k)
    psi = np.asarray(psi, dtype=complex)
    rows = constraint_rows(system, psi, k)
    _, s, vt = np.linalg.svd(rows)
    rank = numerical_rank(s, threshold_rel, scale=1.0)
    return [complex_vec(v) for v in vt[rank:]]


def candidate_patterns(k):
    """Index tuples ``alpha`` of length k, scanned in lexicographic order."""
    return list(itertools.product((0, 1), repeat=k))


def pick_pattern(system, psi, phi, k, floor=SEED_DEN_FLOOR):
    """First ``alpha`` with ``|<phi, H_{1 alpha} psi>| >= floor * ||phi||``."""
    nrm = np.linalg.norm(phi)
    best = None
    for alpha in candidate_patterns(k):
        den = real_inner(phi, nested_commutator(system, (1,) + alpha) @ psi)
        if abs(den) >= floor * nrm:
            return alpha, den
        if best is None or abs(den) > abs(best[1]):
            best = (alpha, den)
    return None, (best[1] if best else 0.0)


def seed_residual(system, seed: SeedPair) -> float:
    """Largest violation of the tangency and level <= k orthogonality conditions."""
    rows = constraint_rows(system, seed.psi0, seed.order)
    return float(np.max(np.abs(rows @ real_vec(seed.phi0))))


def sample_seed_pair(system: QuantumSystem, k: int = 2, rng_seed: int = 0, psi0=None,
                     max_tries=MAX_SEED_TRIES) -> SeedPair:
    """Random ``(psi0, phi0)`` with ``phi0`` inside the order-k singular cone.

    ``psi0`` is drawn uniformly from the unit sphere unless given.  ``phi0``
    is a Gaussian combination of the singular subspace basis, normalized and
    rejected while its feedback denominator is below the cone-interior floor.
    """
    _check_order(k)
    rng = np.random.default_rng(rng_seed)
    fixed = psi0 is not None
    dims_seen = set()
    for _ in range(max_tries):
        psi = np.asarray(psi0, dtype=complex) if fixed else random_state(system.dim, rng)
        basis = singular_subspace_basis(system, psi, k)
        dims_seen.add(len(basis))
        if not basis:
            if fixed:
                break
            continue
        coeffs = rng.standard_normal(len(basis))
        phi = sum(c * b for c, b in zip(coeffs, basis))
        phi = phi / np.linalg.norm(phi)
        alpha, _ = pick_pattern(system, psi, phi, k)
        if alpha is not None:
            return SeedPair(psi, phi, k, alpha)
    raise NoSeedFound(f"no order-{k} seed found; singular subspace dimensions seen: {sorted(dims_seen)}")


# -- feedback integration ----------------------------------------------------

def _polar(u):
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def integrate_feedback(system, psi_ref, phi_ref, pattern, duration, n_steps,
                       backward=False, den_floor_rel=DEN_FLOOR_REL,
                       substep_tol=SUBSTEP_TOL, max_depth=MAX_SUBSTEP_DEPTH):
    """RK4 on ``dU/dt = (a0 + eps(U) a1) U`` with ``eps(U) = -num/den``.

    Time runs from 0 to ``duration`` (or from ``duration`` down to 0 when
    ``backward``); ``U`` starts at the identity and ``psi_ref``, ``phi_ref``
    are the states at the starting end.  Each output interval is covered by
    two RK4 half steps whose end point is compared with a single full step;
    intervals where the two differ by more than ``substep_tol * |h|`` are
    bisected recursively (``substep_tol=None`` disables the check).  ``U`` is
    projected back onto the unitary group after every RK4 step.

    Returns node propagators, node controls, midpoint controls and node
    denominators, all in integration order.
    """
    h_num = nested_commutator(system, (0,) + tuple(pattern))
    h_den = nested_commutator(system, (1,) + tuple(pattern))
    a0, a1 = system.a0, system.a1
    floor = den_floor_rel * np.linalg.norm(phi_ref)
    h = (-1.0 if backward else 1.0) * duration / n_steps
    t0 = duration if backward else 0.0
    last_sign = [0.0]

    def feedback(u, t):
        p = u @ psi_ref
        q = u @ phi_ref
        den = real_inner(q, h_den @ p)
        sign = np.sign(den)
        if abs(den) < floor or (last_sign[0] and sign != last_sign[0]):
            raise SingularArcTransition(t, den)
        last_sign[0] = sign
        return -real_inner(q, h_num @ p) / den, den

    def rhs(u, t):
        eps, _ = feedback(u, t)
        return (a0 + eps * a1) @ u

    def rk4(u, t, step):
        k1 = rhs(u, t)
        k2 = rhs(u + 0.5 * step * k1, t + 0.5 * step)
        k3 = rhs(u + 0.5 * step * k2, t + 0.5 * step)
        k4 = rhs(u + step * k3, t + step)
        return _polar(u + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4))

    def advance(u, t, step, depth=0):
        """End point and midpoint of one interval."""
        mid = rk4(u, t, 0.5 * step)
        end = rk4(mid, t + 0.5 * step, 0.5 * step)
        if substep_tol is None or depth >= max_depth:
            return end, mid
        full = rk4(u, t, step)
        if np.linalg.norm(full - end) <= substep_tol * abs(step):
            return end, mid
        mid, _ = advance(u, t, 0.5 * step, depth + 1)
        end, _ = advance(mid, t + 0.5 * step, 0.5 * step, depth + 1)
        return end, mid

    n = system.dim
    nodes = np.empty((n_steps + 1, n, n), dtype=complex)
    node_eps = np.empty(n_steps + 1)
    dens = np.empty(n_steps + 1)
    mid_eps = np.empty(n_steps)
    u = np.eye(n, dtype=complex)
    nodes[0] = u
    node_eps[0], dens[0] = feedback(u, t0)
    for j in range(n_steps):
        t = t0 + j * h
        u_new, u_mid = advance(u, t, h)
        last_sign[0] = np.sign(dens[j])
        mid_eps[j], _ = feedback(u_mid, t + 0.5 * h)
        node_eps[j + 1], dens[j + 1] = feedback(u_new, t + h)
        u = u_new
        nodes[j + 1] = u
    return nodes, node_eps, mid_eps, dens


def _residual_series(system, times, states, conj, eps, pattern):
    a01 = commutator(system.a0, system.a1)
    h001 = commutator(system.a0, a01)
    h101 = commutator(system.a1, a01)
    h_num = nested_commutator(system, (0,) + tuple(pattern))
    h_den = nested_commutator(system, (1,) + tuple(pattern))

    def pair(mat):
        return np.real(np.einsum("ti,ti->t", conj.conj(), states @ mat.T))

    return ConstraintResiduals(
        times=np.asarray(times),
        r1=pair(system.a1),
        r2=pair(a01),
        r3=pair(h001) + eps * pair(h101),
        rk=pair(h_num) + eps * pair(h_den),
    )


def constraint_residuals(system: QuantumSystem, extremal: SingularExtremal) -> ConstraintResiduals:
    traj = extremal.trajectory
    return _residual_series(system, traj.times, traj.states, extremal.conjugate,
                            extremal.node_controls, extremal.seed.pattern)


def conjugate_residuals(system, control: ControlField, psi0, phi0, pattern=(0, 1)):
    """Residual series for a piecewise-constant control and an arbitrary
    conjugate vector carried by the same propagator (evaluated at midpoints)."""
    _, mids, _ = sweep(system, control)
    states = mids @ np.asarray(psi0, dtype=complex)
    conj = mids @ np.asarray(phi0, dtype=complex)
    return _residual_series(system, control.midpoints, states, conj, control.samples, pattern)


def _build_extremal(system, seed, duration, nodes, node_eps, mid_eps, dens):
    m = mid_eps.size
    control = ControlField(duration, mid_eps)
    times = np.linspace(0.0, duration, m + 1)
    traj = Trajectory(times, nodes @ seed.psi0, nodes)
    conj = nodes @ seed.phi0
    res = _residual_series(system, times, traj.states, conj, node_eps, seed.pattern)
    return SingularExtremal(control, traj, conj, node_eps, seed.order, seed, res, dens)


def generate_singular_extremal(system: QuantumSystem, seed: SeedPair, T: float, M: int,
                               den_floor_rel=DEN_FLOOR_REL) -> SingularExtremal:
    """Integrate the feedback-closed propagator equation forward from ``seed``."""
    _check_order(seed.order)
    if not T > 0:
        raise ValueError("T must be positive")
    nodes, node_eps, mid_eps, dens = integrate_feedback(
        system, seed.psi0, seed.phi0, seed.pattern, T, M, den_floor_rel=den_floor_rel)
    return _build_extremal(system, seed, T, nodes, node_eps, mid_eps, dens)


def find_singular_extremals(system, n, T, M, k=2, psi0=None, start_seed=0, max_seeds=200):
    """The first ``n`` extremals whose seeds survive ``[0, T]`` without an arc transition.

    Returns ``(rng_seed, extremal)`` pairs.
    """
    found = []
    for s in range(start_seed, start_seed + max_seeds):
        seed = sample_seed_pair(system, k, s, psi0=psi0)
        try:
            found.append((s, generate_singular_extremal(system, seed, T, M)))
        except SingularArcTransition:
            continue
        if len(found) == n:
            return found
    raise NoSeedFound(f"only {len(found)} of {n} extremals survived {max_seeds} seeds")


# -- Wronskian oracle --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WronskianReport:
    times: np.ndarray
    determinant: np.ndarray
    relative: np.ndarray
    degenerate: bool
    mode: str

    def is_singular(self, tol=1e-6) -> bool:
        return self.degenerate or float(np.max(np.abs(self.relative))) <= tol

    def regular_fraction(self, floor=1e-3) -> float:
        return float(np.mean(np.abs(self.relative) >= floor))


def tangent_frame(psi0):
    """Orthonormal real basis (rows) of the tangent space at ``psi0``."""
    _, _, vt = np.linalg.svd(real_vec(psi0)[None, :])
    return vt[1:]


def wronskian_residual(system: QuantumSystem, control, psi0=None, mode="auto") -> WronskianReport:
    """Wronskian determinant of the response functions at each sample time.

    The ``2N - 1`` functions are the coordinates of ``X(t) psi0`` in an
    orthonormal frame of the tangent space at ``psi0``; the frame is
    lossless because ``Re(psi0^H X(t) psi0) = 0`` for skew-Hermitian ``X``.
    ``exact`` mode (N = 2) builds the derivative rows from brackets;
    ``numeric`` mode differentiates the sampled functions by centered
    differences and needs a smooth control.
    """
    n = system.dim
    if psi0 is None:
        psi0 = control.psi0
    psi0 = np.asarray(psi0, dtype=complex)
    if mode == "auto":
        mode = "exact" if n == 2 else "numeric"
    frame = tangent_frame(psi0)
    times, _, eps, u, dt = _response_path(system, control)
    ud = u.conj().transpose(0, 2, 1)

    def coords(mats):
        v = mats @ psi0
        return np.hstack([v.real, v.imag]) @ frame.T

    if mode == "exact":
        if n != 2:
            raise ValueError("exact Wronskian rows are available for N = 2 only")
        a01 = commutator(system.a0, system.a1)
        h001 = commutator(system.a0, a01)
        h101 = commutator(system.a1, a01)
        r0 = coords(ud @ system.a1 @ u)
        r1 = coords(-(ud @ a01 @ u))
        r2 = coords(ud @ (h001[None] + eps[:, None, None] * h101[None]) @ u)
        w = np.stack([r0, r1, r2], axis=1)
    elif mode == "numeric":
        if times.size < 64:
            raise UnderResolvedError("numeric Wronskian needs at least 64 samples", 64)
        xi = coords(ud @ system.a1 @ u)
        rows = [xi]
        for _ in range(2 * n - 2):
            rows.append(np.gradient(rows[-1], dt, axis=0))
        w = np.stack(rows, axis=1)
        trim = 2 * n - 2
        w, times = w[trim:-trim], times[trim:-trim]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    det = np.linalg.det(w)
    norms = np.prod(np.linalg.norm(w, axis=2), axis=1)
    degenerate = bool(np.all(norms == 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(norms > 0, det / np.where(norms > 0, norms, 1.0), 0.0)
    return WronskianReport(np.asarray(times), det, rel, degenerate, mode)


# -- singular surface --------------------------------------------------------

@dataclass(frozen=True)
class SurfaceResidual:
    value: float
    gradient_norm: float
    kinematic: bool

    def __float__(self):
        return self.value


def surface_gradient(psi, psif):
    """Tangent part of the kinematic gradient of ``|psif^H psi|^2`` at ``psi``."""
    psi = np.asarray(psi, dtype=complex)
    psif = np.asarray(psif, dtype=complex)
    return tangent_project(psi, 2 * np.vdot(psif, psi) * psif)


def singular_surface_residual(system: QuantumSystem, psi, psif, k: int,
                              kin_tol=1e-14) -> SurfaceResidual:
    """Relative size of the kinematic gradient outside the order-k singular subspace."""
    g = surface_gradient(psi, psif)
    gnorm = float(np.linalg.norm(g))
    if gnorm <= kin_tol:
        return SurfaceResidual(0.0, gnorm, True)
    basis = singular_subspace_basis(system, psi, k)
    proj = sum((real_inner(b, g) * b for b in basis), np.zeros_like(g))
    return SurfaceResidual(float(np.linalg.norm(g - proj) / gnorm), gnorm, False)


def _surface_equations(system, psif, k):
    mats = [b for level in range(1, k + 1) for b in bracket_space_basis(system, level)]

    def f(x):
        psi = complex_vec(x / np.linalg.norm(x))
        g = surface_gradient(psi, psif)
        return np.array([real_inner(g, b @ psi) for b in mats])
    return f


def sample_surface_point(system: QuantumSystem, psif, k: int = 2, rng_seed: int = 0,
                         j_range=(0.05, 0.95), max_tries=100):
    """A state on the order-k singular surface with a non-degenerate cone direction.

    Solves the orthogonality equations by nonlinear least squares from random
    starts; accepts a root whose overlap ``J`` lies inside ``j_range``.
    """
    _check_order(k)
    psif = np.asarray(psif, dtype=complex)
    rng = np.random.default_rng(rng_seed)
    f = _surface_equations(system, psif, k)
    for _ in range(max_tries):
        x0 = real_vec(random_state(system.dim, rng))
        sol = least_squares(f, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        psi = complex_vec(sol.x / np.linalg.norm(sol.x))
        j = abs(np.vdot(psif, psi)) ** 2
        if not (j_range[0] <= j <= j_range[1]):
            continue
        res = singular_surface_residual(system, psi, psif, k)
        if res.kinematic or res.value > 1e-10:
            continue
        alpha, _ = pick_pattern(system, psi, surface_gradient(psi, psif), k)
        if alpha is not None:
            return psi
    raise NoSeedFound(f"no order-{k} singular surface point found in {max_tries} starts")


def backward_singular_from_surface(system: QuantumSystem, psiT, psif, k: int, T: float,
                                   M: int, den_floor_rel=DEN_FLOOR_REL) -> SingularExtremal:
    """Singular extremal ending at ``psiT`` with terminal conjugate equal to the
    kinematic gradient, integrated backwards from ``t = T``."""
    psiT = np.asarray(psiT, dtype=complex)
    res = singular_surface_residual(system, psiT, psif, k)
    if res.kinematic:
        raise NotOnSurface("kinematic gradient vanishes at psiT (kinematic, not nonkinematic)")
    if res.value > 1e-8:
        raise NotOnSurface(f"psiT is off the order-{k} singular surface (residual {res.value:.3g})")
    phiT = surface_gradient(psiT, psif)
    alpha, den = pick_pattern(system, psiT, phiT, k)
    if alpha is None:
        raise NotOnSurface(f"gradient is on the closed subspace but outside the order-{k} cone "
                           f"(denominator {den:.3g})")
    nodes, node_eps, mid_eps, dens = integrate_feedback(
        system, psiT, phiT, alpha, T, M, backward=True, den_floor_rel=den_floor_rel)
    # reverse into forward time; rebase propagators at t = 0
    v = nodes[::-1]
    u = v @ v[0].conj().T
    seed = SeedPair(v[0] @ psiT, v[0] @ phiT, k, alpha)
    return _build_extremal(system, seed, T, u, node_eps[::-1], mid_eps[::-1], dens[::-1])
