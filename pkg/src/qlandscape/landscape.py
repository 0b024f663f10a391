"""State-transition landscape ``J = |psif^H psi(T)|^2`` and its critical points."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlField, final_state, sweep
from .quantum_core import RANK_THRESHOLD_REL, QuantumSystem, real_inner
from .singularity import SingularExtremal, corank_state

logger = logging.getLogger(__name__)

CRIT_TOL = 1e-6
KIN_TOL = 1e-6
J_TOL = 1e-6
GRAD_TOL = 1e-8
HESSIAN_MAX_M = 512


class LineSearchError(RuntimeError):
    def __init__(self, message, alpha, control, record=None):
        super().__init__(message)
        self.alpha = alpha
        self.control = control
        self.record = record


@dataclass(frozen=True, eq=False)
class LandscapeProblem:
    system: QuantumSystem
    psi0: np.ndarray
    psif: np.ndarray
    T: float = 10.0
    M: int = 256

    def __post_init__(self):
        for name in ("psi0", "psif"):
            v = np.asarray(getattr(self, name), dtype=complex)
            if v.shape != (self.system.dim,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({self.system.dim},)")
            if abs(np.linalg.norm(v) - 1) > 1e-10:
                raise ValueError(f"{name} must be normalized")
            object.__setattr__(self, name, v)
        if not self.T > 0 or self.M < 1:
            raise ValueError("need T > 0 and M >= 1")

    @property
    def dt(self):
        return self.T / self.M

    def control(self, samples) -> ControlField:
        return ControlField(self.T, samples)

    def zero_control(self) -> ControlField:
        return ControlField(self.T, np.zeros(self.M))

    def random_control(self, rng, amplitude=1.0) -> ControlField:
        return ControlField(self.T, rng.uniform(-amplitude, amplitude, self.M))


def objective(problem: LandscapeProblem, control: ControlField) -> float:
    psi_t = final_state(problem.system, control, problem.psi0)
    return float(abs(np.vdot(problem.psif, psi_t)) ** 2)


def infidelity(problem: LandscapeProblem, control: ControlField) -> float:
    """``1 - J`` evaluated from the component orthogonal to ``psif`` (no cancellation near J = 1)."""
    psi_t = final_state(problem.system, control, problem.psi0)
    perp = psi_t - np.vdot(problem.psif, psi_t) * problem.psif
    return float(np.vdot(perp, perp).real / np.vdot(psi_t, psi_t).real)


def kinematic_gradient(psi_t, psif) -> np.ndarray:
    """Gradient of ``F(psi) = |psif^H psi|^2`` for the real inner product."""
    psif = np.asarray(psif, dtype=complex)
    return 2 * np.vdot(psif, psi_t) * psif


def projected_kinematic_gradient(psi_t, psif) -> np.ndarray:
    """Kinematic gradient with the ``psi_t`` and ``1j psi_t`` directions removed."""
    g = kinematic_gradient(psi_t, psif)
    return g - np.vdot(psi_t, g) * psi_t


def _costate_path(problem, control):
    """Midpoint states, costates and averaged couplings for a piecewise-constant control."""
    nodes, mids, coupling = sweep(problem.system, control)
    psi_t = nodes[-1] @ problem.psi0
    phi_t = kinematic_gradient(psi_t, problem.psif)
    states = mids @ problem.psi0
    costates = mids @ (nodes[-1].conj().T @ phi_t)
    return states, costates, coupling, nodes, psi_t


def gradient(problem: LandscapeProblem, control: ControlField) -> np.ndarray:
    """``dJ/d eps_j``: grad F(psi(T)) paired with the state-map derivative columns."""
    nodes, mids, coupling = sweep(problem.system, control)
    x = mids.conj().transpose(0, 2, 1) @ coupling @ mids
    u_t = nodes[-1]
    lam = u_t.conj().T @ kinematic_gradient(u_t @ problem.psi0, problem.psif)
    return np.real(np.einsum("i,tij,j->t", lam.conj(), x, problem.psi0)) * control.dt


def pmp_residual(problem: LandscapeProblem, control) -> np.ndarray:
    """Switching function ``<phi(t), a1 psi(t)>`` with ``phi(T) = grad F(psi(T))``.

    For a :class:`ControlField` it is sampled at interval midpoints with the
    interval-averaged coupling, so ``pmp_residual * dt`` equals :func:`gradient`.
    For a :class:`SingularExtremal` it is sampled at the nodes of its own
    trajectory.
    """
    if isinstance(control, SingularExtremal):
        u = control.trajectory.propagators
        psi = control.trajectory.states
        phi_t = kinematic_gradient(psi[-1], problem.psif)
        phi = u @ (u[-1].conj().T @ phi_t)
        return np.real(np.einsum("ti,ti->t", phi.conj(), psi @ problem.system.a1.T))
    states, costates, coupling, _, _ = _costate_path(problem, control)
    return np.real(np.einsum("ti,tij,tj->t", costates.conj(), coupling, states))


def functional_gradient_norm(problem, control) -> float:
    """L2 norm of ``dJ/d eps(t)`` over ``[0, T]``."""
    s = pmp_residual(problem, control)
    if isinstance(control, SingularExtremal):
        return float(np.sqrt(np.trapezoid(s ** 2, control.trajectory.times)))
    return float(np.sqrt(np.sum(s ** 2) * control.dt))


@dataclass
class AscentRecord:
    iterations: list = field(default_factory=list)
    J: list = field(default_factory=list)
    grad_sup: list = field(default_factory=list)
    step: list = field(default_factory=list)
    distance_to_reference: list | None = None
    final_control: ControlField | None = None
    converged: bool = False
    reason: str = ""

    @property
    def final_J(self):
        return self.J[-1]

    def rows(self):
        for i, it in enumerate(self.iterations):
            row = [it, self.J[i], self.grad_sup[i], self.step[i]]
            if self.distance_to_reference is not None:
                row.append(self.distance_to_reference[i])
            yield row


def steepest_ascent(problem: LandscapeProblem, control0: ControlField, max_iters=10000,
                    step0=1.0, backtrack=0.5, growth=2.0, grad_tol=GRAD_TOL, j_tol=J_TOL,
                    max_sup_step=1.0, min_step=1e-14, reference=None,
                    step_rule="growth") -> AscentRecord:
    """Backtracking steepest ascent on the control samples.

    The search direction is the functional gradient ``g / dt``.  A trial
    step ``alpha`` is halved (``backtrack``) until ``J`` increases and is
    multiplied by ``growth`` after each accepted step; with
    ``step_rule="bb"`` the first trial is the Barzilai-Borwein step of the
    last two iterates instead.  Every update is capped at ``max_sup_step`` in
    sup norm and only improving steps are accepted.  Stops when ``J >= 1 - j_tol``, when the
    sup norm of the functional gradient drops to ``grad_tol``, or after
    ``max_iters`` accepted steps.
    """
    ref = None
    if reference is not None:
        ref = reference.control.samples if isinstance(reference, SingularExtremal) \
            else np.asarray(getattr(reference, "samples", reference), dtype=float)
    rec = AscentRecord(distance_to_reference=[] if ref is not None else None)
    eps = np.array(control0.samples, dtype=float)
    dt = control0.dt
    # J is tracked as 1 - infidelity, which stays exact where |psif^H psi|^2 rounds to 1
    loss = infidelity(problem, control0)
    alpha = step0

    def log(it, J, gsup, a):
        rec.iterations.append(it)
        rec.J.append(J)
        rec.grad_sup.append(gsup)
        rec.step.append(a)
        if ref is not None:
            rec.distance_to_reference.append(float(np.max(np.abs(eps - ref))))

    if step_rule not in ("growth", "bb"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    prev = None
    for it in range(max_iters + 1):
        d = gradient(problem, control0.with_samples(eps)) / dt
        gsup = float(np.max(np.abs(d)))
        if step_rule == "bb" and prev is not None:
            s_k, y_k = eps - prev[0], prev[1] - d
            sy = float(s_k @ y_k)
            if sy > 0:
                alpha = float(s_k @ s_k) / sy
        prev = (eps, d)
        log(it, 1.0 - loss, gsup, alpha if it else 0.0)
        if loss <= j_tol:
            rec.converged, rec.reason = True, "objective"
            break
        if gsup <= grad_tol:
            rec.converged, rec.reason = True, "gradient"
            break
        if it == max_iters:
            rec.reason = "max_iters"
            break
        alpha = min(alpha, max_sup_step / gsup)
        while True:
            trial = eps + alpha * d
            loss_new = infidelity(problem, control0.with_samples(trial))
            if loss_new < loss:
                break
            alpha *= backtrack
            if alpha < min_step:
                rec.final_control = control0.with_samples(eps)
                raise LineSearchError(
                    f"no ascent at iteration {it} (J = {1 - loss:.15g}, smallest step {alpha:.3g})",
                    alpha, rec.final_control, rec)
        eps, loss = trial, loss_new
        if step_rule == "growth":
            alpha *= growth
    rec.final_control = control0.with_samples(eps)
    return rec


@dataclass(frozen=True)
class CriticalPointReport:
    grad_norm: float
    kinematic_grad_norm: float
    corank_state: int
    classification: str
    J: float
    tolerances: dict
    hessian_extremes: tuple | None = None

    @property
    def critical(self):
        return self.classification != "NotCritical"

    def to_dict(self):
        d = {
            "classification": self.classification,
            "grad_norm": self.grad_norm,
            "kinematic_grad_norm": self.kinematic_grad_norm,
            "corank_state": self.corank_state,
            "J": self.J,
            "tolerances": dict(self.tolerances),
        }
        if self.hessian_extremes is not None:
            d["hessian_extremes"] = list(self.hessian_extremes)
        return d


def classify_values(grad_norm, kinematic_grad_norm, corank, crit_tol=CRIT_TOL, kin_tol=KIN_TOL):
    if grad_norm > crit_tol:
        return "NotCritical"
    if kinematic_grad_norm > kin_tol:
        return "Nonkinematic"
    return "SingularKinematic" if corank >= 1 else "RegularKinematic"


def classify(problem: LandscapeProblem, control, crit_tol=CRIT_TOL, kin_tol=KIN_TOL,
             threshold_rel=RANK_THRESHOLD_REL, hessian=False, fd_step=1e-4) -> CriticalPointReport:
    """Regular/singular kinematic, nonkinematic or not critical.

    The kinematic test uses the gradient of ``F`` with the ``psi(T)`` and
    ``1j psi(T)`` directions projected out (criticality on the sphere modulo
    global phase).
    """
    if isinstance(control, SingularExtremal):
        psi_t = control.trajectory.final_state
    else:
        psi_t = final_state(problem.system, control, problem.psi0)
    gnorm = functional_gradient_norm(problem, control)
    knorm = float(np.linalg.norm(projected_kinematic_gradient(psi_t, problem.psif)))
    corank = corank_state(problem.system, control, problem.psi0, threshold_rel).corank
    label = classify_values(gnorm, knorm, corank, crit_tol, kin_tol)
    extremes = None
    if hessian:
        field_ = control.control if isinstance(control, SingularExtremal) else control
        ev = hessian_spectrum(problem, field_, fd_step)
        extremes = (float(ev[0]), float(ev[-1]))
    tols = {"crit_tol": crit_tol, "kin_tol": kin_tol, "threshold_rel": threshold_rel}
    return CriticalPointReport(gnorm, knorm, corank, label,
                               float(abs(np.vdot(problem.psif, psi_t)) ** 2), tols, extremes)


def hessian_matrix(problem: LandscapeProblem, control: ControlField, fd_step=1e-4, force=False):
    """Symmetrized ``d^2 J / d eps_i d eps_j`` from central differences of the gradient."""
    m = control.n_samples
    if m > HESSIAN_MAX_M and not force:
        raise ValueError(f"M = {m} exceeds {HESSIAN_MAX_M}; pass force=True to build the Hessian")
    eps = control.samples
    hess = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = fd_step
        gp = gradient(problem, control.with_samples(eps + e))
        gm = gradient(problem, control.with_samples(eps - e))
        hess[:, j] = (gp - gm) / (2 * fd_step)
    return 0.5 * (hess + hess.T)


def hessian_spectrum(problem: LandscapeProblem, control: ControlField, fd_step=1e-4,
                     force=False) -> np.ndarray:
    """Ascending eigenvalues of :func:`hessian_matrix`."""
    return np.linalg.eigvalsh(hessian_matrix(problem, control, fd_step, force))


@dataclass
class TrapTrial:
    index: int
    record: AscentRecord
    initial_distance: float
    final_distance: float
    stalled: bool

    @property
    def final_J(self):
        return self.record.final_J


@dataclass
class TrapReport:
    trials: list
    radius: float
    threshold: float = 0.99

    @property
    def active(self):
        return [t for t in self.trials if not t.stalled]

    @property
    def fraction_reached(self):
        act = self.active
        if not act:
            return float("nan")
        return sum(t.final_J >= self.threshold for t in act) / len(act)

    @property
    def min_final_J(self):
        return min(t.final_J for t in self.trials)

    def to_dict(self):
        return {
            "radius": self.radius,
            "threshold": self.threshold,
            "n_trials": len(self.trials),
            "n_stalled": sum(t.stalled for t in self.trials),
            # null when every trial stalled
            "fraction_reached": None if not self.active else self.fraction_reached,
            "min_final_J": self.min_final_J,
            "trials": [{
                "index": t.index,
                "final_J": t.final_J,
                "iterations": t.record.iterations[-1],
                "converged": t.record.converged,
                "reason": t.record.reason,
                "initial_distance": t.initial_distance,
                "final_distance": t.final_distance,
                "stalled": t.stalled,
            } for t in self.trials],
        }


def trap_experiment(problem: LandscapeProblem, extremal, radius=0.01, n_trials=2, rng_seed=0,
                    **ascent_options) -> TrapReport:
    """Start steepest ascent from random sup-norm perturbations of a singular control.

    Perturbations are uniform per sample on ``[-radius, radius]``.  A trial
    is flagged as stalled and excluded from the fraction when its start is
    not a perturbation (``radius == 0``; no ascent is run) or when its
    starting gradient is already below the ascent's ``grad_tol``.
    """
    ref = extremal.control if isinstance(extremal, SingularExtremal) else extremal
    if ref.n_samples != problem.M or abs(ref.duration - problem.T) > 1e-12:
        raise ValueError("singular control grid does not match the problem grid")
    if isinstance(extremal, SingularExtremal) and np.linalg.norm(extremal.psi0 - problem.psi0) > 1e-8:
        raise ValueError("extremal starts from a different initial state than the problem")
    rng = np.random.default_rng(rng_seed)
    grad_tol = ascent_options.get("grad_tol", GRAD_TOL)
    trials = []
    for i in range(n_trials):
        start = ref.with_samples(ref.samples + radius * rng.uniform(-1, 1, ref.n_samples))
        if radius == 0:
            opts = dict(ascent_options, max_iters=0)
            rec = steepest_ascent(problem, start, reference=ref, **opts)
            stalled = True
        else:
            rec = steepest_ascent(problem, start, reference=ref, **ascent_options)
            stalled = rec.grad_sup[0] <= grad_tol
        trial = TrapTrial(i, rec, rec.distance_to_reference[0], rec.distance_to_reference[-1], stalled)
        if not stalled and trial.final_J < 0.99:
            logger.warning("trial %d ended at J = %.6f (%s)", i, trial.final_J, rec.reason)
        trials.append(trial)
    return TrapReport(trials, radius)
