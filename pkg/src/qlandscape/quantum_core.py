"""Linear algebra primitives for single-input bilinear Schrödinger systems.

Generators are stored skew-Hermitian: the dynamics read
``dpsi/dt = (a0 + eps(t) * a1) psi``.  Physical Hamiltonians are usually
given Hermitian; :func:`hermitian_to_generator` maps ``h -> -1j * h`` and
:meth:`QuantumSystem.from_hermitian` applies it to both operators.  Every
bracket formula in this package is written in terms of ``a0`` and ``a1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SKEW_TOL = 1e-12
#: relative singular-value threshold shared by every numerical rank decision
RANK_THRESHOLD_REL = 1e-8


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def is_skew_hermitian(a, tol=SKEW_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(a + a.conj().T), initial=0.0) <= tol)


def is_hermitian(a, tol=SKEW_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


@dataclass(frozen=True, eq=False)
class QuantumSystem:
    """Drift ``a0`` and control ``a1`` generators (both skew-Hermitian)."""

    a0: np.ndarray
    a1: np.ndarray

    def __post_init__(self):
        a0 = _as_matrix(self.a0, "a0")
        a1 = _as_matrix(self.a1, "a1")
        if a0.shape != a1.shape:
            raise DimensionError(f"a0 {a0.shape} and a1 {a1.shape} differ in shape")
        if a0.shape[0] < 2:
            raise DimensionError("dimension must be at least 2")
        for name, a in (("a0", a0), ("a1", a1)):
            if not is_skew_hermitian(a):
                raise ValueError(f"{name} is not skew-Hermitian within {SKEW_TOL:g}")
            a.setflags(write=False)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a1", a1)

    @property
    def dim(self) -> int:
        return self.a0.shape[0]

    @classmethod
    def from_hermitian(cls, h0, h1) -> "QuantumSystem":
        return cls(hermitian_to_generator(h0), hermitian_to_generator(h1))

    def generator(self, eps: float) -> np.ndarray:
        return self.a0 + eps * self.a1


def hermitian_to_generator(h) -> np.ndarray:
    """Return ``-1j * h`` after checking that ``h`` is Hermitian."""
    h = _as_matrix(h, "h")
    if not is_hermitian(h):
        raise ValueError(f"matrix is not Hermitian within {SKEW_TOL:g}")
    return -1j * h


def real_inner(v, w) -> float:
    """Real inner product ``Re(v^H w)`` on C^N."""
    v = np.asarray(v)
    w = np.asarray(w)
    if v.shape != w.shape:
        raise DimensionError(f"length mismatch: {v.shape} vs {w.shape}")
    return float(np.real(np.vdot(v, w)))


def commutator(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"commutator needs equal square shapes, got {a.shape}, {b.shape}")
    return a @ b - b @ a


def nested_commutator(system: QuantumSystem, indices) -> np.ndarray:
    """Right-nested bracket ``[A_i1, [A_i2, ..., [A_i(k-1), A_ik]...]]``.

    ``indices`` is a sequence over {0, 1} selecting ``a0`` or ``a1``; a single
    index returns that generator itself.
    """
    indices = tuple(indices)
    if not indices:
        raise ValueError("index sequence must be non-empty")
    gens = (system.a0, system.a1)
    try:
        out = gens[indices[-1]]
        for i in reversed(indices[:-1]):
            out = commutator(gens[i], out)
    except (IndexError, TypeError):
        raise ValueError(f"indices must be 0 or 1, got {indices}") from None
    return out


def real_vec(v) -> np.ndarray:
    """Stack real and imaginary parts so that ``real_inner`` becomes a dot product."""
    v = np.asarray(v)
    return np.concatenate([v.real.ravel(), v.imag.ravel()])


def complex_vec(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def numerical_rank(singular_values, threshold_rel=RANK_THRESHOLD_REL, scale=None) -> int:
    """Count singular values above ``threshold_rel * max(sigma_max, scale)``."""
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        return 0
    ref = s.max() if scale is None else max(s.max(), scale)
    if ref == 0.0:
        return 0
    return int(np.sum(s > threshold_rel * ref))


def bracket_space_basis(system: QuantumSystem, level: int, threshold_rel=RANK_THRESHOLD_REL):
    """Real-orthonormal basis (Frobenius) of the span of all level-``level`` brackets.

    Level 1 is ``span{a1}``; level ``l >= 2`` spans ``H_{a1...al}`` over all
    index tuples in {0,1}^l.  The returned matrices are real combinations of
    skew-Hermitian brackets, hence skew-Hermitian themselves.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    if level == 1:
        candidates = [system.a1]
    else:
        candidates = [nested_commutator(system, idx)
                      for idx in itertools.product((0, 1), repeat=level)]
    rows = np.array([real_vec(c) for c in candidates])
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    # brackets that cancel exactly leave rounding noise of the generators' scale
    scale = max(np.linalg.norm(system.a0), np.linalg.norm(system.a1)) ** level
    r = numerical_rank(s, threshold_rel, scale=scale)
    n = system.dim
    return [complex_vec(vt[i]).reshape(n, n) for i in range(r)]


def tangent_project(base, v) -> np.ndarray:
    """Remove the radial component of ``v`` at the unit vector ``base``."""
    base = np.asarray(base, dtype=complex)
    v = np.asarray(v, dtype=complex)
    return v - real_inner(base, v) * base


def is_tangent(base, v, tol=1e-10) -> bool:
    return abs(real_inner(base, v)) <= tol


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / nrm


def random_state(dim: int, rng) -> np.ndarray:
    """Uniform draw from the unit sphere of C^dim."""
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_hermitian(dim: int, rng, scale=1.0) -> np.ndarray:
    x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (x + x.conj().T) / 2


def random_system(dim: int, rng, scale=1.0) -> QuantumSystem:
    return QuantumSystem.from_hermitian(random_hermitian(dim, rng, scale),
                                        random_hermitian(dim, rng, scale))


# Four-level example: diagonal drift, dense control coupling.
FOUR_LEVEL_H0 = np.diag([-0.50, 0.00, 0.20, 0.60]).astype(complex)
FOUR_LEVEL_H1 = np.array([
    [0.30, 0.75 - 0.20j, 0.65, 0.40],
    [0.75 + 0.20j, 0.70, 0.70 - 0.50j, 0.20 + 0.30j],
    [0.65, 0.70 + 0.50j, 0.30, 0.50],
    [0.40, 0.20 - 0.30j, 0.50, 0.60],
])


def four_level_system() -> QuantumSystem:
    return QuantumSystem.from_hermitian(FOUR_LEVEL_H0, FOUR_LEVEL_H1)


def basis_state(dim: int, index: int) -> np.ndarray:
    e = np.zeros(dim, dtype=complex)
    e[index] = 1.0
    return e
