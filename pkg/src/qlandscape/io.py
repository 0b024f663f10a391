"""Run configuration (JSON) and the CSV/JSON artifacts written by the CLI.

Complex numbers are ``[re, im]`` pairs; matrices are row-major nested lists
of pairs.  Time series are CSV with 17 significant digits.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import ControlField
from .landscape import LandscapeProblem
from .quantum_core import QuantumSystem, is_hermitian, is_skew_hermitian

FLOAT_FMT = "%.17g"


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def example_config_path() -> Path:
    return Path(resources.files("qlandscape") / "data" / "four_level.json")


def _complex_array(value, path, ndim):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected numbers in [re, im] pairs") from None
    if arr.ndim != ndim + 1 or arr.shape[-1] != 2:
        raise ConfigError(path, f"expected a {'matrix' if ndim == 2 else 'vector'} of [re, im] pairs, "
                                f"got array of shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def complex_to_pairs(z):
    z = np.asarray(z)
    if z.ndim == 0:
        return [float(z.real), float(z.imag)]
    return [complex_to_pairs(v) for v in z]


def _get(d, key, path):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing field")
    return d[key]


@dataclass
class RunConfig:
    problem: LandscapeProblem
    options: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    @property
    def system(self) -> QuantumSystem:
        return self.problem.system

    def option(self, name, default=None):
        return self.options.get(name, default)


def parse_config(data: dict) -> RunConfig:
    sys_d = _get(data, "system", "")
    dim = _get(sys_d, "dimension", "system")
    if not isinstance(dim, int) or dim < 2:
        raise ConfigError("system.dimension", "must be an integer >= 2")
    convention = sys_d.get("input_convention", "hermitian")
    if convention not in ("hermitian", "skew"):
        raise ConfigError("system.input_convention", "must be 'hermitian' or 'skew'")
    mats = {}
    for key in ("H0", "H1"):
        path = f"system.{key}"
        m = _complex_array(_get(sys_d, key, "system"), path, 2)
        if m.shape != (dim, dim):
            raise ConfigError(path, f"shape {m.shape} does not match dimension {dim}")
        if convention == "hermitian":
            if not is_hermitian(m):
                raise ConfigError(path, "matrix is not Hermitian")
            m = -1j * m
        elif not is_skew_hermitian(m):
            raise ConfigError(path, "matrix is not skew-Hermitian")
        mats[key] = m
    system = QuantumSystem(mats["H0"], mats["H1"])

    prob_d = _get(data, "problem", "")
    vecs = {}
    for key in ("psi0", "psif"):
        path = f"problem.{key}"
        v = _complex_array(_get(prob_d, key, "problem"), path, 1)
        if v.shape != (dim,):
            raise ConfigError(path, f"length {v.shape[0]} does not match dimension {dim}")
        if abs(np.linalg.norm(v) - 1) > 1e-10:
            raise ConfigError(path, "state is not normalized")
        vecs[key] = v
    T = prob_d.get("T", 10.0)
    M = prob_d.get("M", 256)
    if not isinstance(T, (int, float)) or not T > 0:
        raise ConfigError("problem.T", "must be a positive number")
    if not isinstance(M, int) or M < 1:
        raise ConfigError("problem.M", "must be a positive integer")
    problem = LandscapeProblem(system, vecs["psi0"], vecs["psif"], float(T), M)
    options = data.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options", "must be an object")
    return RunConfig(problem, dict(options), data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON ({exc})") from None
    return parse_config(data)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_control(path, control: ControlField):
    write_csv(path, ["t", "epsilon"], zip(control.midpoints, control.samples))


def read_control(path) -> ControlField:
    """Read a ``t,epsilon`` CSV with ``t`` at interval midpoints."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t", "epsilon"]:
        raise ConfigError(str(path), "control CSV must have header 't,epsilon'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError:
        raise ConfigError(str(path), "non-numeric entry in control CSV") from None
    if data.size == 0:
        raise ConfigError(str(path), "control CSV has no samples")
    t, eps = data[:, 0], data[:, 1]
    duration = float(t[0] + t[-1])
    m = t.size
    expected = (np.arange(m) + 0.5) * duration / m
    if not np.allclose(t, expected, rtol=0, atol=1e-9 * max(duration, 1.0)):
        raise ConfigError(str(path), "times are not the midpoints of a uniform grid")
    return ControlField(duration, eps)
