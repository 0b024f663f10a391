"""Command-line front end.

Subcommands: simulate, corank, singular-gen, ascend, classify and
experiment-fig3.  Every command reads a JSON run configuration (the shipped
four-level example by default) and writes CSV time series or JSON reports
into ``--out``.

Exit codes: 0 success, 1 I/O failure, 2 configuration or usage error,
3 no seed found, 4 singular-arc transition, 5 line-search failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .dynamics import ControlField, propagate
from .io import (ConfigError, complex_to_pairs, example_config_path, load_config, read_control,
                 write_control, write_csv, write_json)
from .landscape import (CRIT_TOL, GRAD_TOL, J_TOL, KIN_TOL, LineSearchError, classify,
                        steepest_ascent, trap_experiment)
from .quantum_core import RANK_THRESHOLD_REL
from .singularity import (K_MAX, NoSeedFound, NotOnSurface, OrderCapError, SeedPair,
                          SingularArcTransition, UnderResolvedError,
                          backward_singular_from_surface, corank_propagator, corank_state,
                          find_singular_extremals, generate_singular_extremal,
                          sample_seed_pair, sample_surface_point)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NO_SEED, EXIT_ARC, EXIT_LINE_SEARCH = 0, 1, 2, 3, 4, 5

TOLERANCES = {
    "crit_tol": CRIT_TOL,
    "kin_tol": KIN_TOL,
    "j_tol": J_TOL,
    "grad_tol": GRAD_TOL,
    "threshold_rel": RANK_THRESHOLD_REL,
}


# -- run settings --------------------------------------------------------------

@dataclasses.dataclass
class Settings:
    problem: object
    options: dict
    out: Path
    rng_seed: int

    def tol(self, name):
        return float(self.options.get(name, TOLERANCES[name]))


def _settings(args) -> Settings:
    cfg = load_config(args.config)
    problem = cfg.problem
    if args.grid_m is not None:
        if args.grid_m < 1:
            raise ConfigError("--grid-m", "must be a positive integer")
        problem = dataclasses.replace(problem, M=args.grid_m)
    options = dict(cfg.options)
    for name in TOLERANCES:
        value = getattr(args, name)
        if value is not None:
            options[name] = value
    for name in TOLERANCES:
        tol = options.get(name, TOLERANCES[name])
        if not isinstance(tol, (int, float)) or tol < 0:
            raise ConfigError(f"options.{name}", "must be a non-negative number")
    seed = args.rng_seed if args.rng_seed is not None else options.get("rng_seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("options.rng_seed", "must be a non-negative integer")
    return Settings(problem, options, Path(args.out), seed)


def _ascent_options(st: Settings, args=None):
    max_iters = getattr(args, "max_iters", None) or st.options.get("max_iters", 10000)
    step_rule = getattr(args, "step_rule", None) or st.options.get("step_rule", "growth")
    if step_rule not in ("growth", "bb"):
        raise ConfigError("options.step_rule", "must be 'growth' or 'bb'")
    return {"max_iters": int(max_iters), "grad_tol": st.tol("grad_tol"),
            "j_tol": st.tol("j_tol"), "step_rule": step_rule}


# -- extremal bundles ----------------------------------------------------------

def _write_bundle(path: Path, extremal, meta: dict):
    write_control(path / "control.csv", extremal.control)
    r = extremal.residuals
    write_csv(path / "residuals.csv", ["t", "r1", "r2", "r3", "rk"],
              zip(r.times, r.r1, r.r2, r.r3, r.rk))
    seed = dict(meta)
    seed.update(extremal.seed.to_dict())
    seed.update({"T": extremal.control.duration, "M": extremal.control.n_samples,
                 "max_residual": extremal.max_residual()})
    write_json(path / "seed.json", seed)


def load_bundle(path, problem):
    """Regenerate the singular extremal stored in a bundle directory."""
    path = Path(path)
    try:
        meta = json.loads((path / "seed.json").read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "bundle has no seed.json") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path / "seed.json"), f"invalid JSON ({exc})") from None
    try:
        T, M = float(meta["T"]), int(meta["M"])
        if meta.get("direction", "forward") == "backward":
            psiT = np.array([complex(a, b) for a, b in meta["psiT"]])
            return backward_singular_from_surface(problem.system, psiT, problem.psif,
                                                  int(meta["order"]), T, M)
        return generate_singular_extremal(problem.system, SeedPair.from_dict(meta), T, M)
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(path / "seed.json"), f"missing or malformed field {exc}") from None


def _problem_for(problem, extremal):
    """The landscape problem on the extremal's own grid and initial state."""
    c = extremal.control
    return dataclasses.replace(problem, psi0=extremal.psi0, T=c.duration, M=c.n_samples)


def _resolve_control(spec, st: Settings):
    """Parse ``--control``: a CSV file, a bundle directory, ``zero``,
    ``random`` or ``constant:<value>``.  Returns ``(problem, control)`` where
    ``control`` is a ControlField or a SingularExtremal."""
    problem = st.problem
    if spec in (None, "zero"):
        return problem, problem.zero_control()
    if spec == "random":
        return problem, problem.random_control(np.random.default_rng(st.rng_seed))
    if spec.startswith("constant:"):
        try:
            value = float(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError("--control", f"bad constant value in {spec!r}") from None
        return problem, ControlField.constant(value, problem.T, problem.M)
    path = Path(spec)
    if path.is_dir():
        extremal = load_bundle(path, problem)
        return _problem_for(problem, extremal), extremal
    if not path.exists():
        raise ConfigError("--control", f"no such file or bundle: {spec}")
    control = read_control(path)
    return dataclasses.replace(problem, T=control.duration, M=control.n_samples), control


# -- commands -----------------------------------------------------------------

def cmd_simulate(args, st: Settings):
    problem, control = _resolve_control(args.control, st)
    if not isinstance(control, ControlField):
        control = control.control
    traj = propagate(problem.system, control, problem.psi0)
    n = problem.system.dim
    header = ["t"] + [f"re_psi{i}" for i in range(n)] + [f"im_psi{i}" for i in range(n)] + ["J"]
    J = np.abs(traj.states @ problem.psif.conj()) ** 2
    rows = (list(np.concatenate([[t], s.real, s.imag, [j]]))
            for t, s, j in zip(traj.times, traj.states, J))
    write_csv(st.out / "trajectory.csv", header, rows)
    write_control(st.out / "control.csv", control)
    return {"J_final": float(J[-1]), "unitarity_error": traj.unitarity_error()}


def cmd_corank(args, st: Settings):
    problem, control = _resolve_control(args.control, st)
    thr = st.tol("threshold_rel")
    if args.map == "state":
        rep = corank_state(problem.system, control, problem.psi0, thr)
    else:
        rep = corank_propagator(problem.system, control, thr)
    out = rep.to_dict()
    write_json(st.out / "corank.json", out)
    return {"map": args.map, "rank": rep.rank, "corank": rep.corank}


def cmd_singular_gen(args, st: Settings):
    k = args.order if args.order is not None else st.options.get("order", 2)
    if not isinstance(k, int) or not 1 <= k <= K_MAX:
        raise OrderCapError(f"order {k} outside the supported range 1..{K_MAX}")
    seed_s = args.seed if args.seed is not None else st.rng_seed
    problem = st.problem
    if args.from_surface:
        psiT = sample_surface_point(problem.system, problem.psif, k, rng_seed=seed_s)
        extremal = backward_singular_from_surface(problem.system, psiT, problem.psif, k,
                                                  problem.T, problem.M)
        meta = {"direction": "backward", "rng_seed": seed_s, "psiT": complex_to_pairs(psiT)}
    else:
        psi0 = None if args.random_psi0 else problem.psi0
        seed = sample_seed_pair(problem.system, k, seed_s, psi0=psi0)
        extremal = generate_singular_extremal(problem.system, seed, problem.T, problem.M)
        meta = {"direction": "forward", "rng_seed": seed_s}
    _write_bundle(st.out, extremal, meta)
    return {"order": k, "rng_seed": seed_s, "max_residual": extremal.max_residual()}


def _start_control(spec, st: Settings):
    """``random``, a control CSV, or ``perturbed:<bundle>:<radius>``.
    Returns ``(problem, start, reference)``."""
    problem = st.problem
    rng = np.random.default_rng(st.rng_seed)
    if spec == "random":
        return problem, problem.random_control(rng), None
    if spec.startswith("perturbed:"):
        body = spec[len("perturbed:"):]
        bundle, _, radius_s = body.rpartition(":")
        try:
            radius = float(radius_s)
        except ValueError:
            raise ConfigError("--start", f"bad radius in {spec!r}") from None
        if not bundle or radius < 0:
            raise ConfigError("--start", "expected perturbed:<bundle>:<radius> with radius >= 0")
        extremal = load_bundle(bundle, problem)
        ref = extremal.control
        start = ref.with_samples(ref.samples + radius * rng.uniform(-1, 1, ref.n_samples))
        return _problem_for(problem, extremal), start, ref
    path = Path(spec)
    if not path.is_file():
        raise ConfigError("--start", f"no such control file: {spec}")
    control = read_control(path)
    return dataclasses.replace(problem, T=control.duration, M=control.n_samples), control, None


def _ascent_header(with_ref):
    return ["iteration", "J", "grad_sup", "step"] + (["distance_to_reference"] if with_ref else [])


def cmd_ascend(args, st: Settings):
    problem, start, ref = _start_control(args.start, st)
    opts = _ascent_options(st, args)
    try:
        rec = steepest_ascent(problem, start, reference=ref, **opts)
    except LineSearchError as exc:
        if exc.record is not None:
            write_csv(st.out / "ascent.csv", _ascent_header(ref is not None), exc.record.rows())
        write_control(st.out / "final_control.csv", exc.control)
        raise
    write_csv(st.out / "ascent.csv", _ascent_header(ref is not None), rec.rows())
    write_control(st.out / "final_control.csv", rec.final_control)
    return {"final_J": rec.final_J, "iterations": rec.iterations[-1], "reason": rec.reason}


def cmd_classify(args, st: Settings):
    problem, control = _resolve_control(args.control, st)
    rep = classify(problem, control, st.tol("crit_tol"), st.tol("kin_tol"),
                   st.tol("threshold_rel"), hessian=args.hessian)
    write_json(st.out / "classification.json", rep.to_dict())
    return {"classification": rep.classification, "grad_norm": rep.grad_norm}


def cmd_experiment_fig3(args, st: Settings):
    problem = st.problem
    opts = _ascent_options(st, args)
    radius = args.radius if args.radius is not None else st.options.get("radius", 0.01)
    n_ext = args.n_extremals
    n_trials = args.n_trials if args.n_trials is not None else st.options.get("n_trials", 1)
    k = st.options.get("order", 2)

    stage = "singular-generation"
    try:
        found = find_singular_extremals(problem.system, n_ext, problem.T, problem.M, k=k,
                                        psi0=problem.psi0, start_seed=st.rng_seed)
        stage = "ascent"
        summary_trials, finals, reached, n_active = [], [], 0, 0
        for e_idx, (seed_s, extremal) in enumerate(found):
            _write_bundle(st.out / f"extremal_{e_idx}", extremal,
                          {"direction": "forward", "rng_seed": seed_s})
            report = trap_experiment(problem, extremal, radius=radius, n_trials=n_trials,
                                     rng_seed=st.rng_seed + e_idx, **opts)
            for trial in report.trials:
                tag = f"trial_{e_idx}_{trial.index}"
                write_csv(st.out / f"{tag}_ascent.csv", _ascent_header(True), trial.record.rows())
                write_control(st.out / f"{tag}_final_control.csv", trial.record.final_control)
                finals.append(trial.final_J)
                if not trial.stalled:
                    n_active += 1
                    reached += trial.final_J >= 0.99
            for d in report.to_dict()["trials"]:
                summary_trials.append(dict(d, extremal=e_idx, seed=seed_s))
    except (NoSeedFound, SingularArcTransition, LineSearchError) as exc:
        exc.stage = stage
        raise
    summary = {
        "rng_seed": st.rng_seed,
        "radius": radius,
        "n_extremals": n_ext,
        "n_trials_per_extremal": n_trials,
        "fraction_reached": reached / n_active if n_active else None,
        "min_final_J": min(finals),
        "n_stalled": len(finals) - n_active,
        "ascent": opts,
        "trials": summary_trials,
    }
    write_json(st.out / "summary.json", summary)
    return {"fraction_reached": summary["fraction_reached"], "min_final_J": summary["min_final_J"]}


# -- argument parsing ----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=str(example_config_path()),
                        help="run configuration JSON (default: shipped four-level example)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--rng-seed", type=int, default=None)
    common.add_argument("--grid-m", type=int, default=None, help="number of control samples M")
    for name, default in TOLERANCES.items():
        common.add_argument("--" + name.replace("_", "-"), type=float, default=None,
                            help=f"default {default:g}")

    parser = argparse.ArgumentParser(prog="qlandscape", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="propagate and write the trajectory")
    p.add_argument("--control", default="zero",
                   help="control CSV, bundle directory, zero, random or constant:<value>")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("corank", parents=[common], help="corank of an end-point map")
    p.add_argument("--map", choices=("state", "propagator"), default="state")
    p.add_argument("--control", default="random",
                   help="control CSV, bundle directory, zero, random or constant:<value>")
    p.set_defaults(func=cmd_corank)

    p = sub.add_parser("singular-gen", parents=[common], help="generate a singular extremal bundle")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="seed-sampling rng seed")
    p.add_argument("--random-psi0", action="store_true",
                   help="draw psi0 at random instead of using the configured initial state")
    p.add_argument("--from-surface", action="store_true",
                   help="integrate backwards from a point of the singular surface")
    p.set_defaults(func=cmd_singular_gen)

    p = sub.add_parser("ascend", parents=[common], help="steepest ascent of J")
    p.add_argument("--start", default="random",
                   help="random, a control CSV, or perturbed:<bundle>:<radius>")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--step-rule", choices=("growth", "bb"), default=None)
    p.set_defaults(func=cmd_ascend)

    p = sub.add_parser("classify", parents=[common], help="critical-point classification")
    p.add_argument("--control", default="zero",
                   help="control CSV, bundle directory, zero, random or constant:<value>")
    p.add_argument("--hessian", action="store_true", help="also report Hessian extreme eigenvalues")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("experiment-fig3", parents=[common],
                       help="perturb singular extremals and ascend from them")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--n-extremals", type=int, default=2)
    p.add_argument("--n-trials", type=int, default=None, help="perturbations per extremal")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--step-rule", choices=("growth", "bb"), default=None)
    p.set_defaults(func=cmd_experiment_fig3)
    return parser


def _error(exc, code, extra=""):
    stage = getattr(exc, "stage", None)
    prefix = f"stage {stage}: " if stage else ""
    print(f"error: {prefix}{exc}{extra}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        st = _settings(args)
        summary = args.func(args, st)
    except UnderResolvedError as exc:
        return _error(exc, EXIT_CONFIG, f" (requires M >= {exc.required_m}; use --grid-m)")
    except (NoSeedFound, NotOnSurface) as exc:
        return _error(exc, EXIT_NO_SEED)
    except SingularArcTransition as exc:
        return _error(exc, EXIT_ARC)
    except LineSearchError as exc:
        return _error(exc, EXIT_LINE_SEARCH,
                      f"; last iterate saved to {Path(args.out) / 'final_control.csv'}")
    except (ConfigError, OrderCapError, ValueError) as exc:
        return _error(exc, EXIT_CONFIG)
    except OSError as exc:
        return _error(exc, EXIT_IO)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
