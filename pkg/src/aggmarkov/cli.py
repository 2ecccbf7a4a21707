"""Command-line interface: simulate, estimate, diagnose, experiment.

Exit codes: 0 success, 2 invalid flags, 3 invalid or unreadable input file,
4 infeasible observations, 5 non-convergence under --strict, 6 result file
lacks plans.  The AGGMARKOV_SEED environment variable supplies the seed when
--seed is not given (precedence: flag > environment > default 0).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import duality, experiments, fileio, simulate
from .errors import (
    AggmarkovError,
    FileFormatError,
    InfeasibleError,
    NotRankOneError,
)
from .estimator import EstimateStatus, EstimatorConfig, estimate, objective_value
from .model import TransitionMatrix

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_FILE = 3
EXIT_INFEASIBLE = 4
EXIT_NOT_CONVERGED = 5
EXIT_NO_PLANS = 6


def _resolve_seed(flag_value: int | None, fallback: int = 0) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get("AGGMARKOV_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(EXIT_USAGE)
    return fallback


def _parse_particles(text: str) -> float:
    if text.lower() == "inf":
        return math.inf
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid particle count {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("particle count must be at least 1")
    return float(value)


def _load_transition(spec: str, states: int) -> TransitionMatrix:
    if spec == "paper":
        return simulate.benchmark_matrix()
    if spec.startswith("random:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise FileFormatError(f"bad random transition spec {spec!r}")
        return simulate.random_stochastic_matrix(states, seed, strictly_positive=True)
    try:
        with open(spec) as handle:
            document = json.load(handle)
    except OSError as exc:
        raise FileFormatError(f"cannot read transition file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"transition file is not valid JSON: {exc}") from exc
    if isinstance(document, dict):
        document = document.get("transition")
    if not isinstance(document, list):
        raise FileFormatError("transition file must hold a matrix or a 'transition' field")
    try:
        return TransitionMatrix(np.array(document, dtype=float))
    except Exception as exc:
        raise FileFormatError(f"field transition is invalid: {exc}") from exc


def _cmd_simulate(args) -> int:
    try:
        transition = _load_transition(args.transition, args.states)
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    seed = _resolve_seed(args.seed)
    cfg = simulate.SimulationConfig(
        n=transition.n,
        n_particles=args.particles,
        n_pairs=args.pairs,
        mode=args.mode,
        seed=seed,
        initial_law=args.initial_law,
        burn_in=args.burn_in,
    )
    obs = simulate.sample_empirical_marginals(transition, cfg)
    meta = {
        "seed": seed,
        "mode": args.mode,
        "n_particles": "inf" if math.isinf(args.particles) else int(args.particles),
        "generator_version": fileio.GENERATOR_VERSION,
    }
    fileio.write_observations(args.out, obs, meta)
    print(f"wrote {obs.n_pairs} pairs over {obs.n} states to {args.out}")
    return EXIT_OK


def _parse_inner(text: str) -> int | None:
    if text == "full":
        return None
    if text.startswith("sweeps:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad inner mode {text!r}")
        if k < 1:
            raise argparse.ArgumentTypeError("sweep count must be at least 1")
        return k
    raise argparse.ArgumentTypeError(f"inner mode must be 'full' or 'sweeps:<k>', got {text!r}")


def _diagnostics_for(result, obs) -> dict:
    try:
        scalings = duality.extract_dual_scalings(result)
    except NotRankOneError:
        return {}
    certificate = duality.uniqueness_certificate(scalings, result)
    feasibility = duality.check_dual_feasibility(scalings)
    gap = duality.duality_gap(result, obs, scalings)
    return {
        "certified_unique": certificate.certified_unique,
        "rank_u": certificate.rank_u,
        "rank_v": certificate.rank_v,
        "max_dual_constraint": feasibility.max_constraint,
        "duality_gap": gap,
        "verdict": certificate.verdict,
        "inactive_set_size": len(certificate.inactive_set or ()),
    }


def _cmd_estimate(args) -> int:
    try:
        obs, _meta = fileio.read_observations(args.observations, normalize=not args.no_normalize)
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    cfg = EstimatorConfig(
        outer_tol=args.outer_tol,
        max_outer=args.max_outer,
        inner_sweeps=args.inner,
    )
    try:
        result = estimate(obs, cfg)
    except InfeasibleError as exc:
        print(f"error: infeasible observations: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    diagnostics = _diagnostics_for(result, obs)
    fileio.write_result(args.out, result, diagnostics, include_plans=args.emit_plans)
    objective = objective_value(result.plans, result.aggregate)
    certified = diagnostics.get("certified_unique")
    certified_text = "unavailable" if certified is None else str(bool(certified)).lower()
    print(
        f"status={result.status.value} outer_iterations={result.outer_iterations} "
        f"objective={objective!r} certified_unique={certified_text}"
    )
    if args.strict and result.status is not EstimateStatus.CONVERGED:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    try:
        doc = fileio.read_result(args.result)
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    if doc.plans is None:
        print("error: result file lacks plans; re-run estimate with --emit-plans", file=sys.stderr)
        return EXIT_NO_PLANS
    result = fileio.result_from_document(doc)
    try:
        scalings = duality.extract_dual_scalings(result)
    except NotRankOneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    certificate = duality.uniqueness_certificate(scalings, result)
    primal_cert = duality.primal_span_certificate(result)
    feasibility = duality.check_dual_feasibility(scalings)
    plans = np.array([p.entries for p in result.plans])
    mus = plans.sum(axis=2)
    nus = plans.sum(axis=1)
    primal = objective_value(result.plans, result.aggregate)
    gap = primal - duality.scalings_dual_value(scalings, mus, nus)
    report = {
        "rank_u": certificate.rank_u,
        "rank_v": certificate.rank_v,
        "primal_rank_u": primal_cert.rank_u,
        "primal_rank_v": primal_cert.rank_v,
        "inactive_set_size": len(certificate.inactive_set or ()),
        "max_dual_constraint": feasibility.max_constraint,
        "duality_gap": gap,
        "verdict": certificate.verdict,
    }
    if args.json:
        sys.stdout.write(fileio.canonical_dumps(report))
    else:
        print(f"dual ranks: u={report['rank_u']} v={report['rank_v']}")
        print(f"primal ranks: u={report['primal_rank_u']} v={report['primal_rank_v']}")
        print(f"inactive dual constraints: {report['inactive_set_size']}")
        print(f"max dual constraint: {report['max_dual_constraint']!r}")
        print(f"duality gap: {report['duality_gap']!r}")
        print(f"verdict: {report['verdict']}")
    return EXIT_OK


_ESTIMATOR_KEYS = {
    "outer_tol": float,
    "max_outer": int,
    "inner_sweeps": lambda v: None if v is None else int(v),
    "inner_tol": lambda v: None if v is None else float(v),
    "inner_tol_decay": float,
    "plateau_tol": float,
    "plateau_patience": int,
    "dual_residual_tol": lambda v: None if v is None else float(v),
    "inner_max_iter": int,
}


def _experiment_config(args) -> experiments.ExperimentConfig:
    overrides: dict = {}
    if args.config is not None:
        try:
            with open(args.config) as handle:
                document = json.load(handle)
        except OSError as exc:
            raise FileFormatError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise FileFormatError("config file must hold an object")
        known = {
            "n",
            "particle_counts",
            "tau_grid",
            "repeats",
            "seed",
            "tail_fraction",
            "initial_law",
            "estimator",
            "transition",
        }
        for key in document:
            if key not in known:
                raise FileFormatError(f"unknown config field {key}")
        if "particle_counts" in document:
            counts = []
            for v in document["particle_counts"]:
                counts.append(math.inf if v == "inf" else float(v))
            overrides["particle_counts"] = tuple(counts)
        if "tau_grid" in document:
            overrides["tau_grid"] = tuple(int(v) for v in document["tau_grid"])
        for key in ("n", "repeats", "seed"):
            if key in document:
                overrides[key] = int(document[key])
        if "tail_fraction" in document:
            overrides["tail_fraction"] = float(document["tail_fraction"])
        if "initial_law" in document:
            overrides["initial_law"] = str(document["initial_law"])
        if "transition" in document:
            try:
                overrides["transition"] = TransitionMatrix(
                    np.array(document["transition"], dtype=float)
                )
            except Exception as exc:
                raise FileFormatError(f"field transition is invalid: {exc}") from exc
        if "estimator" in document:
            est_doc = document["estimator"]
            if not isinstance(est_doc, dict):
                raise FileFormatError("field estimator must be an object")
            kwargs = {}
            for key, value in est_doc.items():
                if key not in _ESTIMATOR_KEYS:
                    raise FileFormatError(f"unknown config field estimator.{key}")
                kwargs[key] = _ESTIMATOR_KEYS[key](value)
            overrides["estimator"] = EstimatorConfig(**kwargs)
    seed = _resolve_seed(args.seed, fallback=overrides.pop("seed", 0))
    try:
        return experiments.default_experiment_config(args.mode, seed=seed, **overrides)
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc


def _cmd_experiment(args) -> int:
    try:
        cfg = _experiment_config(args)
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    curve = experiments.run_experiment(cfg, jobs=jobs, flush_path=args.out)
    if args.plot is not None:
        experiments.plot_error_curve(curve, args.plot)
    kept = sum(1 for r in curve.rows if not math.isnan(r.frobenius_error))
    print(f"wrote {len(curve.rows)} rows ({kept} valid) to {args.out}")
    for n, slope in curve.slopes:
        label = "inf" if math.isinf(n) else str(int(n))
        print(f"slope N={label}: {slope!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggmarkov",
        description="Estimate Markov transition matrices from aggregate snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate an observation file from a chain")
    p_sim.add_argument("--transition", required=True, help="<file>|paper|random:<seed>")
    p_sim.add_argument("--mode", choices=(simulate.INDEPENDENT, simulate.SEQUENTIAL), required=True)
    p_sim.add_argument("--particles", type=_parse_particles, required=True, help="<N>|inf")
    p_sim.add_argument("--pairs", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--states", type=int, default=5, help="states for random:<seed> transitions")
    p_sim.add_argument(
        "--initial-law",
        choices=(simulate.SIMPLEX_UNIFORM, simulate.ENTRYWISE_UNIFORM),
        default=simulate.SIMPLEX_UNIFORM,
    )
    p_sim.add_argument("--burn-in", type=int, default=0)
    p_sim.set_defaults(func=_cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate a transition matrix from observations")
    p_est.add_argument("--observations", required=True)
    p_est.add_argument("--out", required=True)
    p_est.add_argument("--max-outer", type=int, default=1000)
    p_est.add_argument("--outer-tol", type=float, default=1e-8)
    p_est.add_argument("--inner", type=_parse_inner, default=None, help="full|sweeps:<k>")
    p_est.add_argument("--emit-plans", action="store_true")
    p_est.add_argument("--strict", action="store_true")
    p_est.add_argument(
        "--no-normalize",
        action="store_true",
        help="keep pair masses as stored instead of normalizing each pair to unit mass",
    )
    p_est.set_defaults(func=_cmd_estimate)

    p_diag = sub.add_parser("diagnose", help="dual feasibility and uniqueness of a result")
    p_diag.add_argument("--result", required=True)
    p_diag.add_argument("--json", action="store_true")
    p_diag.set_defaults(func=_cmd_diagnose)

    p_exp = sub.add_parser("experiment", help="run an error-curve study")
    p_exp.add_argument("--mode", choices=experiments.MODES, required=True)
    p_exp.add_argument("--config", default=None, help="JSON file with grid overrides")
    p_exp.add_argument("--out", required=True, help="CSV output path")
    p_exp.add_argument("--plot", default=None, help="optional SVG output path")
    p_exp.add_argument("--jobs", type=int, default=None)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AggmarkovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE


if __name__ == "__main__":
    sys.exit(main())
