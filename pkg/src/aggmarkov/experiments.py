"""Reproducible error-curve experiments over (particle count, pair count) grids.

Each cell (N, tau, repeat) simulates an observation set from a ground-truth
chain, estimates the transition matrix, and records the Frobenius error
against the truth.  Cells are independently seeded from the master seed, so
they can run in any order or in parallel and any single cell can be
re-derived from its sub-seed alone.  Output is a CSV of raw rows followed
by commented summary and slope blocks, plus an optional SVG plot.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InfeasibleError, InsufficientPointsError, NonPositiveValueError
from .estimator import EstimateResult, EstimatorConfig, estimate
from .model import TransitionMatrix, frobenius_error
from .simulate import (
    INDEPENDENT,
    SEQUENTIAL,
    SIMPLEX_UNIFORM,
    SimulationConfig,
    benchmark_matrix,
    random_stochastic_matrix,
    sample_empirical_marginals,
)

MODE_INDEPENDENT = "independent"
MODE_SEQUENTIAL_PAPER = "sequential-paper"
MODE_SEQUENTIAL_RANDOM = "sequential-random"
MODES = (MODE_INDEPENDENT, MODE_SEQUENTIAL_PAPER, MODE_SEQUENTIAL_RANDOM)

CSV_HEADER = "n_particles,tau,repeat,frobenius_error"
SUMMARY_HEADER = "# summary: n_particles,tau,mean,ci_low,ci_high"
SLOPE_HEADER = "# slope: n_particles,slope"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Grid definition for one experiment.

    ``transition`` overrides the mode's built-in ground truth (the 5-state
    benchmark chain for the independent and sequential-paper modes, a fresh
    strictly positive random chain per repeat for sequential-random).
    """

    mode: str
    n: int = 5
    particle_counts: tuple[float, ...] = ()
    tau_grid: tuple[int, ...] = ()
    repeats: int = 10
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    tail_fraction: float = 0.5
    initial_law: str = SIMPLEX_UNIFORM
    transition: TransitionMatrix | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown experiment mode {self.mode!r}")
        if not self.tau_grid:
            raise ValueError("tau_grid must not be empty")
        if list(self.tau_grid) != sorted(set(self.tau_grid)):
            raise ValueError("tau_grid must be strictly increasing")
        if not self.particle_counts:
            raise ValueError("particle_counts must not be empty")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.transition is None and self.mode != MODE_SEQUENTIAL_RANDOM and self.n != 5:
            raise ValueError("the built-in benchmark chain has 5 states; pass a transition")


def default_experiment_config(mode: str, **overrides) -> ExperimentConfig:
    """Desk-scale defaults: geometric tau grids and 10 repeats per cell."""
    if mode == MODE_INDEPENDENT:
        base = dict(
            particle_counts=(100.0, 1000.0, 10000.0, math.inf),
            tau_grid=(8, 16, 32, 64, 128, 256),
        )
    else:
        base = dict(
            particle_counts=(2.0, 10.0, 100.0),
            tau_grid=(50, 100, 200, 400, 800, 1600),
        )
    base.update(overrides)
    return ExperimentConfig(mode=mode, **base)


@dataclass(frozen=True)
class CellRow:
    n_particles: float
    tau: int
    repeat: int
    frobenius_error: float


@dataclass(frozen=True)
class SummaryRow:
    n_particles: float
    tau: int
    mean: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True, eq=False)
class CellOutcome:
    """Everything one grid cell produced (result is None on infeasibility)."""

    row: CellRow
    result: EstimateResult | None
    truth: TransitionMatrix
    sub_seed: int


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    rows: tuple[CellRow, ...]
    summaries: tuple[SummaryRow, ...]
    slopes: tuple[tuple[float, float], ...]  # (n_particles, fitted tail slope)


def cell_seed(seed: int, n_particles: float, tau: int, repeat: int) -> int:
    """Deterministic sub-seed of one grid cell (inf encodes as 0)."""
    code = 0 if math.isinf(n_particles) else int(n_particles)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(code, int(tau), int(repeat)))
    return int(ss.generate_state(1, np.uint64)[0])


def _matrix_seed(seed: int, repeat: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(repeat), 101))
    return int(ss.generate_state(1, np.uint64)[0])


def _ground_truth(cfg: ExperimentConfig, repeat: int) -> TransitionMatrix:
    if cfg.transition is not None:
        return cfg.transition
    if cfg.mode == MODE_SEQUENTIAL_RANDOM:
        return random_stochastic_matrix(
            cfg.n, seed=_matrix_seed(cfg.seed, repeat), strictly_positive=True
        )
    return benchmark_matrix()


def run_cell(cfg: ExperimentConfig, n_particles: float, tau: int, repeat: int) -> CellOutcome:
    """Simulate and estimate one grid cell; infeasible cells yield a NaN row."""
    sub_seed = cell_seed(cfg.seed, n_particles, tau, repeat)
    truth = _ground_truth(cfg, repeat)
    sim = SimulationConfig(
        n=truth.n,
        n_particles=n_particles,
        n_pairs=tau,
        mode=INDEPENDENT if cfg.mode == MODE_INDEPENDENT else SEQUENTIAL,
        seed=sub_seed,
        initial_law=cfg.initial_law,
    )
    obs = sample_empirical_marginals(truth, sim)
    try:
        result = estimate(obs, cfg.estimator)
        err = frobenius_error(result.transition, truth)
    except InfeasibleError:
        result = None
        err = float("nan")
    return CellOutcome(
        row=CellRow(n_particles=float(n_particles), tau=tau, repeat=repeat, frobenius_error=err),
        result=result,
        truth=truth,
        sub_seed=sub_seed,
    )


def _cells(cfg: ExperimentConfig) -> list[tuple[float, int, int]]:
    return [
        (float(n), int(tau), rep)
        for n in sorted(cfg.particle_counts)
        for tau in cfg.tau_grid
        for rep in range(cfg.repeats)
    ]


def _run_cell_task(args) -> CellOutcome:
    cfg, n, tau, rep = args
    return run_cell(cfg, n, tau, rep)


def summarize(rows: Iterable[CellRow]) -> tuple[SummaryRow, ...]:
    """Mean and normal-approximation 95% CI per (N, tau) cell.

    NaN repeats (infeasible estimations) are excluded; a cell with no valid
    repeat produces no summary row.  For a single repeat the interval
    collapses to the point.
    """
    groups: dict[tuple[float, int], list[float]] = {}
    order: list[tuple[float, int]] = []
    for row in rows:
        key = (row.n_particles, row.tau)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row.frobenius_error)
    out = []
    for key in sorted(order):
        values = np.array([v for v in groups[key] if not math.isnan(v)])
        if values.size == 0:
            continue
        mean = float(values.mean())
        if values.size > 1:
            half = 1.96 * float(values.std(ddof=1)) / math.sqrt(values.size)
        else:
            half = 0.0
        out.append(
            SummaryRow(
                n_particles=key[0],
                tau=key[1],
                mean=mean,
                ci_low=mean - half,
                ci_high=mean + half,
            )
        )
    return tuple(out)


def fit_loglog_slope(points: Sequence[tuple[float, float]], tail_fraction: float = 0.5) -> float:
    """Least-squares slope of log(error) against log(tau) over the tail.

    The tail window is the last ``ceil(tail_fraction * len(points))`` points,
    but never fewer than three; at least three points overall are required,
    and the tail errors must be strictly positive.
    """
    pts = list(points)
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    if len(pts) < 3:
        raise InsufficientPointsError(f"need at least 3 points, got {len(pts)}")
    count = max(3, math.ceil(tail_fraction * len(pts)))
    tail = pts[-count:]
    taus = np.array([t for t, _ in tail], dtype=float)
    errs = np.array([e for _, e in tail], dtype=float)
    if np.any(~np.isfinite(errs)) or np.any(errs <= 0):
        raise NonPositiveValueError("tail errors must be finite and positive")
    slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    return float(slope)


def _fit_slopes(cfg: ExperimentConfig, summaries: Sequence[SummaryRow]):
    slopes = []
    for n in sorted(set(float(x) for x in cfg.particle_counts)):
        points = [(s.tau, s.mean) for s in summaries if s.n_particles == n]
        points.sort()
        try:
            slope = fit_loglog_slope(points, cfg.tail_fraction)
        except (InsufficientPointsError, NonPositiveValueError):
            slope = float("nan")
        slopes.append((n, slope))
    return tuple(slopes)


def build_error_curve(cfg: ExperimentConfig, rows: Sequence[CellRow]) -> ErrorCurve:
    summaries = summarize(rows)
    return ErrorCurve(rows=tuple(rows), summaries=summaries, slopes=_fit_slopes(cfg, summaries))


def run_experiment(
    cfg: ExperimentConfig,
    jobs: int = 1,
    on_cell: Callable[[CellOutcome], None] | None = None,
    flush_path=None,
) -> ErrorCurve:
    """Run every grid cell and assemble the error curve.

    Cells are deterministic given the master seed regardless of ``jobs``;
    output ordering is canonical (sorted by N, tau, repeat).  With
    ``flush_path`` set, raw rows are appended to the CSV as they complete
    so partial results survive interruption.
    """
    cells = _cells(cfg)
    rows: list[CellRow] = []
    sink = open(flush_path, "w") if flush_path is not None else None
    try:
        if sink is not None:
            sink.write(CSV_HEADER + "\n")
            sink.flush()

        def consume(outcome: CellOutcome) -> None:
            rows.append(outcome.row)
            if sink is not None:
                sink.write(_format_row(outcome.row) + "\n")
                sink.flush()
            if on_cell is not None:
                on_cell(outcome)

        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for outcome in pool.map(
                    _run_cell_task, [(cfg, n, tau, rep) for n, tau, rep in cells]
                ):
                    consume(outcome)
        else:
            for n, tau, rep in cells:
                consume(run_cell(cfg, n, tau, rep))
        curve = build_error_curve(cfg, rows)
        if sink is not None:
            _write_trailer(sink, curve)
        return curve
    finally:
        if sink is not None:
            sink.close()


def _fmt_particles(n: float) -> str:
    return "inf" if math.isinf(n) else str(int(n))


def _fmt(x: float) -> str:
    return repr(float(x))


def _format_row(row: CellRow) -> str:
    return f"{_fmt_particles(row.n_particles)},{row.tau},{row.repeat},{_fmt(row.frobenius_error)}"


def _write_trailer(handle, curve: ErrorCurve) -> None:
    handle.write(SUMMARY_HEADER + "\n")
    for s in curve.summaries:
        # CI lower bound is floored at zero for display; errors are nonnegative.
        handle.write(
            f"# summary: {_fmt_particles(s.n_particles)},{s.tau},"
            f"{_fmt(s.mean)},{_fmt(max(s.ci_low, 0.0))},{_fmt(s.ci_high)}\n"
        )
    handle.write(SLOPE_HEADER + "\n")
    for n, slope in curve.slopes:
        handle.write(f"# slope: {_fmt_particles(n)},{_fmt(slope)}\n")
    handle.flush()


def write_error_curve_csv(curve: ErrorCurve, path) -> None:
    """Write the full CSV: raw rows, then summary and slope blocks."""
    with open(path, "w") as handle:
        handle.write(CSV_HEADER + "\n")
        for row in curve.rows:
            handle.write(_format_row(row) + "\n")
        _write_trailer(handle, curve)


def plot_error_curve(curve: ErrorCurve, path) -> None:
    """Static SVG: log-log error against tau, one series per N, shaded CI band."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot()
    for n in sorted(set(s.n_particles for s in curve.summaries)):
        series = sorted(
            (s for s in curve.summaries if s.n_particles == n), key=lambda s: s.tau
        )
        taus = np.array([s.tau for s in series], dtype=float)
        means = np.array([s.mean for s in series])
        low = np.array([max(s.ci_low, 1e-300) for s in series])
        high = np.array([s.ci_high for s in series])
        keep = means > 0
        if not keep.any():
            continue
        label = "N=inf" if math.isinf(n) else f"N={int(n)}"
        ax.plot(taus[keep], means[keep], marker="o", label=label)
        ax.fill_between(taus[keep], low[keep], high[keep], alpha=0.2)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("observation pairs")
    ax.set_ylabel("Frobenius error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, format="svg")
