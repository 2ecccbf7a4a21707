"""Entropic proximal estimator for the aggregate transition problem.

Minimizes sum_t D(M_t | Xbar) over transport plans M_t with the observed
marginals and Xbar = sum_t M_t, then row-normalizes Xbar into the transition
estimate.  Each outer iteration KL-projects every pair onto its marginals
against the current aggregate (the proximal prior) and rebuilds the
aggregate; with unit proximal weight this is exactly the classical entropic
proximal point scheme, and the objective value is non-increasing along the
iterates.

The T projections within one outer iteration are independent; they are
executed as one batched vectorized solve, warm-started from the previous
iteration's scalings.  The aggregate is rebuilt by summing plans in
ascending t order for bit-stable reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import sinkhorn
from .errors import InfeasibleError, InfeasibleSupportError, ShapeMismatchError
from .model import (
    AggregatePlan,
    ObservationSet,
    TransitionMatrix,
    TransportPlan,
    as_matrix,
    kl_divergence,
    recover_transition,
)


class EstimateStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"


# The decaying inexact-mode inner tolerance never drops below this.
ETA_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning knobs of the proximal scheme.

    Attributes
    ----------
    outer_tol : float
        Stop when the relative max-norm change of the aggregate between two
        outer iterations drops below this.
    max_outer : int
        Outer iteration budget.
    inner_sweeps : int or None
        ``None`` runs every inner projection to ``inner_tol`` (full
        convergence, the default).  An integer k switches to inexact mode:
        at least k scaling sweeps per pair per outer iteration, continuing
        until the iteration-k inner tolerance eta_k is met.
    inner_tol : float or None
        Inner marginal-residual tolerance.  Defaults to 1e-12 in full mode
        (loose inner solves leak non-monotone wiggles of order 1e-10 into
        the objective history) and to 1e-2 (the starting value eta_0 of the
        decaying schedule) in inexact mode.
    inner_tol_decay : float
        Geometric decay of the inexact-mode schedule eta_k = eta_0 *
        decay**k; with unit proximal weight the schedule is summable, which
        preserves convergence of the inexact iterations.  The schedule is
        floored at 1e-12 so late iterations never chase tolerances below
        what floating point can certify.
    proximal_weight : float
        Weight of the proximal penalty.  Fixed at 1, which makes the scheme
        coincide with alternating KL projections; other values are not
        implemented.
    plateau_tol, plateau_patience : float, int
        Secondary stop: objective change at most plateau_tol for
        plateau_patience consecutive iterations.  Set plateau_tol to 0 to
        disable.  Ignored when ``dual_residual_tol`` is set.
    dual_residual_tol : float or None
        Optional strict stopping gate: on top of the aggregate-change test,
        require the recovered dual scalings to satisfy the optimality system
        within this residual before declaring convergence.  Near-degenerate
        instances that cannot be certified within ``max_outer`` end with
        status MAX_ITERATIONS instead of a spuriously converged result.
    inner_max_iter : int
        Sweep budget per inner solve.
    """

    outer_tol: float = 1e-8
    max_outer: int = 1000
    inner_sweeps: int | None = None
    inner_tol: float | None = None
    inner_tol_decay: float = 0.9
    proximal_weight: float = 1.0
    plateau_tol: float = 1e-12
    plateau_patience: int = 5
    dual_residual_tol: float | None = None
    inner_max_iter: int = 100_000

    def __post_init__(self):
        if not self.outer_tol >= 0:
            raise ValueError("outer_tol must be nonnegative")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.proximal_weight != 1.0:
            raise ValueError("only unit proximal weight is supported")
        if not 0.0 < self.inner_tol_decay < 1.0:
            raise ValueError("inner_tol_decay must lie in (0, 1)")
        if self.inner_sweeps is not None and self.inner_sweeps < 1:
            raise ValueError("inner_sweeps must be at least 1")

    def resolved_inner_tol(self) -> float:
        if self.inner_tol is not None:
            return self.inner_tol
        return 1e-2 if self.inner_sweeps is not None else 1e-12


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """Converged plans, their aggregate, the recovered transition, and history."""

    plans: tuple[TransportPlan, ...]
    aggregate: AggregatePlan
    transition: TransitionMatrix
    objective_history: tuple[float, ...]
    outer_iterations: int
    status: EstimateStatus
    zero_row_flags: np.ndarray
    stop_reason: str = "x_change"


def _stacked_objective(plans: np.ndarray, aggregate: np.ndarray) -> float:
    """sum_t D(plans[t] | aggregate), exploiting plans <= aggregate entrywise."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_x = np.log(np.where(aggregate > 0, aggregate, 1.0))
        pos = plans > 0
        terms = np.where(
            pos, plans * (np.log(np.where(pos, plans, 1.0)) - log_x[None]), 0.0
        )
    return float(terms.sum())


def objective_value(plans, xbar) -> float:
    """Objective sum_t D(M_t | xbar); may be negative, or inf if some plan
    puts mass where ``xbar`` has none."""
    x = as_matrix(xbar)
    total = 0.0
    for plan in plans:
        total += kl_divergence(as_matrix(plan), x)
    return float(total)


def objective_original(plans, obs: ObservationSet, transition) -> float:
    """Objective in its original form, sum_t D(M_t | diag(mu_t) A).

    Differs from ``objective_value`` at the recovered transition by a
    constant that depends only on the observed marginals, so both orderings
    of candidate solutions agree.
    """
    a = as_matrix(transition)
    plan_list = list(plans)
    if len(plan_list) != obs.n_pairs:
        raise ShapeMismatchError(
            f"{len(plan_list)} plans for {obs.n_pairs} observation pairs"
        )
    total = 0.0
    for plan, pair in zip(plan_list, obs.pairs):
        total += kl_divergence(as_matrix(plan), pair.mu.weights[:, None] * a)
    return float(total)


def _initial_aggregate_from(obs: ObservationSet, mus, nus) -> np.ndarray:
    masses = mus.sum(axis=1)
    plans = mus[:, :, None] * nus[:, None, :] / masses[:, None, None]
    return plans.sum(axis=0)


def _check_feasible(x: np.ndarray, mus: np.ndarray, nus: np.ndarray) -> None:
    for t in range(mus.shape[0]):
        restricted = (x > 0) & (mus[t] > 0)[:, None] & (nus[t] > 0)[None, :]
        if not sinkhorn.support_feasible(restricted, mus[t], nus[t]):
            raise InfeasibleError(
                f"pair {t} is infeasible on the restricted support"
            )


def estimate(
    obs: ObservationSet,
    cfg: EstimatorConfig | None = None,
    initial_aggregate=None,
) -> EstimateResult:
    """Run the proximal scheme on an observation set.

    Starts from the sum of the per-pair product couplings (or from
    ``initial_aggregate``, restricted to the observation support mask) and
    alternates batched KL projections with the aggregate update until the
    aggregate stops moving.  Entries excluded by the support mask stay
    exactly zero in every plan and in the aggregate.

    Raises
    ------
    InfeasibleError
        If a provided initial aggregate leaves some pair infeasible even
        after support restriction.
    """
    cfg = cfg or EstimatorConfig()
    mus = obs.mu_matrix()
    nus = obs.nu_matrix()
    t_count, n = mus.shape

    if initial_aggregate is not None:
        x = as_matrix(initial_aggregate).copy()
        if x.shape != (n, n):
            raise ShapeMismatchError(f"initial aggregate shape {x.shape}, expected {(n, n)}")
        x[~obs.support_mask] = 0.0
        _check_feasible(x, mus, nus)
    else:
        x = _initial_aggregate_from(obs, mus, nus)

    row = (mus > 0).astype(float)
    col = (nus > 0).astype(float)
    inner_tol = cfg.resolved_inner_tol()
    history: list[float] = []
    status = EstimateStatus.MAX_ITERATIONS
    stop_reason = "max_outer"
    current_tol = cfg.outer_tol
    plans = None
    iterations = cfg.max_outer

    for k in range(1, cfg.max_outer + 1):
        if cfg.inner_sweeps is None:
            eta, min_sweeps = inner_tol, 1
        else:
            eta, min_sweeps = inner_tol * cfg.inner_tol_decay**k, cfg.inner_sweeps
        try:
            row, col, _, _, _ = sinkhorn.batch_project(
                x, mus, nus, row, col, eta, cfg.inner_max_iter, min_sweeps
            )
        except InfeasibleSupportError as exc:
            raise InfeasibleError(str(exc)) from exc
        plans = sinkhorn.batch_plans(x, row, col)
        x_new = plans.sum(axis=0)
        history.append(_stacked_objective(plans, x_new))
        change = float(np.abs(x_new - x).max() / np.abs(x).max())
        x = x_new
        if change <= current_tol:
            if cfg.dual_residual_tol is None:
                status, stop_reason, iterations = EstimateStatus.CONVERGED, "x_change", k
                break
            from .duality import scaling_fit_residual

            if scaling_fit_residual(plans, x) <= cfg.dual_residual_tol:
                status, stop_reason, iterations = (
                    EstimateStatus.CONVERGED,
                    "x_change+dual_residual",
                    k,
                )
                break
            current_tol = max(current_tol * 1e-2, 1e-15)
        if (
            cfg.dual_residual_tol is None
            and cfg.plateau_tol > 0
            and len(history) > cfg.plateau_patience
            and all(
                abs(history[-i] - history[-i - 1]) <= cfg.plateau_tol
                for i in range(1, cfg.plateau_patience + 1)
            )
        ):
            status, stop_reason, iterations = (
                EstimateStatus.CONVERGED,
                "objective_plateau",
                k,
            )
            break

    transition, zero_rows = recover_transition(x, on_zero_row="uniform")
    return EstimateResult(
        plans=tuple(TransportPlan(p) for p in plans),
        aggregate=AggregatePlan(x),
        transition=transition,
        objective_history=tuple(history),
        outer_iterations=iterations,
        status=status,
        zero_row_flags=zero_rows,
        stop_reason=stop_reason,
    )
