"""Dual variables, optimality checks, and uniqueness certificates.

At an optimum each plan factors over the aggregate as
M_t = Xbar * u_t v_t^T entrywise, where (u_t, v_t) are exponentials of the
Lagrange multipliers of the marginal constraints.  The scalings are
recovered here from primal ratios M_t / Xbar rather than tracked inside the
inner solver, because the inner scalings are relative to the moving
proximal prior, not to the final aggregate.

Recovered scalings support three diagnostics:

* dual feasibility: sum_t u_t(i) v_t(j) <= 1 everywhere, with equality on
  the support of the aggregate;
* the duality gap against the primal objective;
* uniqueness certificates: the optimum is unique if the u-family or the
  v-family spans R^n (and, when the aggregate is strictly positive, only
  then).  A primal variant tests the span of plan rows or columns instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import NotRankOneError, ShapeMismatchError
from .model import ObservationSet, as_matrix

if TYPE_CHECKING:  # pragma: no cover
    from .estimator import EstimateResult

# Aggregate entries below this fraction of the largest entry are treated as
# numerically zero: they belong to inactive index pairs still decaying
# geometrically toward zero when the outer loop stops.
SUPPORT_RTOL = 1e-12
# Plan entries below this fraction of the pair mass are too small for their
# ratio to have settled; they are excluded from the rank-one consistency
# test (they cannot influence the fit either, which is mass-weighted).
MISFIT_MASS_RTOL = 1e-9
# Ratio misfit beyond this signals a non-converged estimate.
DEFAULT_MISFIT_TOL = 1e-4
# Dual constraints are inactive below 1 - INACTIVE_TOL, violated above
# 1 + INACTIVE_TOL.
INACTIVE_TOL = 1e-6
# Singular values below this fraction of the largest are treated as zero.
RANK_RTOL = 1e-8

VERDICT_CERTIFIED = "Certified"
VERDICT_NOT_UNIQUE = "NotUnique"
VERDICT_UNDETERMINED = "Undetermined"


@dataclass(frozen=True, eq=False)
class DualScalings:
    """Per-pair scaling vectors u_t = exp(lambda_t), v_t = exp(rho_t).

    Entries at states a pair never occupies carry no information; they are
    set to the least-squares extension of the zero ratio row or column
    (which is zero) and flagged in ``extrapolated_u`` / ``extrapolated_v``.
    ``gauge`` records the per-pair factor absorbed into v so that
    max_i u_t(i) = 1.
    """

    u: np.ndarray
    v: np.ndarray
    gauge: np.ndarray
    extrapolated_u: np.ndarray
    extrapolated_v: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.u.shape[1]

    def constraint_values(self) -> np.ndarray:
        """Matrix of sum_t u_t(i) v_t(j)."""
        return np.einsum("ti,tj->ij", self.u, self.v)

    def log_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """(lambda, rho) with -inf at flagged zero entries."""
        with np.errstate(divide="ignore"):
            return np.log(self.u), np.log(self.v)


@dataclass(frozen=True, eq=False)
class DualFeasibilityReport:
    """Entrywise classification of the dual constraints sum_t u v <= 1."""

    constraint_values: np.ndarray
    max_constraint: float
    classification: np.ndarray  # strings: "active" | "inactive" | "violated"
    violation: np.ndarray  # amount above 1 where violated, else 0
    tol: float

    @property
    def n_violated(self) -> int:
        return int((self.classification == "violated").sum())

    @property
    def n_inactive(self) -> int:
        return int((self.classification == "inactive").sum())


@dataclass(frozen=True, eq=False)
class UniquenessCertificate:
    """Span ranks of the scaling families and the resulting verdict.

    ``certified_unique`` is the sufficient span condition (some family has
    full rank).  When the aggregate is strictly positive the condition is
    also necessary, so failing it there yields verdict NotUnique; with
    zeros in the aggregate an uncertified instance stays Undetermined.
    """

    rank_u: int
    rank_v: int
    certified_unique: bool
    verdict: str
    aggregate_strictly_positive: bool
    inactive_set: tuple[tuple[int, int], ...] | None
    singular_values_u: np.ndarray
    singular_values_v: np.ndarray


def _numeric_support(aggregate: np.ndarray) -> np.ndarray:
    peak = aggregate.max()
    return aggregate > SUPPORT_RTOL * peak if peak > 0 else aggregate > 0


def _fit_factors(plans: np.ndarray, aggregate: np.ndarray):
    """Mass-weighted log-space rank-one fit of each ratio plans[t] / aggregate.

    Returns (u, v, extrapolated_u, extrapolated_v, misfit) with the gauge
    not yet applied.  The fit solves, per pair, the least-squares system
    log u_i + log v_j = log(M(i,j) / Xbar(i,j)) over the entries on the
    numeric support, each equation weighted by sqrt of the plan mass it
    carries, so that entries still drifting toward zero cannot pollute the
    factors.  The misfit is the worst relative factorization error over
    entries carrying non-negligible mass.
    """
    t_count, n, _ = plans.shape
    supp = _numeric_support(aggregate)
    u = np.zeros((t_count, n))
    v = np.zeros((t_count, n))
    extrap_u = np.zeros((t_count, n), dtype=bool)
    extrap_v = np.zeros((t_count, n), dtype=bool)
    misfit = 0.0
    for t in range(t_count):
        plan = plans[t]
        pos = (plan > 0) & supp
        ii, jj = np.nonzero(pos)
        if ii.size == 0:
            raise NotRankOneError(f"plan {t} carries no mass on the numeric support")
        ratio = plan[pos] / aggregate[pos]
        weight = np.sqrt(plan[pos])
        design = np.zeros((ii.size, 2 * n))
        design[np.arange(ii.size), ii] = 1.0
        design[np.arange(ii.size), n + jj] = 1.0
        sol, *_ = np.linalg.lstsq(design * weight[:, None], np.log(ratio) * weight, rcond=None)
        ut = np.exp(sol[:n])
        vt = np.exp(sol[n:])
        fit_rows = pos.any(axis=1)
        fit_cols = pos.any(axis=0)
        ut[~fit_rows] = 0.0
        vt[~fit_cols] = 0.0
        extrap_u[t] = ~fit_rows
        extrap_v[t] = ~fit_cols
        mass_ok = plan[pos] >= MISFIT_MASS_RTOL * plan.sum()
        if mass_ok.any():
            fitted = ut[ii] * vt[jj]
            err = np.abs(fitted[mass_ok] - ratio[mass_ok]) / ratio[mass_ok]
            misfit = max(misfit, float(err.max()))
        u[t] = ut
        v[t] = vt
    return u, v, extrap_u, extrap_v, misfit


def scaling_fit_residual(plans: np.ndarray, aggregate: np.ndarray) -> float:
    """Optimality residual of the recovered dual scalings, for stopping gates.

    The residual is the worst deviation of sum_t u_t(i) v_t(j) from 1 on
    the numeric support, or from the feasible side off it.  Returns inf
    when the ratio matrices are not rank-one within the misfit tolerance,
    which marks the iterate as not converged.
    """
    try:
        u, v, _, _, misfit = _fit_factors(plans, aggregate)
    except (NotRankOneError, np.linalg.LinAlgError):
        return float("inf")
    if misfit > DEFAULT_MISFIT_TOL:
        return float("inf")
    s = np.einsum("ti,tj->ij", u, v)
    supp = _numeric_support(aggregate)
    residual = float(np.abs(s[supp] - 1.0).max())
    off = ~supp
    if off.any():
        residual = max(residual, float(np.maximum(s[off] - 1.0, 0.0).max()))
    return residual


def extract_dual_scalings(
    result: "EstimateResult", misfit_tol: float = DEFAULT_MISFIT_TOL
) -> DualScalings:
    """Recover dual scalings from a converged estimate via primal ratios.

    On the support of the aggregate, u_t(i) v_t(j) equals
    M_t(i,j) / Xbar(i,j).  Each pair is gauged so that max_i u_t(i) = 1,
    with the factor absorbed into v_t and recorded.

    Raises
    ------
    NotRankOneError
        If some ratio matrix is not rank-one within ``misfit_tol`` relative
        error on the mass-carrying entries, which signals that the estimate
        has not converged tightly enough for dual recovery.
    """
    plans = np.array([as_matrix(p) for p in result.plans])
    aggregate = as_matrix(result.aggregate)
    u, v, extrap_u, extrap_v, misfit = _fit_factors(plans, aggregate)
    if misfit > misfit_tol:
        raise NotRankOneError(
            f"plan-to-aggregate ratios deviate from rank-one by {misfit:.3e} "
            f"(tolerance {misfit_tol:.1e}); the estimate has not converged"
        )
    gauge = u.max(axis=1)
    safe = np.where(gauge > 0, gauge, 1.0)
    return DualScalings(
        u=u / safe[:, None],
        v=v * safe[:, None],
        gauge=gauge,
        extrapolated_u=extrap_u,
        extrapolated_v=extrap_v,
    )


def dual_objective(
    lambdas: Sequence[np.ndarray], rhos: Sequence[np.ndarray], obs: ObservationSet
) -> float:
    """Dual objective sum_t (lambda_t . mu_t + rho_t . nu_t).

    Terms where the marginal entry is zero are skipped (the multiplier is
    unconstrained there, and 0 * anything contributes nothing).
    """
    lambdas = list(lambdas)
    rhos = list(rhos)
    if len(lambdas) != obs.n_pairs or len(rhos) != obs.n_pairs:
        raise ShapeMismatchError("need one multiplier vector per observation pair")
    total = 0.0
    for lam, rho, pair in zip(lambdas, rhos, obs.pairs):
        lam = np.asarray(lam, dtype=float)
        rho = np.asarray(rho, dtype=float)
        if lam.shape != (obs.n,) or rho.shape != (obs.n,):
            raise ShapeMismatchError("multiplier vectors must have length n")
        mu = pair.mu.weights
        nu = pair.nu.weights
        if not np.all(np.isfinite(lam[mu > 0])) or not np.all(np.isfinite(rho[nu > 0])):
            raise ValueError("multipliers must be finite wherever the marginal is positive")
        total += float(lam[mu > 0] @ mu[mu > 0] + rho[nu > 0] @ nu[nu > 0])
    return total


def scalings_dual_value(scalings: DualScalings, mus: np.ndarray, nus: np.ndarray) -> float:
    """Dual objective of the recovered scalings against stacked marginals.

    Entries flagged as extrapolated carry (numerically) no marginal mass and
    are skipped, matching the 0 * log 0 convention of the dual objective.
    """
    lam, rho = scalings.log_factors()
    keep_u = (mus > 0) & ~scalings.extrapolated_u
    keep_v = (nus > 0) & ~scalings.extrapolated_v
    return float((lam[keep_u] * mus[keep_u]).sum() + (rho[keep_v] * nus[keep_v]).sum())


def duality_gap(result: "EstimateResult", obs: ObservationSet, scalings: DualScalings | None = None) -> float:
    """Primal objective minus the dual value of the recovered multipliers."""
    from .estimator import objective_value

    if scalings is None:
        scalings = extract_dual_scalings(result)
    primal = objective_value(result.plans, result.aggregate)
    dual = scalings_dual_value(scalings, obs.mu_matrix(), obs.nu_matrix())
    return primal - dual


def check_dual_feasibility(scalings: DualScalings, tol: float = INACTIVE_TOL) -> DualFeasibilityReport:
    """Classify every dual constraint sum_t u_t(i) v_t(j) <= 1.

    Entries within ``tol`` of 1 are active (they must coincide with the
    aggregate support at an optimum), entries below 1 - tol are inactive,
    and entries above 1 + tol violate dual feasibility.
    """
    s = scalings.constraint_values()
    classification = np.full(s.shape, "active", dtype="<U8")
    classification[s < 1.0 - tol] = "inactive"
    classification[s > 1.0 + tol] = "violated"
    violation = np.maximum(s - 1.0, 0.0)
    violation[classification != "violated"] = 0.0
    return DualFeasibilityReport(
        constraint_values=s,
        max_constraint=float(s.max()),
        classification=classification,
        violation=violation,
        tol=tol,
    )


def _rank(matrix: np.ndarray, rtol: float) -> tuple[int, np.ndarray]:
    if matrix.size == 0 or not matrix.any():
        return 0, np.zeros(0)
    sv = np.linalg.svd(matrix, compute_uv=False)
    return int((sv > rtol * sv[0]).sum()), sv


def uniqueness_certificate(
    scalings: DualScalings,
    result: "EstimateResult",
    rank_rtol: float = RANK_RTOL,
    inactive_tol: float = INACTIVE_TOL,
) -> UniquenessCertificate:
    """Span certificate from the dual scalings.

    The optimum is certified unique when the stacked u-family or v-family
    has rank n.  When the aggregate is strictly positive, the span
    condition is also necessary, so an uncertified instance is reported
    NotUnique; otherwise it stays Undetermined.
    """
    n = scalings.n
    rank_u, sv_u = _rank(scalings.u, rank_rtol)
    rank_v, sv_v = _rank(scalings.v, rank_rtol)
    certified = rank_u == n or rank_v == n
    aggregate = as_matrix(result.aggregate)
    agg_pos = bool(_numeric_support(aggregate).all())
    s = scalings.constraint_values()
    inactive = tuple(
        (int(i), int(j)) for i, j in zip(*np.nonzero(s < 1.0 - inactive_tol))
    )
    if certified:
        verdict = VERDICT_CERTIFIED
    elif agg_pos:
        verdict = VERDICT_NOT_UNIQUE
    else:
        verdict = VERDICT_UNDETERMINED
    return UniquenessCertificate(
        rank_u=rank_u,
        rank_v=rank_v,
        certified_unique=certified,
        verdict=verdict,
        aggregate_strictly_positive=agg_pos,
        inactive_set=inactive,
        singular_values_u=sv_u,
        singular_values_v=sv_v,
    )


def primal_span_certificate(
    result: "EstimateResult", rank_rtol: float = RANK_RTOL
) -> UniquenessCertificate:
    """Span certificate from the plans themselves.

    For a strictly positive aggregate, the rows {M_t(i,:)}_t span the same
    space as the v-family for every i, and the columns {M_t(:,j)}_t the
    same space as the u-family, so this certificate agrees with the dual
    one there.  With zeros in the aggregate the span test is inconclusive
    and the verdict is Undetermined.
    """
    plans = np.array([as_matrix(p) for p in result.plans])
    n = plans.shape[1]
    aggregate = as_matrix(result.aggregate)
    agg_pos = bool(_numeric_support(aggregate).all())
    rank_v, sv_v = _rank(plans[:, 0, :], rank_rtol)  # rows of each plan at i = 0
    rank_u, sv_u = _rank(plans[:, :, 0], rank_rtol)  # columns of each plan at j = 0
    certified = agg_pos and (rank_u == n or rank_v == n)
    if certified:
        verdict = VERDICT_CERTIFIED
    elif agg_pos:
        verdict = VERDICT_NOT_UNIQUE
    else:
        verdict = VERDICT_UNDETERMINED
    return UniquenessCertificate(
        rank_u=rank_u,
        rank_v=rank_v,
        certified_unique=certified,
        verdict=verdict,
        aggregate_strictly_positive=agg_pos,
        inactive_set=None,
        singular_values_u=sv_u,
        singular_values_v=sv_v,
    )
