"""Diagonal-scaling solver for the bi-marginal KL projection.

Solves min D(M | X) over nonnegative M with M 1 = mu and M^T 1 = nu for a
nonnegative prior X.  The minimizer has the form diag(a) X diag(b) and is
found by alternating scaling updates (Sinkhorn iterations).  A log-domain
path takes over automatically when the prior carries positive entries small
enough to underflow the scaling-domain products.

The batched helpers at the bottom run many pairs against a shared prior at
once; the proximal estimator uses them as its inner step.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .errors import (
    InfeasibleSupportError,
    NonFiniteError,
    ShapeMismatchError,
)
from .model import MarginalPair, TransportPlan, as_matrix

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
# Renormalize the scalings this often to keep products in range.
RENORM_EVERY = 20
# Switch to log-domain updates when the prior has positive entries below this.
LOG_DOMAIN_THRESHOLD = 1e-100
# Stagnation guard: residual improvement below this over the window signals
# an unreachable marginal (support infeasibility at runtime).
STALL_EPS = 1e-16
STALL_WINDOW = 100


class SinkhornStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE_SUPPORT = "infeasible_support"


@dataclass(frozen=True, eq=False)
class ScalingPair:
    """Row and column scaling vectors (a, b) of a plan diag(a) X diag(b).

    Entries corresponding to zero marginal entries are zero by convention,
    so that plan assembly never moves mass into dead rows or columns.
    """

    row: np.ndarray
    col: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.row, dtype=float)
        c = np.asarray(self.col, dtype=float)
        if r.ndim != 1 or c.ndim != 1:
            raise ShapeMismatchError("scalings must be 1-D vectors")
        object.__setattr__(self, "row", r)
        object.__setattr__(self, "col", c)


@dataclass(frozen=True)
class SinkhornReport:
    """Outcome of a projection: sweep count, final residual, and status.

    The residual is the larger of the two relative L1 marginal errors.
    """

    iterations: int
    final_marginal_residual: float
    status: SinkhornStatus


def support_feasible(support: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> bool:
    """Exact feasibility of the transportation polytope on a support pattern.

    Checks whether nonnegative mass with row sums mu and column sums nu can
    be routed through the allowed entries.  Quick necessary conditions (every
    active row reaches an active column and vice versa) are followed by a
    max-flow evaluation of the bipartite routing network, which decides
    feasibility exactly up to floating-point mass comparison.
    """
    import networkx as nx

    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    act_r = mu > 0
    act_c = nu > 0
    sub = np.asarray(support, dtype=bool)[np.ix_(act_r, act_c)]
    if act_r.any() and (sub.size == 0 or not sub.any(axis=1).all()):
        return False
    if act_c.any() and not sub.any(axis=0).all():
        return False
    if not act_r.any():
        return True
    g = nx.DiGraph()
    rows = np.nonzero(act_r)[0]
    cols = np.nonzero(act_c)[0]
    for i in rows:
        g.add_edge("src", ("r", i), capacity=float(mu[i]))
    for j in cols:
        g.add_edge(("c", j), "snk", capacity=float(nu[j]))
    sup = np.asarray(support, dtype=bool)
    for i in rows:
        for j in cols:
            if sup[i, j]:
                g.add_edge(("r", i), ("c", j))  # uncapacitated
    flow = nx.maximum_flow_value(g, "src", "snk")
    total = float(mu.sum())
    return flow >= total * (1.0 - 1e-12)


def _needs_log_domain(prior: np.ndarray) -> bool:
    pos = prior[prior > 0]
    return pos.size > 0 and float(pos.min()) < LOG_DOMAIN_THRESHOLD


def batch_sweep(prior, mus, nus, row, col):
    """One full scaling sweep for all pairs: a <- mu / (X b), b <- nu / (X^T a).

    Zero marginal entries force the corresponding scaling entries to zero.
    Immediately after the column update the nu-marginal of the implied plan
    is exact; the mu-marginal residual is what remains to converge.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        xb = col @ prior.T
        row = np.divide(mus, xb, out=np.zeros_like(mus), where=mus > 0)
        xa = row @ prior
        col = np.divide(nus, xa, out=np.zeros_like(nus), where=nus > 0)
    return row, col


def batch_residuals(prior, mus, nus, row, col):
    """Per-pair residual: max of the two relative L1 marginal errors."""
    row_err = np.abs(row * (col @ prior.T) - mus).sum(axis=1) / mus.sum(axis=1)
    col_err = np.abs(col * (row @ prior) - nus).sum(axis=1) / nus.sum(axis=1)
    return np.maximum(row_err, col_err)


def _batch_project_scaling(prior, mus, nus, row, col, tol, max_iter, min_sweeps):
    t_count, n = mus.shape
    mu_pos = mus > 0
    nu_pos = nus > 0
    mu_mass = mus.sum(axis=1)
    nu_mass = nus.sum(axis=1)
    best = np.inf
    stall = 0
    sweeps = 0
    residual = np.full(t_count, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        while sweeps < max_iter:
            sweeps += 1
            xb = col @ prior.T
            row = np.divide(mus, xb, out=np.zeros((t_count, n)), where=mu_pos)
            xa = row @ prior
            col = np.divide(nus, xa, out=np.zeros((t_count, n)), where=nu_pos)
            row_err = np.abs(row * (col @ prior.T) - mus).sum(axis=1) / mu_mass
            col_err = np.abs(col * (row @ prior) - nus).sum(axis=1) / nu_mass
            residual = np.maximum(row_err, col_err)
            worst = float(residual.max())
            if not np.isfinite(worst):
                raise NonFiniteError("scaling update overflowed")
            if worst <= tol and sweeps >= min_sweeps:
                return row, col, sweeps, residual, SinkhornStatus.CONVERGED
            if best - worst < STALL_EPS:
                stall += 1
                if stall >= STALL_WINDOW:
                    raise InfeasibleSupportError(
                        f"marginal residual stagnated at {worst:.3e}"
                    )
            else:
                stall = 0
            best = min(best, worst)
            if sweeps % RENORM_EVERY == 0:
                peak = row.max(axis=1, keepdims=True)
                ok = peak > 0
                row = np.where(ok, row / np.where(ok, peak, 1.0), row)
                col = np.where(ok, col * peak, col)
    return row, col, sweeps, residual, SinkhornStatus.MAX_ITERATIONS


def _batch_project_log(prior, mus, nus, row, col, tol, max_iter, min_sweeps):
    t_count, n = mus.shape
    mu_pos = mus > 0
    nu_pos = nus > 0
    mu_mass = mus.sum(axis=1)
    nu_mass = nus.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_x = np.where(prior > 0, np.log(np.where(prior > 0, prior, 1.0)), -np.inf)
        log_mu = np.where(mu_pos, np.log(np.where(mu_pos, mus, 1.0)), -np.inf)
        log_nu = np.where(nu_pos, np.log(np.where(nu_pos, nus, 1.0)), -np.inf)
        f = np.where((row > 0) & mu_pos, np.log(np.where(row > 0, row, 1.0)), -np.inf)
        g = np.where((col > 0) & nu_pos, np.log(np.where(col > 0, col, 1.0)), -np.inf)
    best = np.inf
    stall = 0
    sweeps = 0
    residual = np.full(t_count, np.inf)
    while sweeps < max_iter:
        sweeps += 1
        lse_g = logsumexp(log_x[None, :, :] + g[:, None, :], axis=2)
        f = np.where(mu_pos, log_mu - lse_g, -np.inf)
        lse_f = logsumexp(log_x.T[None, :, :] + f[:, None, :], axis=2)
        g = np.where(nu_pos, log_nu - lse_f, -np.inf)
        row_sum = np.exp(f + logsumexp(log_x[None, :, :] + g[:, None, :], axis=2))
        col_sum = np.exp(g + logsumexp(log_x.T[None, :, :] + f[:, None, :], axis=2))
        row_err = np.abs(row_sum - mus).sum(axis=1) / mu_mass
        col_err = np.abs(col_sum - nus).sum(axis=1) / nu_mass
        residual = np.maximum(row_err, col_err)
        worst = float(residual.max())
        if np.isnan(worst):
            raise NonFiniteError("log-domain update produced NaN")
        if worst <= tol and sweeps >= min_sweeps:
            break
        if best - worst < STALL_EPS:
            stall += 1
            if stall >= STALL_WINDOW:
                raise InfeasibleSupportError(f"marginal residual stagnated at {worst:.3e}")
        else:
            stall = 0
        best = min(best, worst)
        if sweeps % RENORM_EVERY == 0:
            peak = np.where(mu_pos, f, -np.inf).max(axis=1, keepdims=True)
            shift = np.where(np.isfinite(peak), peak, 0.0)
            f = f - shift
            g = g + shift
    status = (
        SinkhornStatus.CONVERGED
        if float(residual.max()) <= tol
        else SinkhornStatus.MAX_ITERATIONS
    )
    row = np.where(mu_pos, np.exp(f), 0.0)
    col = np.where(nu_pos, np.exp(g), 0.0)
    return row, col, sweeps, residual, status


def batch_project(prior, mus, nus, row, col, tol, max_iter, min_sweeps=1):
    """Project every pair onto its marginals against a shared prior.

    Parameters
    ----------
    prior : ndarray, shape (n, n)
    mus, nus : ndarray, shape (T, n)
        Stacked marginals.
    row, col : ndarray, shape (T, n)
        Initial scalings (warm start); zero entries stay pinned at zero
        wherever the corresponding marginal entry is zero.
    tol : float
        Target for the worst per-pair residual.
    max_iter : int
        Sweep budget shared by all pairs.
    min_sweeps : int
        Perform at least this many sweeps even if already below tolerance.

    Returns
    -------
    (row, col, sweeps, residuals, status)
    """
    if _needs_log_domain(prior):
        return _batch_project_log(prior, mus, nus, row, col, tol, max_iter, min_sweeps)
    try:
        return _batch_project_scaling(prior, mus, nus, row, col, tol, max_iter, min_sweeps)
    except NonFiniteError:
        # Scale trouble in the multiplicative domain; the log domain is immune.
        return _batch_project_log(prior, mus, nus, row, col, tol, max_iter, min_sweeps)


def batch_plans(prior, row, col):
    """Assemble the plans diag(row_t) prior diag(col_t) for all pairs."""
    return row[:, :, None] * prior[None, :, :] * col[:, None, :]


def _restricted_support(prior, mu, nu):
    return (as_matrix(prior) > 0) & (mu > 0)[:, None] & (nu > 0)[None, :]


def kl_project(
    prior,
    pair: MarginalPair,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    initial: ScalingPair | None = None,
) -> tuple[TransportPlan, ScalingPair, SinkhornReport]:
    """KL-project a prior onto the transportation polytope of one pair.

    Returns the plan diag(a) X diag(b) whose marginals match the pair within
    ``tol`` (relative L1, both marginals), together with the scalings and a
    convergence report.  The plan is positive exactly on the support of the
    prior restricted to the rows with mu > 0 and columns with nu > 0.

    Raises
    ------
    InfeasibleSupportError
        If the zero pattern of the prior makes the marginals unreachable
        (detected exactly up front, or by residual stagnation at runtime).
    NonFiniteError
        On unrecoverable overflow or underflow.
    """
    x = as_matrix(prior)
    mu = pair.mu.weights
    nu = pair.nu.weights
    if x.shape != (pair.n, pair.n):
        raise ShapeMismatchError(f"prior shape {x.shape} does not match n={pair.n}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("prior must be finite and nonnegative")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not support_feasible(_restricted_support(x, mu, nu), mu, nu):
        raise InfeasibleSupportError("prior support cannot route the required mass")
    if initial is None:
        row0 = (mu > 0).astype(float)[None, :]
        col0 = (nu > 0).astype(float)[None, :]
    else:
        row0 = np.asarray(initial.row, dtype=float)[None, :]
        col0 = np.asarray(initial.col, dtype=float)[None, :]
    row, col, sweeps, residual, status = batch_project(
        x, mu[None, :], nu[None, :], row0, col0, tol, max_iter
    )
    plan = batch_plans(x, row, col)[0]
    if not np.all(np.isfinite(plan)):
        raise NonFiniteError("projected plan has non-finite entries")
    report = SinkhornReport(
        iterations=sweeps,
        final_marginal_residual=float(residual[0]),
        status=status,
    )
    return TransportPlan(plan), ScalingPair(row[0], col[0]), report


def sinkhorn_sweep(scalings: ScalingPair, prior, pair: MarginalPair) -> ScalingPair:
    """One full scaling sweep from the given state.

    Zero entries of mu or nu force the corresponding scaling entries to
    zero.  The nu-marginal of the implied plan is exact immediately after
    the column update.
    """
    x = as_matrix(prior)
    row, col = batch_sweep(
        x,
        pair.mu.weights[None, :],
        pair.nu.weights[None, :],
        np.asarray(scalings.row, dtype=float)[None, :],
        np.asarray(scalings.col, dtype=float)[None, :],
    )
    if not (np.all(np.isfinite(row)) and np.all(np.isfinite(col))):
        raise NonFiniteError("scaling sweep produced non-finite values")
    return ScalingPair(row[0], col[0])


def plan_from_scalings(prior, scalings: ScalingPair) -> TransportPlan:
    """Entrywise diag(a) X diag(b)."""
    x = as_matrix(prior)
    a = np.asarray(scalings.row, dtype=float)
    b = np.asarray(scalings.col, dtype=float)
    if x.shape != (a.size, b.size):
        raise ShapeMismatchError(
            f"prior shape {x.shape} incompatible with scalings ({a.size}, {b.size})"
        )
    return TransportPlan(a[:, None] * x * b[None, :])
