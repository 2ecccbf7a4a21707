"""Domain types and elementary operations for aggregate Markov chain estimation.

The central objects are observed marginal pairs (mu_t, nu_t) of equal mass,
nonnegative transport plans moving mass between them, their entrywise sum
(the aggregate plan), and the row-stochastic transition matrix recovered by
row-normalizing the aggregate.  All operations here are pure functions on
immutable inputs and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidTransitionError,
    MassMismatchError,
    NonnegativityError,
    ShapeMismatchError,
    ZeroRowError,
)

# Relative tolerance for accepting that two marginals carry the same mass.
MASS_RTOL = 1e-9
# Row sums of a transition matrix must be 1 within this tolerance.
ROW_SUM_ATOL = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def as_matrix(x) -> np.ndarray:
    """Return the underlying 2-D float array of a plan/matrix-like object."""
    if hasattr(x, "entries"):
        x = x.entries
    return np.asarray(x, dtype=float)


def as_vector(x) -> np.ndarray:
    """Return the underlying 1-D float array of a distribution-like object."""
    if hasattr(x, "weights"):
        x = x.weights
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Distribution:
    """Nonnegative mass vector over the state space (not necessarily normalized).

    Attributes
    ----------
    weights : ndarray, shape (n,)
        Nonnegative mass per state, in mass units.
    mass : float
        Cached sum of the weights.
    """

    weights: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ShapeMismatchError(f"weights must be 1-D, got shape {w.shape}")
        if w.size == 0:
            raise EmptyInputError("weights must not be empty")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise NonnegativityError("weights must be finite and nonnegative")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "mass", float(w.sum()))

    @property
    def n(self) -> int:
        return self.weights.size

    def normalized(self) -> "Distribution":
        """Return the unit-mass rescaling of this distribution."""
        if self.mass <= 0:
            raise MassMismatchError("cannot normalize a zero-mass distribution")
        return Distribution(self.weights / self.mass)


@dataclass(frozen=True, eq=False)
class MarginalPair:
    """One observed snapshot pair (mu, nu) sharing a common positive mass."""

    mu: Distribution
    nu: Distribution

    def __post_init__(self):
        if self.mu.n != self.nu.n:
            raise ShapeMismatchError(
                f"mu has {self.mu.n} states but nu has {self.nu.n}"
            )
        if abs(self.mu.mass - self.nu.mass) > MASS_RTOL * max(self.mu.mass, 1.0):
            raise MassMismatchError(
                f"marginal masses differ: {self.mu.mass!r} vs {self.nu.mass!r}"
            )
        if self.mu.mass <= 0:
            raise MassMismatchError("marginal pairs must carry positive mass")

    @property
    def n(self) -> int:
        return self.mu.n

    @property
    def mass(self) -> float:
        """Common mass of the pair (by convention, the mass of mu)."""
        return self.mu.mass


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """A collection of marginal pairs over a common state space.

    ``support_mask[i, j]`` is True iff some pair has mu(i) > 0 and nu(j) > 0;
    outside the mask every feasible plan entry is pinned to zero, and solvers
    restrict the problem to the remaining variables.
    """

    n: int
    pairs: tuple[MarginalPair, ...]
    support_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise EmptyInputError("an observation set needs at least one pair")
        for k, pair in enumerate(self.pairs):
            if pair.n != self.n:
                raise ShapeMismatchError(f"pair {k} has {pair.n} states, expected {self.n}")
        mask = np.asarray(self.support_mask, dtype=bool)
        if mask.shape != (self.n, self.n):
            raise ShapeMismatchError("support_mask must be n-by-n")
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "support_mask", mask)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def mu_matrix(self) -> np.ndarray:
        """Stack the initial marginals into a (T, n) array."""
        return np.array([p.mu.weights for p in self.pairs])

    def nu_matrix(self) -> np.ndarray:
        """Stack the final marginals into a (T, n) array."""
        return np.array([p.nu.weights for p in self.pairs])


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Nonnegative n-by-n mass transfer matrix for a single pair."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ShapeMismatchError(f"plan must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise NonnegativityError("plan entries must be finite and nonnegative")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def col_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=0)


@dataclass(frozen=True, eq=False)
class AggregatePlan:
    """Entrywise sum of the transport plans of all pairs."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ShapeMismatchError(f"aggregate must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise NonnegativityError("aggregate entries must be finite and nonnegative")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic n-by-n matrix of transition probabilities."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ShapeMismatchError(f"transition matrix must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise NonnegativityError("transition entries must be finite and nonnegative")
        bad = np.abs(e.sum(axis=1) - 1.0) > ROW_SUM_ATOL
        if bad.any():
            raise InvalidTransitionError(
                f"rows {np.nonzero(bad)[0].tolist()} do not sum to 1 within {ROW_SUM_ATOL}"
            )
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def kl_divergence(p, q) -> float:
    """Normalized Kullback-Leibler divergence sum(p * log(p / q)).

    Uses the convention 0 log 0 = 0.  Wherever q vanishes but p does not,
    the divergence is infinite and ``inf`` is returned (not an error), so
    objective evaluation on infeasible iterates stays total.  The value may
    be negative when the total masses of p and q differ.

    Parameters
    ----------
    p, q : array_like or Distribution or plan
        Nonnegative vectors or matrices of identical shape.
    """
    p = np.asarray(as_matrix(p) if hasattr(p, "entries") else as_vector(p), dtype=float)
    q = np.asarray(as_matrix(q) if hasattr(q, "entries") else as_vector(q), dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatchError(f"shapes {p.shape} and {q.shape} differ")
    pos = p > 0
    if np.any(q[pos] == 0):
        return float("inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    return float(terms.sum())


def frobenius_error(a, b) -> float:
    """Frobenius norm of the difference of two matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes {a.shape} and {b.shape} differ")
    return float(np.sqrt(((a - b) ** 2).sum()))


def recover_transition(xbar, on_zero_row: str = "uniform") -> tuple[TransitionMatrix, np.ndarray]:
    """Row-normalize an aggregate plan into a transition matrix.

    Rows of the aggregate that sum to zero carry no information about the
    corresponding state.  With ``on_zero_row="uniform"`` (the default) such
    rows become uniform and are flagged; with ``"error"`` a ZeroRowError is
    raised.  The recovery is invariant to positive rescaling of ``xbar``.

    Returns
    -------
    (TransitionMatrix, ndarray of bool)
        The estimate and a per-row flag marking zero-sum rows.
    """
    x = as_matrix(xbar)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeMismatchError(f"aggregate must be square, got shape {x.shape}")
    if np.any(x < 0):
        raise NonnegativityError("aggregate entries must be nonnegative")
    if on_zero_row not in ("uniform", "error"):
        raise ValueError(f"unknown zero-row policy {on_zero_row!r}")
    row_sums = x.sum(axis=1)
    zero_rows = row_sums == 0
    if zero_rows.any() and on_zero_row == "error":
        raise ZeroRowError(f"rows {np.nonzero(zero_rows)[0].tolist()} sum to zero")
    n = x.shape[0]
    safe = np.where(zero_rows, 1.0, row_sums)
    a = x / safe[:, None]
    a[zero_rows] = 1.0 / n
    return TransitionMatrix(a), zero_rows


def independent_coupling(pair: MarginalPair) -> TransportPlan:
    """Product coupling mu nu^T / s of a marginal pair.

    Its row sums equal mu, its column sums equal nu, and it is positive
    exactly where both mu(i) > 0 and nu(j) > 0.
    """
    return TransportPlan(np.outer(pair.mu.weights, pair.nu.weights) / pair.mass)


def build_observation_set(
    pairs: Iterable[tuple[Sequence[float], Sequence[float]]],
    normalize: bool = False,
) -> ObservationSet:
    """Assemble raw (mu, nu) vector pairs into a validated ObservationSet.

    Each pair must be entrywise nonnegative with matching masses within the
    1e-9 relative tolerance; inconsistent pairs are rejected rather than
    silently rescaled.  With ``normalize=True`` each accepted pair is then
    divided by its common mass so all pairs carry unit mass.

    The support mask records which index pairs (i, j) are witnessed by some
    observation (mu(i) > 0 and nu(j) > 0); entries outside the mask are
    pinned to zero by every downstream solver.
    """
    raw = list(pairs)
    if not raw:
        raise EmptyInputError("no marginal pairs given")
    built = []
    for k, (mu, nu) in enumerate(raw):
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if mu.ndim != 1 or nu.ndim != 1 or mu.shape != nu.shape:
            raise ShapeMismatchError(f"pair {k}: mu shape {mu.shape}, nu shape {nu.shape}")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise NonnegativityError(f"pair {k}: mu has negative or non-finite entries")
        if not np.all(np.isfinite(nu)) or np.any(nu < 0):
            raise NonnegativityError(f"pair {k}: nu has negative or non-finite entries")
        s = mu.sum()
        if abs(s - nu.sum()) > MASS_RTOL * max(s, 1.0):
            raise MassMismatchError(f"pair {k}: masses {s!r} vs {nu.sum()!r} differ")
        if s <= 0:
            raise MassMismatchError(f"pair {k}: zero-mass pairs are rejected")
        if normalize:
            mu = mu / s
            nu = nu / s
        built.append(MarginalPair(Distribution(mu), Distribution(nu)))
    n = built[0].n
    mask = np.zeros((n, n), dtype=bool)
    for pair in built:
        mask |= (pair.mu.weights > 0)[:, None] & (pair.nu.weights > 0)[None, :]
    return ObservationSet(n=n, pairs=tuple(built), support_mask=mask)
