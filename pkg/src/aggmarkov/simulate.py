"""Synthetic aggregate observations and Markov chain analytics.

Generates snapshot pairs from a ground-truth chain by evolving N
indistinguishable particles (or the exact law for N = inf), and provides
the chain-side quantities the experiments need: stationary distribution,
total-variation distance, worst-case mixing curve, and the exact multinomial
transition log-likelihood of a count matrix.

Randomness is counter-based: every draw comes from a Philox generator keyed
by (seed, pair-or-step index, stage), so simulations parallelize with
bit-stable output and any single piece can be reproduced in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln

from .errors import (
    AggmarkovError,
    InvalidTransitionError,
    MarginalMismatchError,
    MassMismatchError,
    NegativeCountError,
    NotConvergedError,
    ReducibleChainError,
    ShapeMismatchError,
)
from .model import (
    Distribution,
    ObservationSet,
    TransitionMatrix,
    as_matrix,
    as_vector,
    build_observation_set,
)

INDEPENDENT = "independent"
SEQUENTIAL = "sequential"

SIMPLEX_UNIFORM = "simplex-uniform"
ENTRYWISE_UNIFORM = "entrywise-uniform"

# Stage codes for the counter-based RNG keying.
_STAGE_LAW = 0
_STAGE_ALLOC = 1
_STAGE_STEP = 2
_STAGE_MATRIX = 3


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """What to simulate: chain size, particle count, pair count, and mode.

    ``n_particles`` may be ``math.inf`` for exact law propagation (the
    zero-noise limit).  In independent mode every pair starts from a fresh
    initial law and evolves one step; in sequential mode a single particle
    population evolves ``n_pairs`` steps and consecutive snapshots form the
    pairs, so nu_t equals mu_{t+1} bit-exactly.
    """

    n: int
    n_particles: float
    n_pairs: int
    mode: str = INDEPENDENT
    seed: int = 0
    initial_law: Distribution | str = SIMPLEX_UNIFORM
    burn_in: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be at least 1")
        n_p = self.n_particles
        if not (math.isinf(n_p) or (float(n_p).is_integer() and n_p >= 1)):
            raise ValueError("n_particles must be a positive integer or inf")
        if self.mode not in (INDEPENDENT, SEQUENTIAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if isinstance(self.initial_law, str) and self.initial_law not in (
            SIMPLEX_UNIFORM,
            ENTRYWISE_UNIFORM,
        ):
            raise ValueError(f"unknown initial law {self.initial_law!r}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


@dataclass(frozen=True, eq=False)
class MixingStats:
    """Worst-case distance to stationarity and the derived mixing time.

    ``tv_curve[t]`` is the exact sup over initial laws of the TV distance
    between the time-t law and the stationary distribution (the sup over
    the simplex is attained at a vertex, so maximizing over basis initial
    states is exact, not sampled).
    """

    stationary: Distribution
    tv_curve: np.ndarray
    mixing_time: int | None
    second_eigenvalue_modulus: float


def _stream(seed: int, index: int, stage: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(stage)))
    return np.random.Generator(np.random.Philox(ss))


def _as_transition(a) -> np.ndarray:
    if isinstance(a, TransitionMatrix):
        return a.entries
    try:
        return TransitionMatrix(as_matrix(a)).entries
    except AggmarkovError as exc:
        raise InvalidTransitionError(str(exc)) from exc


def _draw_law(cfg: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    if isinstance(cfg.initial_law, Distribution):
        if cfg.initial_law.n != cfg.n:
            raise ShapeMismatchError("fixed initial law has the wrong dimension")
        return cfg.initial_law.normalized().weights
    if cfg.initial_law == SIMPLEX_UNIFORM:
        return rng.dirichlet(np.ones(cfg.n))
    draw = rng.uniform(size=cfg.n)
    return draw / draw.sum()


def _allocate(n_particles: int, law: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.multinomial(n_particles, law / law.sum())


def _transition_counts(counts: np.ndarray, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros_like(counts)
    for i, c in enumerate(counts):
        if c:
            out += rng.multinomial(int(c), a[i] / a[i].sum())
    return out


def sample_empirical_marginals(a, cfg: SimulationConfig) -> ObservationSet:
    """Generate snapshot pairs from a ground-truth transition matrix.

    Independent mode draws a fresh initial law per pair, places N particles
    multinomially, applies one transition, and records the empirical
    frequencies before and after; every pair has unit mass.  Sequential
    mode evolves one population for ``burn_in + n_pairs`` steps and pairs
    consecutive snapshots.  With ``n_particles = inf`` the empirical
    frequencies are replaced by the exact laws (nu = A^T mu).
    """
    mat = _as_transition(a)
    if mat.shape[0] != cfg.n:
        raise ShapeMismatchError(
            f"transition is {mat.shape[0]}-state but config says n={cfg.n}"
        )
    exact = math.isinf(cfg.n_particles)
    n_part = None if exact else int(cfg.n_particles)
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    if cfg.mode == INDEPENDENT:
        for t in range(cfg.n_pairs):
            law = _draw_law(cfg, _stream(cfg.seed, t, _STAGE_LAW))
            if exact:
                mu = law
                nu = mu @ mat
            else:
                counts = _allocate(n_part, law, _stream(cfg.seed, t, _STAGE_ALLOC))
                moved = _transition_counts(counts, mat, _stream(cfg.seed, t, _STAGE_STEP))
                mu = counts / n_part
                nu = moved / n_part
            pairs.append((mu, nu))
    else:
        law = _draw_law(cfg, _stream(cfg.seed, 0, _STAGE_LAW))
        steps = cfg.burn_in + cfg.n_pairs
        if exact:
            snapshots = [law]
            for _ in range(steps):
                snapshots.append(snapshots[-1] @ mat)
        else:
            counts = _allocate(n_part, law, _stream(cfg.seed, 0, _STAGE_ALLOC))
            snapshots = [counts / n_part]
            for step in range(1, steps + 1):
                counts = _transition_counts(counts, mat, _stream(cfg.seed, step, _STAGE_STEP))
                snapshots.append(counts / n_part)
        for t in range(cfg.burn_in, cfg.burn_in + cfg.n_pairs):
            pairs.append((snapshots[t], snapshots[t + 1]))
    return build_observation_set(pairs, normalize=False)


def log_transition_probability(mu0, a, counts) -> float:
    """Exact log-probability that N particles realize a given count matrix.

    ``counts[i, j]`` particles move from state i to state j; row i must
    distribute exactly the ``mu0[i]`` particles that start there.  The value
    is computed through log-gamma: sum_i [log mu0_i! - sum_j log m_ij!] +
    sum_ij m_ij log a_ij, and is -inf when mass sits on a zero of the
    transition matrix.
    """
    mu0 = np.asarray(as_vector(mu0))
    m = np.asarray(as_matrix(counts))
    mat = _as_transition(a)
    if mu0.ndim != 1 or m.shape != (mu0.size, mu0.size) or mat.shape != m.shape:
        raise ShapeMismatchError("dimensions of mu0, counts, and transition disagree")
    for name, arr in (("mu0", mu0), ("counts", m)):
        if np.any(arr < 0) or not np.all(np.equal(np.mod(arr, 1), 0)):
            raise NegativeCountError(f"{name} must contain nonnegative integers")
    if not np.array_equal(m.sum(axis=1), mu0):
        raise MarginalMismatchError("count-matrix row sums must equal mu0 exactly")
    moving = m > 0
    if np.any(moving & (mat == 0)):
        return float("-inf")
    value = gammaln(mu0 + 1).sum() - gammaln(m + 1).sum()
    value += float((m[moving] * np.log(mat[moving])).sum())
    return float(value)


def _require_irreducible(mat: np.ndarray) -> None:
    n_comp, _ = connected_components(
        csr_matrix(mat > 0), directed=True, connection="strong"
    )
    if n_comp != 1:
        raise ReducibleChainError(
            f"support graph has {n_comp} strongly connected components"
        )


def stationary_distribution(a, tol: float = 1e-10) -> Distribution:
    """Stationary law pi with A^T pi = pi for an irreducible chain."""
    mat = _as_transition(a)
    _require_irreducible(mat)
    n = mat.shape[0]
    system = np.vstack([mat.T - np.eye(n), np.ones(n)])
    rhs = np.concatenate([np.zeros(n), [1.0]])
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    if np.abs(mat.T @ pi - pi).sum() > tol:
        raise NotConvergedError("stationary distribution residual above tolerance")
    return Distribution(pi)


def tv_distance(p, q) -> float:
    """Total variation distance, half the L1 distance of two equal-mass vectors."""
    pv = as_vector(p)
    qv = as_vector(q)
    if pv.shape != qv.shape:
        raise ShapeMismatchError(f"shapes {pv.shape} and {qv.shape} differ")
    if abs(pv.sum() - qv.sum()) > 1e-9 * max(pv.sum(), 1.0):
        raise MassMismatchError("tv_distance requires equal masses")
    return float(0.5 * np.abs(pv - qv).sum())


def mixing_stats(a, eps: float, horizon: int) -> MixingStats:
    """Worst-case TV distance to stationarity over time, and the mixing time.

    ``mixing_time`` is the first t with tv_curve[t] <= eps, or None if the
    curve stays above eps through the horizon (as for periodic chains).
    """
    mat = _as_transition(a)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    pi = stationary_distribution(mat).weights
    power = np.eye(mat.shape[0])
    curve = np.empty(horizon + 1)
    mixing_time = None
    for t in range(horizon + 1):
        curve[t] = 0.5 * np.abs(power - pi[None, :]).sum(axis=1).max()
        if mixing_time is None and curve[t] <= eps:
            mixing_time = t
        power = power @ mat
    eigenvalues = np.sort(np.abs(np.linalg.eigvals(mat)))[::-1]
    alpha = float(eigenvalues[1]) if eigenvalues.size > 1 else 0.0
    return MixingStats(
        stationary=Distribution(pi),
        tv_curve=curve,
        mixing_time=mixing_time,
        second_eigenvalue_modulus=alpha,
    )


def random_stochastic_matrix(
    n: int, seed: int, strictly_positive: bool = False, min_entry: float = 1e-3
) -> TransitionMatrix:
    """Random row-stochastic matrix with rows drawn uniformly from the simplex.

    With ``strictly_positive`` every entry is lifted by ``min_entry`` before
    renormalization, which bounds the smallest entry below by
    min_entry / (1 + n * min_entry).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = _stream(seed, 0, _STAGE_MATRIX)
    rows = rng.dirichlet(np.ones(n), size=n)
    if strictly_positive:
        rows = rows + min_entry
    rows = rows / rows.sum(axis=1, keepdims=True)
    return TransitionMatrix(rows)


def benchmark_matrix() -> TransitionMatrix:
    """Built-in 5-state benchmark chain (a published flow-cytometry estimate).

    This is the fixed transition matrix used by the canned experiment modes;
    the CLI exposes it as ``--transition paper``.
    """
    return TransitionMatrix(
        np.array(
            [
                [0.48, 0.50, 0.00, 0.02, 0.00],
                [0.33, 0.27, 0.00, 0.40, 0.00],
                [0.00, 0.00, 0.00, 0.54, 0.46],
                [0.26, 0.00, 0.45, 0.29, 0.00],
                [0.00, 0.00, 0.51, 0.00, 0.49],
            ]
        )
    )
