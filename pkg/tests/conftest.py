"""Shared helpers for the test suite."""

import numpy as np

from aggmarkov import (
    EstimatorConfig,
    build_observation_set,
    estimate,
)


def random_observations(rng, n, n_pairs):
    """Random unit-mass marginal pairs drawn uniformly from the simplex."""
    mus = rng.dirichlet(np.ones(n), size=n_pairs)
    nus = rng.dirichlet(np.ones(n), size=n_pairs)
    return build_observation_set(list(zip(mus, nus)))


def converged_estimate(obs, **overrides):
    """Estimate with a strict dual-residual stopping gate (tight optimum)."""
    cfg = EstimatorConfig(
        dual_residual_tol=overrides.pop("dual_residual_tol", 5e-7),
        max_outer=overrides.pop("max_outer", 30000),
        **overrides,
    )
    return estimate(obs, cfg)


def assert_monotone_history(history, slack=1e-10):
    h = list(history)
    for i in range(len(h) - 1):
        assert h[i + 1] <= h[i] + slack, (
            f"objective increased at step {i}: {h[i]!r} -> {h[i + 1]!r}"
        )
