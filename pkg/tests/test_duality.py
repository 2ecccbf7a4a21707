import numpy as np
import pytest

from aggmarkov import (
    AggregatePlan,
    DualScalings,
    EstimateResult,
    EstimateStatus,
    NotRankOneError,
    TransportPlan,
    build_observation_set,
    check_dual_feasibility,
    dual_objective,
    duality_gap,
    estimate,
    extract_dual_scalings,
    objective_value,
    primal_span_certificate,
    recover_transition,
    uniqueness_certificate,
)
from aggmarkov.duality import (
    VERDICT_CERTIFIED,
    VERDICT_NOT_UNIQUE,
    VERDICT_UNDETERMINED,
    scalings_dual_value,
)
from conftest import converged_estimate, random_observations


def make_result(plans):
    plans = [np.asarray(p, dtype=float) for p in plans]
    aggregate = sum(plans)
    transition, flags = recover_transition(aggregate)
    return EstimateResult(
        plans=tuple(TransportPlan(p) for p in plans),
        aggregate=AggregatePlan(aggregate),
        transition=transition,
        objective_history=(),
        outer_iterations=0,
        status=EstimateStatus.CONVERGED,
        zero_row_flags=flags,
    )


def manual_scalings(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return DualScalings(
        u=u,
        v=v,
        gauge=np.ones(u.shape[0]),
        extrapolated_u=u == 0,
        extrapolated_v=v == 0,
    )


class TestExtraction:
    def test_single_pair_gives_unit_scalings(self):
        plan = np.array([[0.3, 0.2], [0.1, 0.4]])
        scalings = extract_dual_scalings(make_result([plan]))
        assert np.allclose(scalings.u, [[1.0, 1.0]], atol=1e-12)
        assert np.allclose(scalings.v, [[1.0, 1.0]], atol=1e-12)

    def test_equal_halves(self):
        plan = np.array([[0.3, 0.2], [0.1, 0.4]])
        scalings = extract_dual_scalings(make_result([plan, plan]))
        assert np.allclose(scalings.u, 1.0, atol=1e-12)
        assert np.allclose(scalings.v, 0.5, atol=1e-12)
        # min-norm fit splits log(1/2) evenly; the gauge absorbed sqrt(1/2)
        assert np.allclose(scalings.gauge, np.sqrt(0.5))

    def test_perturbed_plans_are_rejected(self):
        rng = np.random.default_rng(50)
        plans = [rng.random((3, 3)) + 0.1 for _ in range(2)]
        with pytest.raises(NotRankOneError):
            extract_dual_scalings(make_result(plans))

    def test_unoccupied_states_are_flagged_and_zero(self):
        a_true = np.array([[0.9, 0.1], [0.2, 0.8]])
        obs = build_observation_set([([1, 0], a_true[0]), ([0, 1], a_true[1])])
        scalings = extract_dual_scalings(estimate(obs))
        assert scalings.extrapolated_u.tolist() == [[False, True], [True, False]]
        assert scalings.u[0, 1] == 0.0 and scalings.u[1, 0] == 0.0
        assert not scalings.extrapolated_v.any()

    def test_factorization_matches_ratios_on_support(self):
        rng = np.random.default_rng(51)
        obs = random_observations(rng, 4, 6)
        result = converged_estimate(obs)
        scalings = extract_dual_scalings(result)
        xbar = result.aggregate.entries
        for t, plan in enumerate(result.plans):
            heavy = plan.entries >= 1e-9 * plan.entries.sum()
            fitted = xbar * np.outer(scalings.u[t], scalings.v[t])
            rel = np.abs(fitted[heavy] - plan.entries[heavy]) / plan.entries[heavy]
            assert rel.max() <= 1e-6


class TestDualObjective:
    def test_zero_multipliers(self):
        obs = build_observation_set([([1, 1], [1, 1])])
        assert dual_objective([np.zeros(2)], [np.zeros(2)], obs) == 0.0

    def test_hand_inner_product(self):
        obs = build_observation_set([([0.5, 0.5], [0.5, 0.5])])
        value = dual_objective([np.array([1.0, 1.0])], [np.array([0.0, 0.0])], obs)
        assert value == pytest.approx(1.0, abs=1e-15)

    def test_zero_gap_at_single_pair_fixed_point(self):
        obs = build_observation_set([([1, 1], [1, 1])])
        result = estimate(obs)
        scalings = extract_dual_scalings(result)
        lam, rho = scalings.log_factors()
        dual = dual_objective(list(lam), list(rho), obs)
        primal = objective_value(result.plans, result.aggregate)
        assert primal == pytest.approx(0.0, abs=1e-12)
        assert dual == pytest.approx(0.0, abs=1e-12)

    def test_zero_marginal_entries_are_skipped(self):
        obs = build_observation_set([([1.0, 0.0], [1.0, 0.0])])
        lam = np.array([2.0, -np.inf])
        rho = np.array([0.5, -np.inf])
        assert dual_objective([lam], [rho], obs) == pytest.approx(2.5)

    def test_gap_small_on_converged_instances(self):
        rng = np.random.default_rng(52)
        for _ in range(3):
            obs = random_observations(rng, 4, 7)
            result = converged_estimate(obs)
            primal = objective_value(result.plans, result.aggregate)
            gap = duality_gap(result, obs)
            assert abs(gap) <= 1e-6 * (1 + abs(primal))


class TestDualFeasibility:
    def test_converged_instance_is_feasible_and_active_on_support(self):
        rng = np.random.default_rng(53)
        obs = random_observations(rng, 4, 8)
        result = converged_estimate(obs)
        scalings = extract_dual_scalings(result)
        report = check_dual_feasibility(scalings)
        assert report.max_constraint <= 1 + 1e-6
        xbar = result.aggregate.entries
        support = xbar > 1e-12 * xbar.max()
        assert np.all(np.abs(report.constraint_values[support] - 1.0) <= 1e-6)
        assert report.n_violated == 0

    def test_single_pair_all_active_at_one(self):
        result = estimate(build_observation_set([([1, 1], [1, 1])]))
        report = check_dual_feasibility(extract_dual_scalings(result))
        assert np.allclose(report.constraint_values, 1.0, atol=1e-9)
        assert np.all(report.classification == "active")

    def test_hand_built_violation(self):
        scalings = manual_scalings([[2.0, 2.0]], [[2.0, 2.0]])
        report = check_dual_feasibility(scalings)
        assert np.allclose(report.constraint_values, 4.0)
        assert np.all(report.classification == "violated")
        assert np.allclose(report.violation, 3.0)
        assert report.max_constraint == pytest.approx(4.0)


class TestComplementarySlackness:
    def test_inactive_entries_carry_no_aggregate_mass(self):
        obs = build_observation_set([([1, 0], [0, 1]), ([0, 1], [1, 0])])
        result = estimate(obs)
        scalings = extract_dual_scalings(result)
        report = check_dual_feasibility(scalings)
        values = report.constraint_values
        assert values[0, 1] == pytest.approx(1.0, abs=1e-9)
        assert values[1, 0] == pytest.approx(1.0, abs=1e-9)
        assert report.classification[0, 0] == "inactive"
        assert report.classification[1, 1] == "inactive"
        assert result.aggregate.entries[0, 0] <= 1e-10
        assert result.aggregate.entries[1, 1] <= 1e-10

    def test_scalar_trichotomy_on_converged_output(self):
        rng = np.random.default_rng(54)
        obs = random_observations(rng, 4, 6)
        result = converged_estimate(obs)
        scalings = extract_dual_scalings(result)
        values = scalings.constraint_values()
        plans = np.array([p.entries for p in result.plans])
        xbar = result.aggregate.entries
        mass = xbar.sum()
        for i in range(4):
            for j in range(4):
                beta = values[i, j]
                if beta < 1 - 1e-6:
                    assert np.all(plans[:, i, j] <= 1e-10 * mass)
                elif abs(beta - 1) <= 1e-6 and xbar[i, j] > 1e-9 * mass:
                    ratios = plans[:, i, j] / xbar[i, j]
                    expected = scalings.u[:, i] * scalings.v[:, j]
                    assert np.abs(ratios - expected).max() <= 1e-6


class TestUniquenessCertificates:
    def test_single_pair_not_unique(self):
        result = estimate(build_observation_set([([1, 1], [1, 1])]))
        cert = uniqueness_certificate(extract_dual_scalings(result), result)
        assert cert.rank_u == 1 and cert.rank_v == 1
        assert not cert.certified_unique
        assert cert.aggregate_strictly_positive
        assert cert.verdict == VERDICT_NOT_UNIQUE

    def test_basis_pairs_certified(self):
        a_true = np.array([[0.9, 0.1], [0.2, 0.8]])
        obs = build_observation_set([([1, 0], a_true[0]), ([0, 1], a_true[1])])
        result = estimate(obs)
        cert = uniqueness_certificate(extract_dual_scalings(result), result)
        assert cert.certified_unique
        assert cert.verdict == VERDICT_CERTIFIED
        assert cert.rank_u == 2

    def test_fewer_pairs_than_states_never_certified(self):
        rng = np.random.default_rng(55)
        for n, t in ((3, 2), (4, 3), (5, 1)):
            obs = random_observations(rng, n, t)
            result = converged_estimate(obs)
            cert = uniqueness_certificate(extract_dual_scalings(result), result)
            assert not cert.certified_unique

    def test_gauge_invariance_of_certificates(self):
        rng = np.random.default_rng(56)
        obs = random_observations(rng, 3, 5)
        result = converged_estimate(obs)
        scalings = extract_dual_scalings(result)
        cert = uniqueness_certificate(scalings, result)
        factors = rng.uniform(0.1, 10.0, size=scalings.n_pairs)
        rescaled = DualScalings(
            u=scalings.u * factors[:, None],
            v=scalings.v / factors[:, None],
            gauge=scalings.gauge,
            extrapolated_u=scalings.extrapolated_u,
            extrapolated_v=scalings.extrapolated_v,
        )
        cert2 = uniqueness_certificate(rescaled, result)
        assert cert2.certified_unique == cert.certified_unique
        assert cert2.rank_u == cert.rank_u
        assert cert2.rank_v == cert.rank_v
        assert np.allclose(
            rescaled.constraint_values(), scalings.constraint_values(), rtol=1e-12
        )

    def test_inactive_set_matches_feasibility_report(self):
        obs = build_observation_set([([1, 0], [0, 1]), ([0, 1], [1, 0])])
        result = estimate(obs)
        scalings = extract_dual_scalings(result)
        cert = uniqueness_certificate(scalings, result)
        assert set(cert.inactive_set) == {(0, 0), (1, 1)}


class TestPrimalCertificate:
    def test_single_pair_rank_one(self):
        result = estimate(build_observation_set([([1, 1], [1, 1])]))
        cert = primal_span_certificate(result)
        assert cert.rank_u == 1 and cert.rank_v == 1
        assert not cert.certified_unique
        assert cert.verdict == VERDICT_NOT_UNIQUE

    def test_identical_plans_rank_one(self):
        plan = np.array([[0.3, 0.2], [0.1, 0.4]])
        cert = primal_span_certificate(make_result([plan, plan]))
        assert cert.rank_u == 1 and cert.rank_v == 1
        assert not cert.certified_unique

    def test_zero_aggregate_entries_give_undetermined(self):
        obs = build_observation_set([([1, 0], [0, 1]), ([0, 1], [1, 0])])
        result = estimate(obs)
        cert = primal_span_certificate(result)
        assert not cert.aggregate_strictly_positive
        assert cert.verdict == VERDICT_UNDETERMINED

    def test_agreement_with_dual_certificate(self):
        rng = np.random.default_rng(57)
        checked = 0
        for _ in range(12):
            n = int(rng.integers(2, 5))
            t = int(rng.integers(1, 9))
            obs = random_observations(rng, n, t)
            result = converged_estimate(obs, max_outer=12000)
            if result.status is not EstimateStatus.CONVERGED:
                continue
            dual_cert = uniqueness_certificate(extract_dual_scalings(result), result)
            primal_cert = primal_span_certificate(result)
            if not dual_cert.aggregate_strictly_positive:
                continue
            checked += 1
            assert primal_cert.certified_unique == dual_cert.certified_unique
            assert primal_cert.rank_u == dual_cert.rank_u
            assert primal_cert.rank_v == dual_cert.rank_v
        assert checked >= 5


class TestScalingsDualValue:
    def test_matches_dual_objective_on_support(self):
        rng = np.random.default_rng(58)
        obs = random_observations(rng, 3, 4)
        result = converged_estimate(obs)
        scalings = extract_dual_scalings(result)
        lam, rho = scalings.log_factors()
        by_objective = dual_objective(list(lam), list(rho), obs)
        by_scalings = scalings_dual_value(scalings, obs.mu_matrix(), obs.nu_matrix())
        assert by_objective == pytest.approx(by_scalings, rel=1e-12)
