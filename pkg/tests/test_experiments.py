import math
import warnings

import numpy as np
import pytest

from aggmarkov import (
    CellRow,
    EstimatorConfig,
    ExperimentConfig,
    InsufficientPointsError,
    NonPositiveValueError,
    TransitionMatrix,
    build_error_curve,
    cell_seed,
    default_experiment_config,
    fit_loglog_slope,
    plot_error_curve,
    run_cell,
    run_experiment,
    summarize,
    write_error_curve_csv,
)

A2 = TransitionMatrix([[0.9, 0.1], [0.2, 0.8]])


def tiny_config(**overrides):
    base = dict(
        mode="independent",
        n=2,
        particle_counts=(math.inf,),
        tau_grid=(5,),
        repeats=1,
        seed=1,
        transition=A2,
        estimator=EstimatorConfig(max_outer=300),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestFitLogLogSlope:
    def test_synthetic_minus_half(self):
        taus = [8, 16, 32, 64, 128]
        points = [(t, 3.0 * t**-0.5) for t in taus]
        assert fit_loglog_slope(points) == pytest.approx(-0.5, abs=1e-12)

    def test_constant_errors(self):
        points = [(t, 0.7) for t in (10, 20, 40, 80)]
        assert fit_loglog_slope(points) == pytest.approx(0.0, abs=1e-12)

    def test_inverse_decay(self):
        points = [(t, 5.0 / t) for t in (10, 20, 40, 80)]
        assert fit_loglog_slope(points) == pytest.approx(-1.0, abs=1e-12)

    def test_too_few_points(self):
        with pytest.raises(InsufficientPointsError):
            fit_loglog_slope([(1, 1.0), (2, 0.5)])

    def test_nonpositive_errors(self):
        with pytest.raises(NonPositiveValueError):
            fit_loglog_slope([(1, 1.0), (2, 0.5), (4, 0.0)])

    def test_tail_window_never_below_three_points(self):
        # four points with a kink: only the flat tail would give slope 0, but
        # the window is widened to three points
        points = [(1, 1.0), (2, 0.5), (4, 0.5), (8, 0.5)]
        slope = fit_loglog_slope(points, tail_fraction=0.25)
        assert slope == pytest.approx(0.0, abs=1e-12)


class TestSummarize:
    def rows(self, values, n=10.0, tau=5):
        return [
            CellRow(n_particles=n, tau=tau, repeat=k, frobenius_error=v)
            for k, v in enumerate(values)
        ]

    def test_constant_repeats_collapse(self):
        (summary,) = summarize(self.rows([1.0, 1.0, 1.0, 1.0]))
        assert summary.mean == 1.0
        assert summary.ci_low == 1.0
        assert summary.ci_high == 1.0

    def test_hand_computed_interval(self):
        (summary,) = summarize(self.rows([0.0, 2.0]))
        assert summary.mean == 1.0
        assert summary.ci_low == pytest.approx(1.0 - 1.96, abs=1e-12)
        assert summary.ci_high == pytest.approx(1.0 + 1.96, abs=1e-12)

    def test_single_repeat(self):
        (summary,) = summarize(self.rows([0.3]))
        assert summary.mean == 0.3
        assert summary.ci_low == 0.3 == summary.ci_high

    def test_nan_rows_excluded(self):
        (summary,) = summarize(self.rows([0.5, float("nan"), 1.5]))
        assert summary.mean == 1.0

    def test_mean_inside_interval(self):
        rng = np.random.default_rng(0)
        rows = self.rows(list(rng.random(12)))
        (summary,) = summarize(rows)
        assert summary.ci_low <= summary.mean <= summary.ci_high


class TestRunExperiment:
    def test_noise_free_single_cell(self):
        curve = run_experiment(tiny_config())
        assert len(curve.rows) == 1
        assert curve.rows[0].frobenius_error <= 1e-3

    def test_deterministic_rows_and_bytes(self, tmp_path):
        cfg = tiny_config(tau_grid=(3, 5), repeats=2, particle_counts=(50.0,))
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        curve1 = run_experiment(cfg, flush_path=out1)
        curve2 = run_experiment(cfg, flush_path=out2)
        assert curve1.rows == curve2.rows
        assert out1.read_bytes() == out2.read_bytes()

    def test_parallel_matches_sequential(self):
        cfg = tiny_config(tau_grid=(3, 4), repeats=2, particle_counts=(20.0,))
        sequential = run_experiment(cfg, jobs=1)
        parallel = run_experiment(cfg, jobs=2)
        assert sequential.rows == parallel.rows

    def test_cells_rederivable_from_sub_seed(self):
        cfg = tiny_config(tau_grid=(4,), repeats=3, particle_counts=(30.0,))
        curve = run_experiment(cfg)
        for row in curve.rows:
            again = run_cell(cfg, row.n_particles, row.tau, row.repeat)
            assert again.row.frobenius_error == row.frobenius_error
            assert again.sub_seed == cell_seed(cfg.seed, row.n_particles, row.tau, row.repeat)

    def test_on_cell_callback_in_canonical_order(self):
        cfg = tiny_config(tau_grid=(3, 4), repeats=2, particle_counts=(20.0, 40.0))
        seen = []
        run_experiment(cfg, on_cell=lambda outcome: seen.append(outcome.row))
        keys = [(r.n_particles, r.tau, r.repeat) for r in seen]
        assert keys == sorted(keys)

    def test_sequential_random_mode_uses_positive_truth_per_repeat(self):
        cfg = ExperimentConfig(
            mode="sequential-random",
            n=3,
            particle_counts=(50.0,),
            tau_grid=(10,),
            repeats=2,
            seed=5,
            estimator=EstimatorConfig(max_outer=100),
        )
        truths = {}
        run_experiment(cfg, on_cell=lambda o: truths.setdefault(o.row.repeat, o.truth))
        assert np.all(truths[0].entries > 0)
        assert not np.array_equal(truths[0].entries, truths[1].entries)

    def test_monotone_information_soft_property(self):
        # More independent exact pairs should not hurt on average; warn only.
        n = 2
        cfg = tiny_config(tau_grid=(n, 4 * n), repeats=10, estimator=EstimatorConfig(max_outer=200))
        curve = run_experiment(cfg)
        means = {s.tau: s.mean for s in curve.summaries}
        if means[4 * n] > means[n]:
            warnings.warn("mean error did not improve with 4x more pairs")


class TestCsvFormat:
    def test_layout_and_blocks(self, tmp_path):
        cfg = tiny_config(tau_grid=(3, 4, 5), repeats=2, particle_counts=(25.0,))
        path = tmp_path / "curve.csv"
        curve = run_experiment(cfg, flush_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n_particles,tau,repeat,frobenius_error"
        n_rows = len(curve.rows)
        for line in lines[1 : 1 + n_rows]:
            parts = line.split(",")
            assert len(parts) == 4
            assert parts[0] == "25"
        assert lines[1 + n_rows] == "# summary: n_particles,tau,mean,ci_low,ci_high"
        summary_lines = [l for l in lines if l.startswith("# summary: 25")]
        assert len(summary_lines) == 3
        slope_header = lines.index("# slope: n_particles,slope")
        assert slope_header > n_rows
        assert any(l.startswith("# slope: 25,") for l in lines[slope_header + 1 :])

    def test_infinite_particles_written_as_inf(self, tmp_path):
        path = tmp_path / "curve.csv"
        run_experiment(tiny_config(), flush_path=path)
        assert path.read_text().splitlines()[1].startswith("inf,5,0,")

    def test_ci_low_floored_at_zero_for_display(self, tmp_path):
        rows = [
            CellRow(n_particles=10.0, tau=5, repeat=0, frobenius_error=0.0),
            CellRow(n_particles=10.0, tau=5, repeat=1, frobenius_error=2.0),
        ]
        cfg = tiny_config(particle_counts=(10.0,), tau_grid=(5,), repeats=2)
        curve = build_error_curve(cfg, rows)
        assert curve.summaries[0].ci_low == pytest.approx(-0.96)
        path = tmp_path / "c.csv"
        write_error_curve_csv(curve, path)
        display = [l for l in path.read_text().splitlines() if l.startswith("# summary: 10")]
        assert display[0] == "# summary: 10,5,1.0,0.0,2.96"

    def test_write_matches_flush(self, tmp_path):
        cfg = tiny_config(tau_grid=(3, 4), repeats=2, particle_counts=(20.0,))
        flushed = tmp_path / "flushed.csv"
        curve = run_experiment(cfg, flush_path=flushed)
        rewritten = tmp_path / "rewritten.csv"
        write_error_curve_csv(curve, rewritten)
        assert flushed.read_bytes() == rewritten.read_bytes()


class TestPlot:
    def test_svg_written(self, tmp_path):
        cfg = tiny_config(tau_grid=(3, 4, 5), repeats=2, particle_counts=(25.0, math.inf))
        curve = run_experiment(cfg)
        path = tmp_path / "curve.svg"
        plot_error_curve(curve, path)
        text = path.read_text()
        assert "<svg" in text


class TestConfigValidation:
    def test_default_configs(self):
        independent = default_experiment_config("independent")
        assert independent.tau_grid == (8, 16, 32, 64, 128, 256)
        sequential = default_experiment_config("sequential-paper")
        assert sequential.tau_grid == (50, 100, 200, 400, 800, 1600)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            tiny_config(mode="bogus")

    def test_tau_grid_must_increase(self):
        with pytest.raises(ValueError):
            tiny_config(tau_grid=(5, 5))

    def test_paper_modes_need_five_states_or_custom_transition(self):
        with pytest.raises(ValueError):
            ExperimentConfig(
                mode="independent",
                n=3,
                particle_counts=(10.0,),
                tau_grid=(5,),
            )
