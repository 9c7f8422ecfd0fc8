"""Tests for the experiment harness, evaluation and score-file ingestion."""

import numpy as np
import pytest

from noisycp.errors import BadLabel, ConfigError, EmptyTestSet, NoisyCPError, NonNormalizedRow, SchemaMismatch
from noisycp.harness import (
    METHODS,
    ExperimentConfig,
    calibrate,
    derive_seed,
    evaluate,
    format_metrics,
    ingest_scores,
    parse_config,
    prepare_repetition,
    run_experiment,
    run_repetition,
)
from noisycp.scores import ScoreMatrix

SMALL = dict(generator="logistic", n_cal=600, n_test=300, K=3, d=5, reps=2, seed=7, c_reps=500)


def small(**changes):
    return ExperimentConfig(**{**SMALL, **changes})


def rows_by(rows, method, label):
    return [r for r in rows if r["method"] == method and r["label"] == label]


class TestSeeds:
    def test_deterministic(self):
        assert derive_seed(1, 2, "data") == derive_seed(1, 2, "data")

    def test_streams_differ(self):
        seeds = {derive_seed(1, 2, s) for s in ("data", "noise", "scores")}
        seeds |= {derive_seed(1, 3, "data"), derive_seed(2, 2, "data")}
        assert len(seeds) == 5


class TestConfig:
    def test_parse_with_comments_and_overrides(self):
        text = "# demo\nK = 3\nmethods = standard-lc, adaptive+\nepsilon = 0.2  # noise level\n"
        config = parse_config(text, {"reps": "4"})
        assert config.K == 3 and config.epsilon == 0.2 and config.reps == 4
        assert config.methods == ("standard-lc", "adaptive+")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config("colour = blue\n")

    def test_bad_method(self):
        with pytest.raises(ConfigError):
            parse_config("methods = standard-lc,magic\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("K = four\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("K 3\n")

    def test_trained_model_needs_training_data(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(model="logistic", n_train=0)


class TestEvaluate:
    def test_full_sets(self):
        report = evaluate(np.ones((5, 3), dtype=bool), [0, 1, 2, 0, 1])
        assert report.coverage == 1.0 and report.avg_size == 3.0

    def test_empty_sets(self):
        report = evaluate(np.zeros((5, 3), dtype=bool), [0, 1, 2, 0, 1])
        assert report.coverage == 0.0 and report.avg_size == 0.0

    def test_four_points(self):
        sets = np.array([[1, 0], [1, 1], [0, 1], [0, 0]], dtype=bool)
        report = evaluate(sets, [0, 0, 0, 1])
        # covered: yes, yes, no, no; sizes 1, 2, 1, 0
        assert report.coverage == 0.5
        assert report.avg_size == 1.0
        np.testing.assert_allclose(report.label_coverage, [2 / 3, 0.0])
        np.testing.assert_allclose(report.label_size, [4 / 3, 0.0])

    def test_empty_test_set(self):
        with pytest.raises(EmptyTestSet):
            evaluate(np.zeros((0, 2), dtype=bool), [])


class TestCalibrateDispatch:
    def test_every_method_runs(self):
        config = small(epsilon=0.2, methods=METHODS, ci_eps_low=0.1, ci_eps_upp=0.25)
        inputs = prepare_repetition(config, 0)
        for method in METHODS:
            tau = calibrate(
                method,
                inputs.cal_scores,
                inputs.y_cal_noisy,
                alpha=0.1,
                V=inputs.V,
                region=inputs.region,
                rho_tilde=inputs.rho_tilde,
                c_table=0.05,
            )
            assert np.all((np.asarray(tau) >= 0) & (np.asarray(tau) <= 1))

    def test_unknown(self):
        with pytest.raises(ConfigError):
            calibrate("nope", ScoreMatrix(np.zeros((2, 2))), [0, 1], alpha=0.1)


class TestRunExperiment:
    def test_byte_identical_reruns(self):
        config = small(methods=("standard-lc", "adaptive+"))
        assert format_metrics(run_experiment(config)) == format_metrics(run_experiment(config))

    def test_worker_count_does_not_matter(self):
        config = small(reps=3, methods=("standard-lc", "adaptive"))
        serial = format_metrics(run_experiment(config))
        parallel = format_metrics(run_experiment(config.replace(workers=2)))
        assert serial == parallel

    def test_single_repetition_reproducible(self):
        config = small()
        full = run_experiment(config)
        assert [r for r in full if r["rep"] == 1] == run_repetition(config, 1)

    def test_zero_noise_adaptive_plus_equals_standard(self):
        config = small(n_cal=1500, noise="none", epsilon=0.0, methods=("standard-lc", "adaptive+"))
        rows = run_experiment(config)
        for label in (-1, 0, 1, 2):
            std = [(r["coverage"], r["avg_size"]) for r in rows_by(rows, "standard-lc", label)]
            plus = [(r["coverage"], r["avg_size"]) for r in rows_by(rows, "adaptive+", label)]
            assert std == plus

    def test_standard_over_covers_under_rr(self):
        config = ExperimentConfig(
            generator="logistic", n_cal=2000, n_test=1000, K=4, d=10, epsilon=0.1, reps=20, seed=3, methods=("standard-lc",)
        )
        cells = [r["coverage"] >= 0.9 for r in run_experiment(config) if r["label"] >= 0]
        assert np.mean(cells) >= 0.95

    @pytest.mark.parametrize("fit", ["rr", "two_level_rr", "general"])
    def test_fitted_noise_models(self, fit):
        config = small(K=4, fit=fit, n_clean=800, B=50, methods=("adaptive", "adaptive-ci"), epsilon=0.1)
        rows = run_experiment(config)
        assert len(rows) == 2 * 2 * 5

    def test_trained_model(self):
        config = small(model="logistic", n_train=500, epochs=50, methods=("standard-lc",))
        assert len(run_experiment(config)) == 2 * 4

    @pytest.mark.parametrize("generator", ["hypercube", "tree"])
    def test_other_generators(self, generator):
        K = 4 if generator == "tree" else 3
        config = small(K=K, d=8, generator=generator, methods=("standard-lc",))
        assert len(run_experiment(config)) == 2 * (K + 1)

    def test_errors_name_the_repetition(self):
        config = small(n_cal=2, K=3, methods=("adaptive",))
        with pytest.raises(NoisyCPError, match="repetition 0"):
            run_experiment(config)

    def test_metrics_header(self):
        text = format_metrics(run_experiment(small(methods=("standard-lc",))))
        assert text.splitlines()[0] == "method,alpha,rep,label,coverage,avg_size,n_cal,seed"


class TestIngest:
    def _write(self, tmp_path, text):
        path = tmp_path / "scores.csv"
        path.write_text(text)
        return path

    def test_three_rows(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,p0,p1\na,0,0,0.7,0.3\nb,1,1,0.2,0.8\nc,1,0,0.5,0.5\n")
        data = ingest_scores(path)
        assert len(data.ids) == 3 and data.K == 2
        np.testing.assert_array_equal(data.y_true, [0, 1, 0])

    def test_unknown_clean_labels(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,p0,p1\na,0,-1,0.7,0.3\nb,1,-1,0.2,0.8\n")
        data = ingest_scores(path)
        assert data.y_true is None and not data.known.any()

    def test_unnormalized_row(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,p0,p1\na,0,0,0.7,0.3\nb,1,1,0.2,0.78\n")
        with pytest.raises(NonNormalizedRow, match="line 3") as info:
            ingest_scores(path)
        assert info.value.line == 3
        data = ingest_scores(path, renormalize=True)
        assert data.values[1].sum() == pytest.approx(1.0)

    def test_score_columns(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,s0,s1\na,0,0,0.1,0.9\n")
        assert ingest_scores(path, scores=True).is_scores
        with pytest.raises(SchemaMismatch):
            ingest_scores(path)

    def test_bad_label(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,p0,p1\na,2,0,0.7,0.3\n")
        with pytest.raises(BadLabel):
            ingest_scores(path)

    def test_ragged_row(self, tmp_path):
        path = self._write(tmp_path, "id,y_noisy,y_true,p0,p1\na,0,0,0.7\n")
        with pytest.raises(SchemaMismatch, match="line 2"):
            ingest_scores(path)
