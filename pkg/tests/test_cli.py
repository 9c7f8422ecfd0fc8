"""End-to-end tests for the command-line interface."""

import numpy as np
import pytest

from noisycp.cli import main
from noisycp.contamination import build_rr, corrupt_labels


@pytest.fixture
def prob_file(tmp_path):
    """Calibration-style file with noisy labels from randomized response."""
    rng = np.random.default_rng(0)
    n, K = 600, 3
    y = rng.integers(0, K, size=n)
    logits = rng.normal(size=(n, K))
    logits[np.arange(n), y] += 2.5
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y_noisy = corrupt_labels(y, build_rr(K, 0.2), rng)
    lines = ["id,y_noisy,y_true," + ",".join(f"p{k}" for k in range(K))]
    for i in range(n):
        lines.append(f"r{i},{y_noisy[i]},{y[i]}," + ",".join(repr(float(v)) for v in p[i]))
    path = tmp_path / "probs.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestSimulate:
    def test_writes_metrics(self, tmp_path):
        config = tmp_path / "exp.cfg"
        config.write_text("n_cal = 300\nn_test = 200\nK = 3\nd = 5\nreps = 2\nc_reps = 300\nmethods = standard-lc,adaptive\n")
        out = tmp_path / "metrics.csv"
        assert main(["simulate", str(config), "--out", str(out), "--set", "epsilon=0.15"]) == 0
        header, rows = read_csv(out)
        assert header == ["method", "alpha", "rep", "label", "coverage", "avg_size", "n_cal", "seed"]
        assert len(rows) == 2 * 2 * 4

    def test_unknown_key_is_reported(self, tmp_path, capsys):
        config = tmp_path / "exp.cfg"
        config.write_text("speed = 3\n")
        assert main(["simulate", str(config)]) == 2
        assert "ConfigError" in capsys.readouterr().err


class TestCalibrateAndPredict:
    def test_standard_round_trip(self, prob_file, tmp_path, capsys):
        thresholds = tmp_path / "tau.csv"
        assert main(["calibrate", str(prob_file), "--method", "standard-lc", "--alpha", "0.1", "--jitter", "0", "--out", str(thresholds)]) == 0
        header, rows = read_csv(thresholds)
        assert header == ["label", "tau", "method", "alpha", "delta"]
        assert [r[0] for r in rows] == ["0", "1", "2"]
        sets = tmp_path / "sets.csv"
        assert main(["predict", str(prob_file), "--thresholds", str(thresholds), "--jitter", "0", "--out", str(sets)]) == 0
        header, rows = read_csv(sets)
        assert header == ["id", "set"] and len(rows) == 600
        assert "coverage=" in capsys.readouterr().err

    @pytest.mark.parametrize("method", ["adaptive", "adaptive+", "adaptive-ci", "adaptive-cc", "adaptive-marg"])
    def test_adaptive_methods(self, prob_file, tmp_path, method):
        out = tmp_path / "tau.csv"
        args = ["calibrate", str(prob_file), "--method", method, "--noise", "rr", "--epsilon", "0.2", "--c-reps", "500", "--out", str(out)]
        if method == "adaptive-ci":
            args += ["--eps-low", "0.1", "--eps-upp", "0.25"]
        assert main(args) == 0
        _, rows = read_csv(out)
        taus = [float(r[1]) for r in rows]
        assert all(0.0 <= t <= 1.0 for t in taus)
        if method in ("adaptive", "adaptive-ci", "adaptive-cc"):
            assert all(float(r[4]) > 0 for r in rows)

    def test_ctable_cache_is_written(self, prob_file, tmp_path):
        cache = tmp_path / "c.csv"
        args = ["calibrate", str(prob_file), "--method", "adaptive", "--noise", "rr", "--epsilon", "0.2", "--c-reps", "300", "--ctable", str(cache)]
        assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
        assert cache.read_text().startswith("n,c,reps")
        assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_unnormalized_file(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("id,y_noisy,y_true,p0,p1\na,0,0,0.5,0.48\n")
        assert main(["calibrate", str(path)]) == 2
        assert "line 2" in capsys.readouterr().err


class TestFitNoise:
    def test_mismatch_rate(self, capsys):
        assert main(["fit-noise", "--mismatch-rate", "0.1", "--K", "2"]) == 0
        assert capsys.readouterr().out.strip() == "epsilon=0.2"

    def test_rr_fit(self, prob_file, tmp_path):
        out = tmp_path / "fit.txt"
        assert main(["fit-noise", "--clean", str(prob_file), "--noisy", str(prob_file), "--B", "50", "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("kind=rr") and "epsilon_upp=" in text

    def test_general_fit(self, prob_file, tmp_path):
        out = tmp_path / "fit.txt"
        assert main(["fit-noise", "--clean", str(prob_file), "--noisy", str(prob_file), "--model", "general", "--B", "50", "--out", str(out)]) == 0
        assert "V_hat=" in out.read_text()

    def test_missing_inputs(self, capsys):
        assert main(["fit-noise"]) == 2


class TestCTable:
    def test_values_and_cache(self, tmp_path, capsys):
        cache = tmp_path / "c.csv"
        assert main(["ctable", "--n", "1", "10", "--reps", "2000", "--cache", str(cache)]) == 0
        printed = capsys.readouterr().out
        assert printed == cache.read_text()
        rows = [line.split(",") for line in printed.strip().splitlines()[1:]]
        assert [r[0] for r in rows] == ["1", "10"]
        assert abs(float(rows[0][1]) - 0.5) < 0.03
