"""Figure primitives: band arrays, KDE, convergence curves."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from figures.plots import (
    CI_FACTOR,
    gaussian_kde,
    plot_band,
    plot_convergence,
    plot_kde,
    silverman_bandwidth,
)


def write_band(path, x, prior_mean, prior_std, post_mean, post_std):
    with open(path, "w") as fh:
        fh.write("node_id,dim,x,prior_mean,prior_std,post_mean,post_std\n")
        for i in range(len(x)):
            fh.write(f"{i},0,{x[i]},{prior_mean[i]},{prior_std[i]},{post_mean[i]},{post_std[i]}\n")


def write_observations(path, x, values):
    with open(path, "w") as fh:
        fh.write("sensor_id,dim,x,r0,r1\n")
        for i in range(len(x)):
            fh.write(f"{i},0,{x[i]},{values[i]},{values[i]}\n")


class TestBand:
    def test_zero_std_collapses_to_mean(self, tmp_path):
        x = np.linspace(0, 10, 6)
        mean = 2.0 * x
        write_band(tmp_path / "band.csv", x, mean, np.zeros(6), mean, np.zeros(6))
        arrays = plot_band(tmp_path / "band.csv", None, tmp_path / "band.png")
        np.testing.assert_array_equal(arrays["prior_lo"], arrays["prior_mean"])
        np.testing.assert_array_equal(arrays["prior_hi"], arrays["prior_mean"])
        assert (tmp_path / "band.png").exists()

    def test_posterior_band_inside_prior_band(self, tmp_path):
        x = np.linspace(0, 10, 8)
        mean = np.sin(x)
        write_band(tmp_path / "band.csv", x, mean, np.full(8, 1.0), mean, np.full(8, 0.4))
        arrays = plot_band(tmp_path / "band.csv", None, tmp_path / "band.png")
        assert np.all(arrays["post_lo"] >= arrays["prior_lo"])
        assert np.all(arrays["post_hi"] <= arrays["prior_hi"])

    def test_band_uses_95_multiplier(self, tmp_path):
        x = np.array([0.0, 1.0])
        write_band(tmp_path / "band.csv", x, np.zeros(2), np.ones(2), np.zeros(2), np.ones(2))
        arrays = plot_band(tmp_path / "band.csv", None, tmp_path / "band.png")
        np.testing.assert_allclose(arrays["prior_hi"], CI_FACTOR, rtol=1e-12)

    def test_observations_overlay(self, tmp_path):
        x = np.linspace(0, 10, 5)
        write_band(tmp_path / "band.csv", x, x, 0.1 * np.ones(5), x, 0.05 * np.ones(5))
        write_observations(tmp_path / "obs.csv", x[1:4], x[1:4] * 1.1)
        plot_band(tmp_path / "band.csv", tmp_path / "obs.csv", tmp_path / "band.png")
        assert (tmp_path / "band.png").exists()

    def test_schema_mismatch_rejected(self, tmp_path):
        with open(tmp_path / "bad.csv", "w") as fh:
            fh.write("a,b\n1,2\n")
        with pytest.raises(ValueError):
            plot_band(tmp_path / "bad.csv", None, tmp_path / "x.png")


class TestKDE:
    def test_standard_normal_peak_near_zero(self, tmp_path):
        rng = np.random.default_rng(3)
        samples = rng.standard_normal(100_000)
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("sample_id,posterior\n")
            for i, v in enumerate(samples):
                fh.write(f"{i},{v}\n")
        arrays = plot_kde(tmp_path / "s.csv", tmp_path / "kde.png")
        dens = arrays["posterior"]
        peak = dens["grid"][np.argmax(dens["density"])]
        assert abs(peak) < 0.05

    def test_constant_samples_error(self):
        with pytest.raises(ValueError, match="bandwidth"):
            silverman_bandwidth(np.full(500, 3.0))

    def test_too_few_samples_rejected(self, tmp_path):
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("sample_id,posterior\n")
            for i in range(50):
                fh.write(f"{i},{i * 0.01}\n")
        with pytest.raises(ValueError, match="at least 100"):
            plot_kde(tmp_path / "s.csv", tmp_path / "kde.png")

    def test_narrower_posterior_has_taller_mode(self, tmp_path):
        rng = np.random.default_rng(4)
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("sample_id,prior,posterior\n")
            for i in range(5000):
                fh.write(f"{i},{2.0 * rng.standard_normal()},{0.5 * rng.standard_normal()}\n")
        arrays = plot_kde(tmp_path / "s.csv", tmp_path / "kde.png")
        assert arrays["posterior"]["density"].max() > arrays["prior"]["density"].max()

    def test_kde_integrates_to_one(self):
        rng = np.random.default_rng(5)
        samples = rng.standard_normal(2000)
        grid = np.linspace(-6, 6, 2001)
        density = gaussian_kde(samples, grid)
        assert abs(np.trapezoid(density, grid) - 1.0) < 1e-3


class TestConvergence:
    def write_metrics(self, path, n_r, err):
        import json

        with open(path, "w") as fh:
            json.dump({"n_r": n_r, "err": err, "rmsd": err / 2}, fh)

    def test_single_point(self, tmp_path):
        self.write_metrics(tmp_path / "m.json", 10, 0.5)
        arrays = plot_convergence([tmp_path / "m.json"], tmp_path / "conv.png")
        assert arrays["x"].size == 1
        assert (tmp_path / "conv.png").exists()

    def test_monotone_series_preserved(self, tmp_path):
        files = []
        for i, (n_r, err) in enumerate([(1, 3.0), (10, 1.0), (100, 0.3), (1000, 0.1)]):
            f = tmp_path / f"m{i}.json"
            self.write_metrics(f, n_r, err)
            files.append(f)
        arrays = plot_convergence(files[::-1], tmp_path / "conv.png")  # order-independent
        np.testing.assert_array_equal(arrays["x"], [1, 10, 100, 1000])
        assert np.all(np.diff(arrays["y"]) < 0)

    def test_missing_metric_rejected(self, tmp_path):
        import json

        with open(tmp_path / "m.json", "w") as fh:
            json.dump({"n_r": 5}, fh)
        with pytest.raises(ValueError):
            plot_convergence([tmp_path / "m.json"], tmp_path / "x.png")

    def test_no_files_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            plot_convergence([], tmp_path / "x.png")
