import numpy as np
import pytest
from scipy.stats import ks_2samp

from mvstable.pipeline import (ReturnSeries, fit_garch11, garch_filter,
                               ingest_csv, median_scale, write_matrix_csv)


def make_levels_csv(tmp_path, levels, labels=("a", "b"), name="levels.csv"):
    path = tmp_path / name
    write_matrix_csv(path, levels, list(labels))
    return path


class TestIngest:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        rets = rng.standard_normal((200, 2)) * 0.01
        levels = np.exp(np.cumsum(np.vstack([np.zeros(2), rets]), axis=0))
        path = make_levels_csv(tmp_path, levels)
        series = ingest_csv(path)
        assert np.allclose(series.values, rets, atol=1e-12)
        # export the reconstructed levels and re-ingest
        again = make_levels_csv(
            tmp_path, np.exp(np.cumsum(
                np.vstack([np.zeros(2), series.values]), axis=0)),
            name="again.csv")
        series2 = ingest_csv(again)
        assert np.allclose(series2.values, series.values, atol=1e-12)

    def test_constant_column(self, tmp_path):
        levels = np.column_stack([np.full(120, 5.0),
                                  np.exp(np.linspace(0, 1, 120))])
        path = make_levels_csv(tmp_path, levels)
        series = ingest_csv(path)
        assert np.allclose(series.values[:, 0], 0.0)

    def test_two_row_file(self, tmp_path):
        path = make_levels_csv(tmp_path, np.array([[1.0, 2.0], [1.1, 2.2]]))
        with pytest.raises(ValueError):  # one return row < 50 minimum
            ingest_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n1.1,oops\n")
        with pytest.raises(ValueError, match="row 3"):
            ingest_csv(path)

    def test_missing_rows_dropped(self, tmp_path):
        rng = np.random.default_rng(1)
        levels = np.exp(np.cumsum(rng.standard_normal((80, 2)) * 0.01,
                                  axis=0) + 1.0)
        lines = ["a,b"]
        for i, row in enumerate(levels):
            if i == 10:
                lines.append(f"{row[0]},")
            else:
                lines.append(f"{row[0]},{row[1]}")
        path = tmp_path / "gappy.csv"
        path.write_text("\n".join(lines) + "\n")
        series = ingest_csv(path)
        assert series.n_dropped >= 1

    def test_date_column_ignored(self, tmp_path):
        rng = np.random.default_rng(2)
        levels = np.exp(np.cumsum(rng.standard_normal((120, 1)) * 0.01,
                                  axis=0) + 1.0)
        lines = ["date,px"]
        for i, row in enumerate(levels):
            lines.append(f"2020-01-{i % 28 + 1:02d},{row[0]}")
        path = tmp_path / "dated.csv"
        path.write_text("\n".join(lines) + "\n")
        series = ingest_csv(path, date_column="date")
        assert series.labels == ["px"]
        assert series.values.shape[1] == 1


class TestGarch:
    def test_iid_gaussian_low_persistence(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1500)
        params, z, _ = fit_garch11(x)
        assert params["a"] + params["b"] < 0.3
        # residuals reproduce the input up to an affine map
        assert ks_2samp(z, (x[1:] - x[1:].mean()) / x[1:].std()).statistic \
            < 0.05

    def test_simulated_garch_recovery(self):
        rng = np.random.default_rng(4)
        n = 4000
        omega_g, a_true, b_true = 0.05, 0.10, 0.85
        z = rng.standard_normal(n)
        x = np.empty(n)
        sig2 = omega_g / (1 - a_true - b_true)
        prev = 0.0
        for t in range(n):
            if t > 0:
                sig2 = omega_g + a_true * prev ** 2 + b_true * sig2
            prev = np.sqrt(sig2) * z[t]
            x[t] = prev
        params, zres, _ = fit_garch11(x)
        assert abs(params["a"] + params["b"] - 0.95) <= 0.1
        assert 0.8 <= float(np.var(zres)) <= 1.2

    def test_filter_shapes_and_passthrough(self):
        rng = np.random.default_rng(5)
        vals = rng.standard_normal((300, 2))
        series = ReturnSeries(vals, ["u", "v"])
        out = garch_filter(series)
        assert out.values.shape == (299, 2)
        assert len(out.garch_params) == 2

    def test_too_short_column(self):
        series = ReturnSeries(np.random.default_rng(6).standard_normal(
            (60, 1)), ["u"])
        with pytest.raises(ValueError):
            fit_garch11(series.values[:, 0])


class TestMedianScale:
    def test_post_scaling_median_is_one(self):
        rng = np.random.default_rng(7)
        series = ReturnSeries(rng.standard_normal((200, 3)) * 4.2, list("abc"))
        scaled = median_scale(series)
        assert float(np.median(np.linalg.norm(scaled.values, axis=1))) \
            == pytest.approx(1.0)
        assert scaled.scale_factor == pytest.approx(
            float(np.median(np.linalg.norm(series.values, axis=1))))

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        series = ReturnSeries(rng.standard_normal((150, 2)) * 0.3, ["a", "b"])
        once = median_scale(series)
        twice = median_scale(once)
        assert np.allclose(once.values, twice.values)
        assert twice.scale_factor == pytest.approx(once.scale_factor)

    def test_back_transform_bookkeeping(self):
        rng = np.random.default_rng(9)
        vals = rng.standard_normal((120, 2)) * 2.0 + 0.7
        series = ReturnSeries(vals, ["a", "b"])
        scaled = median_scale(series)
        assert np.allclose(scaled.values * scaled.scale_factor, vals)

    def test_zero_median_errors(self):
        series = ReturnSeries(np.zeros((60, 2)), ["a", "b"])
        with pytest.raises(ValueError):
            median_scale(series)
