import datetime as dt
import math

import numpy as np
import pytest

from epiens.panel import (
    CONFIRMED,
    MinMaxScaler,
    PanelError,
    WeeklyPanel,
    aggregate_daily_to_weekly,
    build_panel,
    cut_windows,
    derive_cgr,
    derive_testing_features,
    minmax_scale,
    read_long_csv,
    read_panel_csv,
    write_panel_csv,
)
from epiens.synthetic import generate_panel


def daily_series(start, values):
    return {start + dt.timedelta(days=i): v for i, v in enumerate(values)}


class TestWeeklyAggregation:
    def test_seven_ones_sum_to_seven(self):
        # 2020-03-01 is a Sunday; the first Saturday-ending week is 03-07
        weeks, totals = aggregate_daily_to_weekly(daily_series(dt.date(2020, 3, 1), [1] * 7))
        assert weeks == [dt.date(2020, 3, 7)]
        assert totals.tolist() == [7.0]

    def test_175_days_gives_25_weeks(self):
        weeks, totals = aggregate_daily_to_weekly(
            daily_series(dt.date(2020, 3, 1), list(range(175))))
        assert len(weeks) == 25
        assert weeks[0] == dt.date(2020, 3, 7)
        assert weeks[-1] == dt.date(2020, 8, 22)

    def test_two_weeks_by_direct_summation(self):
        values = [1, 2, 3, 4, 5, 6, 7] + [0] * 7
        weeks, totals = aggregate_daily_to_weekly(daily_series(dt.date(2020, 3, 1), values))
        assert totals.tolist() == [28.0, 0.0]

    def test_partial_weeks_dropped_and_mass_conserved(self):
        rng = np.random.default_rng(0)
        values = rng.integers(0, 50, size=40).astype(float)
        start = dt.date(2020, 3, 4)  # Wednesday: leading partial week
        weeks, totals = aggregate_daily_to_weekly(daily_series(start, values))
        first_day = weeks[0] - dt.timedelta(days=6)
        offset = (first_day - start).days
        covered = values[offset : offset + 7 * len(weeks)]
        assert totals.sum() == covered.sum()

    def test_empty_and_negative_rejected(self):
        with pytest.raises(PanelError):
            aggregate_daily_to_weekly({})
        with pytest.raises(PanelError):
            aggregate_daily_to_weekly(daily_series(dt.date(2020, 3, 1), [1, -2] + [0] * 12))

    def test_gap_rejected(self):
        series = daily_series(dt.date(2020, 3, 1), [1] * 8)
        del series[dt.date(2020, 3, 4)]
        with pytest.raises(PanelError):
            aggregate_daily_to_weekly(series)


class TestGrowthRate:
    def test_zero_counts(self):
        assert derive_cgr([0, 0]).tolist() == [0.0]

    def test_direct_formula(self):
        out = derive_cgr([9, 99])
        assert out[0] == pytest.approx(math.log(100) - math.log(10))

    def test_antisymmetry(self):
        assert derive_cgr([99, 9])[0] == pytest.approx(-derive_cgr([9, 99])[0])

    def test_constant_series_is_zero(self):
        assert np.all(derive_cgr([5] * 10) == 0.0)

    def test_short_series_rejected(self):
        with pytest.raises(PanelError):
            derive_cgr([1])


class TestTestingFeatures:
    def test_symmetric_split(self):
        _, tpr = derive_testing_features([50], [50], 1000)
        assert tpr[0] == 0.5

    def test_zero_denominator_convention(self):
        tr, tpr = derive_testing_features([0], [0], 1000)
        assert tpr[0] == 0.0 and tr[0] == 0.0

    def test_direct_arithmetic(self):
        tr, tpr = derive_testing_features([1500], [8500], 1_000_000)
        assert tr[0] == pytest.approx(1000.0)
        assert tpr[0] == pytest.approx(0.15)

    def test_bad_population(self):
        with pytest.raises(PanelError):
            derive_testing_features([1], [1], 0)


class TestMinMaxScale:
    def test_affine_endpoints(self):
        assert minmax_scale([0, 5, 10]).tolist() == [0.0, 0.5, 1.0]

    def test_constant_maps_to_zeros(self):
        assert minmax_scale([3, 3, 3]).tolist() == [0.0, 0.0, 0.0]

    def test_direct_arithmetic(self):
        assert minmax_scale([2, 8, 4, 6]).tolist() == pytest.approx([0, 1, 1 / 3, 2 / 3])

    def test_range_and_idempotence(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=10)
            s = minmax_scale(x)
            assert s.min() == 0.0 and s.max() == 1.0
            assert np.allclose(minmax_scale(s), s)

    def test_scaler_inverse_round_trip(self):
        x = np.array([3.0, 9.0, 6.0])
        sc = MinMaxScaler.fit(x)
        assert np.allclose(sc.inverse(sc.transform(x)), x)
        flat = MinMaxScaler.fit(np.array([4.0, 4.0]))
        assert np.all(flat.transform([4.0, 4.0]) == 0.0)
        assert np.all(flat.inverse([0.0]) == 4.0)


def window_count_oracle(n_weeks, T, h):
    """Independent enumeration of valid (window, target) placements."""
    count = 0
    for t in range(n_weeks):
        if t - T + 1 >= 0 and t + h <= n_weeks - 1:
            count += 1
    return count


class TestCutWindows:
    @pytest.mark.parametrize("weeks,T,h", [(25, 3, 1), (25, 3, 4), (4, 3, 4), (10, 2, 2), (7, 3, 4)])
    def test_count_matches_enumeration_oracle(self, weeks, T, h):
        panel = generate_panel(1, weeks, seed=0)
        samples = cut_windows(panel, [CONFIRMED], T, h)
        assert len(samples) == window_count_oracle(weeks, T, h)
        assert len(samples) == max(0, weeks - T - h + 1)

    def test_window_contents_and_target(self):
        panel = generate_panel(2, 10, seed=3)
        samples = cut_windows(panel, [CONFIRMED], 3, 2)
        for s in samples:
            cf = panel.series(s.region, CONFIRMED)
            assert s.input.shape == (3, 1)
            assert np.array_equal(s.input[:, 0], cf[s.origin - 2 : s.origin + 1])
            assert s.target == cf[s.origin + 2]

    def test_too_short_panel_gives_empty_list(self):
        panel = generate_panel(1, 4, seed=0)
        assert cut_windows(panel, [CONFIRMED], 3, 4) == []


class TestPanelValidation:
    def test_weeks_must_step_by_seven_days(self):
        with pytest.raises(PanelError):
            WeeklyPanel(["a"], [dt.date(2020, 3, 7), dt.date(2020, 3, 15)], ["CF"],
                        np.zeros((1, 2, 1)))

    def test_missing_cells_rejected(self):
        values = np.zeros((1, 2, 1))
        values[0, 1, 0] = np.nan
        with pytest.raises(PanelError):
            WeeklyPanel(["a"], [dt.date(2020, 3, 7), dt.date(2020, 3, 14)], ["CF"], values)

    def test_negative_counts_rejected(self):
        with pytest.raises(PanelError):
            WeeklyPanel(["a"], [dt.date(2020, 3, 7)], ["CF"], np.array([[[-1.0]]]))

    def test_values_are_immutable(self):
        panel = generate_panel(2, 5, seed=0)
        with pytest.raises(ValueError):
            panel.values[0, 0, 0] = 1.0


class TestCsvRoundTrip:
    def test_long_csv_ingestion_and_derived_features(self, tmp_path):
        path = tmp_path / "raw.csv"
        rows = ["region,parent,date,feature,value"]
        start = dt.date(2020, 3, 1)
        for region, parent in (("R1", "S1"), ("R2", "S1")):
            rows.append(f"{region},{parent},2020-03-01,population,100000")
            for i in range(21):
                d = start + dt.timedelta(days=i)
                rows.append(f"{region},{parent},{d},CF,{i}")
                rows.append(f"{region},{parent},{d},DT,1")
                rows.append(f"{region},{parent},{d},positive,{2 * i}")
                rows.append(f"{region},{parent},{d},negative,{3 * i}")
        path.write_text("\n".join(rows) + "\n")
        records, parents = read_long_csv(path)
        panel = build_panel(records, parents=parents)
        assert panel.regions == ["R1", "R2"]
        assert panel.n_weeks == 3
        for f in ("CF", "DT", "CCGR", "DCGR", "TR", "TPR"):
            assert f in panel.features
        assert panel.parents["R1"] == "S1"
        assert panel.population("R2") == 100000
        # weekly CF is the sum of the 7 daily values
        assert panel.series("R1", "CF")[0] == sum(range(7))

    def test_bad_header_reports_error(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text("region,date,value\nR1,2020-03-01,5\n")
        with pytest.raises(PanelError):
            read_long_csv(path)

    def test_bad_row_reports_row_number(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text("region,parent,date,feature,value\nR1,,2020-03-01,CF,oops\n")
        with pytest.raises(PanelError, match="row 2"):
            read_long_csv(path)

    def test_missing_cell_rejected_without_forward_fill(self, tmp_path):
        records = {("R1", "CF"): daily_series(dt.date(2020, 3, 1), [1] * 14)}
        records[("R2", "CF")] = daily_series(dt.date(2020, 3, 1), [1] * 7)
        with pytest.raises(PanelError, match="missing cell"):
            build_panel(records)

    def test_wide_panel_round_trip(self, tmp_path):
        panel = generate_panel(3, 6, seed=9, with_testing=True)
        path = tmp_path / "panel.csv"
        write_panel_csv(panel, path)
        back = read_panel_csv(path)
        assert back.regions == panel.regions
        assert back.weeks == panel.weeks
        assert back.features == panel.features
        assert np.array_equal(back.values, panel.values)
        assert back.parents == panel.parents
        assert back.populations == panel.populations
