import numpy as np
import pytest

from flowcast.data import (
    DEFAULT_MONTHS,
    DEFAULT_SEED,
    MonthlySeries,
    Province,
    Stream,
    WindowSpec,
    YearMonth,
    bundled_dataset_path,
    destandardize,
    gen_synthetic,
    load_csv,
    split_window,
    standardize,
    write_csv,
)
from flowcast.errors import ConfigError, GapError, ParseError, RangeError


def write_lines(path, rows):
    path.write_text("date,province,stream,count\n" + "\n".join(rows) + "\n")


class TestLoadCsv:
    def test_unit_conversion_single_row(self, tmp_path):
        """Raw persons divide by 100 into hundreds-of-persons."""
        f = tmp_path / "one.csv"
        write_lines(f, ["2015-01,ON,Economic,1000"])
        series = load_csv(f)
        assert len(series) == 1
        s = series[0]
        assert s.province is Province.ON and s.stream is Stream.ECONOMIC
        assert s.start == YearMonth(2015, 1)
        np.testing.assert_array_equal(s.values, [10.0])

    def test_month_gap_raises(self, tmp_path):
        f = tmp_path / "gap.csv"
        write_lines(f, ["2015-01,ON,Economic,100", "2015-03,ON,Economic,100"])
        with pytest.raises(GapError) as err:
            load_csv(f)
        assert err.value.missing == "2015-02"
        assert err.value.province == "ON"

    def test_negative_count_raises_valueerror(self, tmp_path):
        f = tmp_path / "neg.csv"
        write_lines(f, ["2015-01,ON,Economic,-5"])
        with pytest.raises(ValueError):
            load_csv(f)

    def test_unknown_province_names_line(self, tmp_path):
        f = tmp_path / "bad.csv"
        write_lines(f, ["2015-01,ON,Economic,5", "2015-01,ZZ,Economic,5"])
        with pytest.raises(ParseError) as err:
            load_csv(f)
        assert err.value.line == 3

    def test_unknown_stream(self, tmp_path):
        f = tmp_path / "bad.csv"
        write_lines(f, ["2015-01,ON,Weather,5"])
        with pytest.raises(ParseError):
            load_csv(f)

    def test_duplicate_month(self, tmp_path):
        f = tmp_path / "dup.csv"
        write_lines(f, ["2015-01,ON,Economic,5", "2015-01,ON,Economic,6"])
        with pytest.raises(ParseError):
            load_csv(f)

    def test_bad_header(self, tmp_path):
        f = tmp_path / "hdr.csv"
        f.write_text("a,b,c,d\n2015-01,ON,Economic,5\n")
        with pytest.raises(ParseError):
            load_csv(f)

    def test_total_consistency_enforced(self, tmp_path):
        f = tmp_path / "tot.csv"
        write_lines(
            f,
            [
                "2015-01,ON,Sponsor,100",
                "2015-01,ON,Refugee,100",
                "2015-01,ON,Economic,100",
                "2015-01,ON,Total,500",  # off by 200 persons > 50 slack
            ],
        )
        with pytest.raises(ValueError):
            load_csv(f)

    def test_total_slack_tolerated(self, tmp_path):
        f = tmp_path / "tot.csv"
        write_lines(
            f,
            [
                "2015-01,ON,Sponsor,100",
                "2015-01,ON,Refugee,100",
                "2015-01,ON,Economic,100",
                "2015-01,ON,Total,340",  # 40 persons of rounding slack
            ],
        )
        assert len(load_csv(f)) == 4

    def test_bundled_dataset_shape(self):
        """The shipped dataset: 96 months x 10 provinces x 4 streams."""
        series = load_csv(bundled_dataset_path())
        assert len(series) == 40
        assert all(len(s) == 96 for s in series)
        regenerated = gen_synthetic(DEFAULT_SEED, DEFAULT_MONTHS)
        assert series == regenerated


class TestRoundTrip:
    def test_write_load_identity_person_granular(self, tmp_path):
        series = gen_synthetic(seed=7, months=30)
        f = tmp_path / "rt.csv"
        write_csv(series, f)
        assert load_csv(f) == series

    def test_write_load_identity_awkward_floats(self, tmp_path):
        rng = np.random.default_rng(3)
        values = rng.uniform(0.0, 200.0, 50)
        values[0] = 0.1
        values[1] = 1.0 / 3.0
        series = [MonthlySeries(Province.BC, Stream.SPONSOR, YearMonth(2016, 5), values)]
        f = tmp_path / "rt.csv"
        write_csv(series, f)
        assert load_csv(f) == series


class TestSplitWindow:
    def make_series(self, months=96):
        values = np.arange(1.0, months + 1.0)
        return MonthlySeries(Province.ON, Stream.TOTAL, YearMonth(2015, 1), values)

    def test_five_year_context(self):
        """Context is exactly 12*years values; the famous 5y case is 60."""
        s = self.make_series(96)
        split = YearMonth(2015, 1) + 60  # month 61, 1-based
        ctx, tgt = split_window(s, WindowSpec(5, 12), split)
        assert ctx.shape == (60,) and tgt.shape == (12,)
        assert ctx[-1] == 60.0 and tgt[0] == 61.0

    def test_one_year_context(self):
        s = self.make_series(96)
        ctx, _ = split_window(s, WindowSpec(1, 12), YearMonth(2015, 1) + 12)
        assert ctx.shape == (12,)

    def test_partition_contiguous(self):
        s = self.make_series(40)
        split = YearMonth(2015, 1) + 24
        ctx, tgt = split_window(s, WindowSpec(2, 12), split)
        assert ctx[-1] + 1.0 == tgt[0]

    def test_insufficient_history(self):
        s = self.make_series(96)
        with pytest.raises(RangeError):
            split_window(s, WindowSpec(1, 12), YearMonth(2015, 1) + 2)

    def test_windowspec_validation(self):
        with pytest.raises(ConfigError):
            WindowSpec(0, 12)
        with pytest.raises(ConfigError):
            WindowSpec(10, 12)
        with pytest.raises(ConfigError):
            WindowSpec(3, 0)


class TestStandardize:
    def test_constant_series(self):
        scaled, loc, scale = standardize([5.0, 5.0, 5.0])
        np.testing.assert_array_equal(scaled, [0.0, 0.0, 0.0])
        assert loc == 5.0 and scale == 1e-8

    def test_two_points(self):
        """Population std: [0,2] has mean 1 and std 1."""
        scaled, loc, scale = standardize([0.0, 2.0])
        np.testing.assert_allclose(scaled, [-1.0, 1.0])
        assert loc == 1.0 and scale == 1.0

    def test_round_trip(self, rng):
        for _ in range(25):
            x = rng.normal(40.0, 9.0, size=rng.integers(2, 40))
            scaled, loc, scale = standardize(x)
            np.testing.assert_allclose(destandardize(scaled, loc, scale), x, atol=1e-9)

    def test_moments(self, rng):
        for _ in range(25):
            x = rng.uniform(0.0, 50.0, size=30)
            scaled, _, _ = standardize(x)
            assert abs(scaled.mean()) <= 1e-9
            assert abs(scaled.std() - 1.0) <= 1e-9


class TestGenSynthetic:
    def test_deterministic(self):
        assert gen_synthetic(11, 36) == gen_synthetic(11, 36)

    def test_seed_changes_output(self):
        assert gen_synthetic(11, 36) != gen_synthetic(12, 36)

    def test_total_is_component_sum(self):
        series = gen_synthetic(5, 48)
        by_key = {(s.province, s.stream): s for s in series}
        for p in Province:
            total = by_key[(p, Stream.TOTAL)].values
            comps = sum(
                by_key[(p, st)].values
                for st in (Stream.SPONSOR, Stream.REFUGEE, Stream.ECONOMIC)
            )
            np.testing.assert_allclose(total, comps, atol=1e-9)

    def test_values_nonnegative(self):
        series = gen_synthetic(DEFAULT_SEED, DEFAULT_MONTHS)
        assert min(s.values.min() for s in series) >= 0.0

    def test_min_months(self):
        with pytest.raises(ConfigError):
            gen_synthetic(1, 12)

    def test_seasonality_peaks_at_lag_12(self):
        """Every component series shows its strongest sub-harmonic
        autocorrelation at the seasonal lag (brute-force oracle)."""
        from flowcast.layers import autocorrelation_bruteforce

        series = gen_synthetic(DEFAULT_SEED, DEFAULT_MONTHS)
        for s in series:
            if s.stream is Stream.TOTAL:
                continue
            r = autocorrelation_bruteforce(s.values)
            # lags 1..23: below the first harmonic of the 12-month period
            assert int(np.argmax(r[1:24])) + 1 == 12, (s.province, s.stream)


class TestYearMonth:
    def test_arithmetic(self):
        ym = YearMonth(2015, 11)
        assert str(ym + 2) == "2016-01"
        assert (ym + 14) - ym == 14

    def test_parse_rejects_garbage(self):
        with pytest.raises(ParseError):
            YearMonth.parse("2015/01")
        with pytest.raises(ParseError):
            YearMonth.parse("2015-13")
