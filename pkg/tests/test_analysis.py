import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_sample
from oracles import naive_spatial_mean
from csp_explain.analysis import (
    STANDARD_RANGES,
    FitResult,
    correlation_points,
    evaluate,
    fit_curves,
    fit_poly2,
    global_sensitivity,
    local_sensitivity,
    segment_mean_value,
    segment_ndvi_curve,
    sensitivity_from_curves,
    standardize_curve,
    write_fits_csv,
    write_global_sensitivity_csv,
    write_sensitivity_csv,
)
from csp_explain.data import WEATHER_CHANNELS, Dataset, GridShape, Quantity, normalized_to_physical
from csp_explain.errors import AllFitsFailed, EmptySegment, TooFewPoints
from csp_explain.forecaster import SyntheticForecaster, SyntheticModelParams, forecast, ndvi
from csp_explain.perturbation import PerturbationGrid
from csp_explain.segmentation import WeatherSegment

GRID = GridShape(6, 5, 3, 2)


def setup(params, n=3, seeds=None, constant=None):
    samples = [make_sample(f"m{i}", grid=GRID, seed=(seeds or range(n))[i], constant=constant) for i in range(n)]
    ds = Dataset(GRID, samples)
    seg = WeatherSegment((0, 0, 0, 0, 0), tuple(s.id for s in samples))
    return ds, seg, SyntheticForecaster(params, GRID)


def planted(params, means):
    return params.law(means)


def member_means(ds, q):
    ch = {Quantity.TEMPERATURE: "t_avg", Quantity.PRESSURE: "p", Quantity.PRECIPITATION: "r"}[q]
    return [float(normalized_to_physical(np.mean(s.channel(ch), dtype=np.float64), q)) for s in ds]


class TestCurves:
    def test_planted_level_per_offset(self):
        p = SyntheticModelParams(n0=0.4, temperature=(-1e-4, 0.003), precipitation=(-0.002, 0.02))
        ds, seg, fc = setup(p, constant=0.5)
        for off in (-10.0, 0.0, 15.0):
            c = segment_ndvi_curve(seg, ds, fc, "temperature", off)
            want = planted(p, {Quantity.TEMPERATURE: 0.0 + off, Quantity.PRESSURE: 1000.0,
                               Quantity.PRECIPITATION: 25.0})
            assert c.curve.shape == (GRID.t_out,) and c.n_samples == 3
            assert np.max(np.abs(c.curve - want)) < 1e-9

    def test_singleton_segment(self):
        p = SyntheticModelParams(n0=0.4, precipitation=(-0.002, 0.02), noise_sd=0.05)
        ds, seg, fc = setup(p, n=1)
        c = segment_ndvi_curve(seg, ds, fc, "precipitation", 0.0)
        assert np.array_equal(c.curve, ndvi(forecast(fc, ds.samples[0])).mean(axis=(1, 2)))

    def test_mean_of_means_equals_global_mean(self):
        p = SyntheticModelParams(n0=0.4, precipitation=(-0.002, 0.02), noise_sd=0.05)
        ds, seg, fc = setup(p, n=4)
        c = segment_ndvi_curve(seg, ds, fc, "precipitation", 2.0)
        from csp_explain.perturbation import PerturbationSpec, perturb
        stack = np.stack([ndvi(forecast(fc, perturb(s, PerturbationSpec("precipitation", 2.0)))) for s in ds])
        naive = naive_spatial_mean(stack.transpose(1, 0, 2, 3).reshape(GRID.t_out, -1, GRID.w))
        assert np.max(np.abs(c.curve - naive)) < 1e-12

    def test_empty_segment(self):
        ds, _, fc = setup(SyntheticModelParams())
        with pytest.raises(EmptySegment):
            segment_ndvi_curve(WeatherSegment((0,) * 5, ()), ds, fc, "pressure", 0.0)

    def test_marginal_discipline(self):
        ds, seg, _ = setup(SyntheticModelParams())
        seen = []

        class Spy(SyntheticForecaster):
            def forecast(self, sample):
                src = ds.get(sample.id)
                seen.append({ch for ch in WEATHER_CHANNELS if sample.channel(ch).tobytes() != src.channel(ch).tobytes()})
                return super().forecast(sample)

        spy = Spy(SyntheticModelParams(), GRID)
        for q in Quantity:
            seen.clear()
            local_sensitivity(seg, ds, spy, q, PerturbationGrid())
            assert set().union(*seen) == set(q.channels)


class TestLocalSensitivity:
    def test_ignored_variable(self):
        ds, seg, fc = setup(SyntheticModelParams(n0=0.3, precipitation=(0.0, 0.01)))
        assert local_sensitivity(seg, ds, fc, "pressure", PerturbationGrid()) == 0.0

    @pytest.mark.parametrize("q, slope", [("temperature", -0.0034), ("pressure", 0.0015), ("precipitation", 0.0183)])
    def test_linear_law_gives_slope(self, q, slope):
        p = SyntheticModelParams(n0=0.3, **{q: (0.0, slope)}) if q != "pressure" else \
            SyntheticModelParams(n0=0.3 - slope * 1020, pressure=(0.0, slope))
        ds, seg, fc = setup(p)
        assert abs(local_sensitivity(seg, ds, fc, q, PerturbationGrid()) - abs(slope)) < 1e-9

    def test_quadratic_matches_closed_form(self):
        a, b = -0.0034, 0.0252
        p = SyntheticModelParams(n0=0.5, precipitation=(a, b))
        ds, seg, fc = setup(p, n=2)
        grid = PerturbationGrid()
        xs = member_means(ds, Quantity.PRECIPITATION)
        # closed-form per-offset segment levels, then the pairwise difference quotients
        level = {o: np.mean([p.n0 + a * (x + o) ** 2 + b * (x + o) for x in xs]) for o in grid.precipitation}
        pairs = list(itertools.combinations(grid.precipitation, 2))
        want = sum(abs(level[u] - level[v]) / abs(u - v) for u, v in pairs) / len(pairs)
        assert abs(local_sensitivity(seg, ds, fc, "precipitation", grid) - want) < 1e-12

    def test_reversal_and_shift_invariance(self):
        p = SyntheticModelParams(n0=0.3, temperature=(0.0, 0.004))
        ds, seg, fc = setup(p)
        from csp_explain.analysis import segment_curves
        curves = segment_curves(seg, ds, fc, "temperature", PerturbationGrid())
        assert sensitivity_from_curves(curves[::-1]) == pytest.approx(sensitivity_from_curves(curves), abs=1e-15)
        shifted = PerturbationGrid(temperature=(-5, 0, 5, 10, 15, 20, 25))
        assert local_sensitivity(seg, ds, fc, "temperature", shifted) == \
            pytest.approx(local_sensitivity(seg, ds, fc, "temperature", PerturbationGrid()), abs=1e-12)


class TestGlobalSensitivity:
    def test_constant(self):
        assert global_sensitivity([0.2, 0.2, 0.2], [1, 5, 2]) == (0.2, 0.0)

    def test_hand(self):
        m, sd = global_sensitivity([1.0, 3.0], [1, 3])
        assert m == 2.5 and sd == pytest.approx(np.sqrt(0.75), abs=1e-15)

    def test_naive_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = rng.uniform(0, 0.05, 7)
            w = rng.integers(1, 50, 7)
            num = den = 0.0
            for si, wi in zip(s, w):
                num += si * wi
                den += wi
            mean = num / den
            var = 0.0
            for si, wi in zip(s, w):
                var += wi * (si - mean) ** 2
            m, sd = global_sensitivity(s, w)
            assert abs(m - mean) < 1e-12 and abs(sd - np.sqrt(var / den)) < 1e-12

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(1, 100)), min_size=1, max_size=10))
    def test_within_range(self, rows):
        s, w = zip(*rows)
        m, sd = global_sensitivity(s, w)
        assert min(s) <= m <= max(s) and sd >= 0


class TestCorrelationPoints:
    def test_seven_points_increasing(self):
        ds, seg, fc = setup(SyntheticModelParams(n0=0.3, pressure=(0.0, 1e-4), valid_ranges={}))
        pts = correlation_points(seg, ds, fc, "pressure", PerturbationGrid())
        assert pts.x.size == pts.y.size == 7 and np.all(np.diff(pts.x) > 0)
        base = np.mean(member_means(ds, Quantity.PRESSURE))
        assert np.allclose(pts.x - base, PerturbationGrid().pressure, atol=1e-9)

    def test_constant_law(self):
        ds, seg, fc = setup(SyntheticModelParams(n0=0.37))
        assert np.allclose(correlation_points(seg, ds, fc, "temperature", PerturbationGrid()).y, 0.37, atol=1e-15)

    def test_points_on_parabola(self):
        p = SyntheticModelParams(n0=0.5, precipitation=(-0.0034, 0.0252))
        ds, seg, fc = setup(p, n=1)
        pts = correlation_points(seg, ds, fc, "precipitation", PerturbationGrid())
        assert np.max(np.abs(pts.y - (0.5 - 0.0034 * pts.x ** 2 + 0.0252 * pts.x))) < 1e-9

    def test_segment_mean_value(self):
        ds, seg, _ = setup(SyntheticModelParams(), constant=0.6)
        assert segment_mean_value(seg, ds, "pressure") == pytest.approx(1020.0, abs=1e-4)


class TestFitting:
    def test_reference_quadratic(self):
        x = np.linspace(-2, 12, 8)
        rep = fit_curves(x, -0.0034 * x ** 2 + 0.0252 * x + 0.5554)
        assert rep.best.family == "poly2"
        c = rep.best.coefficients
        assert abs(c["a"] + 0.0034) < 1e-6 and abs(c["b"] - 0.0252) < 1e-6 and abs(c["c"] - 0.5554) < 1e-6
        others = [f.rss for f in rep.fits if f.converged and f.family != "poly2"]
        assert all(rep.best.rss < r for r in others)

    def test_line(self):
        x = np.arange(6.0)
        rep = fit_curves(x, 0.3 * x - 1)
        assert abs(rep.best.coefficients["a"]) < 1e-12 and rep.best.rss < 1e-20

    def test_gaussian_bump(self):
        rng = np.random.default_rng(5)
        x = np.linspace(0, 10, 30)
        y = 0.3 * np.exp(-(x - 4) ** 2 / (2 * 1.2 ** 2)) + 0.2 + 1e-3 * rng.standard_normal(30)
        assert fit_curves(x, y).best.family == "gaussian"

    @pytest.mark.parametrize("family, coeffs", [
        ("exponential", {"a": 0.5, "b": 0.3, "c": -1.0, "d": 2.0}),
        ("logarithmic", {"a": 0.7, "c": 0.1, "d": -1.0}),
        ("sinusoidal", {"a": 0.4, "b": 0.9, "c": 0.2, "d": 0.3}),
    ])
    def test_family_recovers_own_data(self, family, coeffs):
        x = np.linspace(0, 5, 12)
        y = evaluate(family, coeffs, x)
        fit = {f.family: f for f in fit_curves(x, y).fits}[family]
        assert fit.converged and fit.rss < 1e-12

    def test_poly2_normal_equations(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-2, 12, 9)
        y = rng.normal(size=9)
        f = fit_poly2(x, y)
        r = y - f(x)
        X = np.column_stack([x ** 2, x, np.ones_like(x)])
        assert np.max(np.abs(X.T @ r) / np.linalg.norm(X, axis=0)) < 1e-8

    @given(st.floats(-0.01, 0.01), st.floats(-0.1, 0.1), st.floats(-1, 1))
    def test_planted_quadratic_recovered(self, a, b, c):
        x = np.array([-2.0, 0, 2, 4, 6, 8, 10])
        f = fit_poly2(x, a * x ** 2 + b * x + c)
        assert abs(f.coefficients["a"] - a) < 1e-6 and abs(f.coefficients["b"] - b) < 1e-6
        assert abs(f.coefficients["c"] - c) < 1e-6

    def test_flat_points_tie_to_poly2(self):
        x = np.linspace(990, 1050, 7)
        assert fit_curves(x, np.full(7, 0.53)).best.family == "poly2"

    def test_exponential_data_selects_exponential(self):
        x = np.linspace(-2, 12, 7)
        assert fit_curves(x, np.exp(0.3 * x)).best.family == "exponential"

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            fit_curves([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])

    def test_all_failed(self):
        with pytest.raises(AllFitsFailed):
            fit_curves(np.arange(5.0), np.array([0, 1, np.nan, 2, 3.0]))

    def test_log_domain_respected(self):
        x = np.linspace(1, 5, 8)
        f = {f.family: f for f in fit_curves(x, np.log(x)).fits}["logarithmic"]
        assert f.coefficients["d"] < x.min()


class TestStandardize:
    def test_temperature_span(self):
        xs, ys = standardize_curve(FitResult("poly2", {"a": 0.0, "b": 0.0, "c": 0.42}, 0.0, 7), "temperature")
        assert xs.size == 100 and xs[0] == 0.0 and xs[-1] == 35.0 and np.all(ys == 0.42)

    @pytest.mark.parametrize("q", list(Quantity))
    def test_matches_polynomial(self, q):
        f = FitResult("poly2", {"a": -0.0034, "b": 0.0252, "c": 0.5554}, 0.0, 7)
        xs, ys = standardize_curve(f, q)
        lo, hi = STANDARD_RANGES[q]
        assert xs[0] == lo and xs[-1] == hi
        assert np.allclose(ys, [-0.0034 * x * x + 0.0252 * x + 0.5554 for x in xs], rtol=0, atol=1e-12)


def test_report_writers(tmp_path):
    write_sensitivity_csv([("0-1-0-0-0", "pressure", 0.5, 3)], tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == "segment_key,variable,sensitivity,cardinality\n0-1-0-0-0,pressure,0.5,3\n"
    write_global_sensitivity_csv([("precipitation", 0.0183, 0.0043)], tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[1] == "precipitation,0.0183,0.0043,per mm"
    x = np.linspace(-2, 12, 7)
    write_fits_csv([("k", "precipitation", fit_curves(x, 0.1 * x ** 2))], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "segment_key,variable,family,a,b,c,d,rss,n_points,status,best"
    assert lines[1].startswith("k,precipitation,poly2,") and lines[1].endswith(",7,ok,1")
    assert len(lines) == 6
