import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advforecast import scenarios
from advforecast.scenarios import (CsvSchemaError, PowerCurve, ScenarioConfig, build_scenario,
                                   catalog_bands, catalog_targets, destandardize, gen_speed_maps,
                                   gen_speed_series, load_csv, make_windows, power_curve_apply,
                                   standardize)


def test_zero_volatility_is_constant():
    v = gen_speed_series(ScenarioConfig(volatility=0.0, length=200))
    assert np.all(v == 8.0)


def test_negative_volatility_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        ScenarioConfig(volatility=-0.1)


def test_speed_series_deterministic():
    cfg = ScenarioConfig(seed=3, length=500)
    assert np.array_equal(gen_speed_series(cfg), gen_speed_series(cfg))
    assert not np.array_equal(gen_speed_series(cfg, 0), gen_speed_series(cfg, 1))


def test_long_run_mean():
    v = gen_speed_series(ScenarioConfig(seed=0, length=20000))
    assert abs(v.mean() - 8.0) / 8.0 < 0.05
    assert np.all(v >= 0)


def test_power_curve_values():
    curve = PowerCurve(3.0, 12.0, 25.0)
    out = power_curve_apply(np.array([0.0, 2.9, 7.5, 12.0, 20.0, 25.0, 26.0]), curve)
    np.testing.assert_allclose(out, [0.0, 0.0, 0.125, 1.0, 1.0, 1.0, 0.0], atol=1e-15)


def test_power_curve_rejects_bad_ordering():
    with pytest.raises(ValueError):
        PowerCurve(5.0, 4.0, 25.0)


@settings(max_examples=200)
@given(a=st.floats(0.0, 24.999), b=st.floats(0.0, 24.999))
def test_power_curve_monotone(a, b):
    lo, hi = sorted((a, b))
    pl, ph = power_curve_apply(np.array([lo, hi]))
    assert pl <= ph and 0.0 <= pl <= 1.0


def test_maps_large_smoothing_nearly_uniform():
    cfg = ScenarioConfig(seed=1, length=300, map_height=10, map_width=8, smoothing=60.0)
    true_maps, _, power = gen_speed_maps(cfg)
    spatial = true_maps.std(axis=(1, 2)).mean()
    temporal = true_maps.mean(axis=(1, 2)).std()
    assert spatial < 0.1 * temporal
    assert np.all((power >= 0) & (power <= 1))


def test_maps_deterministic():
    cfg = ScenarioConfig(seed=2, length=40, map_height=6, map_width=5)
    a, b = gen_speed_maps(cfg), gen_speed_maps(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_standardize_training_split():
    x = np.random.default_rng(0).normal(7.0, 2.5, 1000)
    z, stats = standardize(x)
    assert abs(z.mean()) < 1e-9 and abs(z.std() - 1.0) < 1e-9
    z2, same = standardize(x + 1.0, stats)
    assert same is stats and z2.mean() == pytest.approx(1.0 / stats.std, abs=1e-9)


def test_standardize_rejects_constant():
    with pytest.raises(ValueError, match="zero-variance"):
        standardize(np.full(10, 3.0))


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e3, 1e3)))
def test_standardize_round_trip(x):
    if x.std() < 1e-6:
        return
    z, stats = standardize(x)
    np.testing.assert_allclose(destandardize(z, stats), x, atol=1e-12 * max(1.0, np.abs(x).max()), rtol=0)


def test_window_counts():
    p = np.linspace(0, 1, 20)
    assert len(make_windows(p, p)) == 1
    p = np.linspace(0, 1, 21)
    a, b = make_windows(p, p)
    np.testing.assert_array_equal(a.truth[1:], b.truth[:-1])
    np.testing.assert_array_equal(a.history[1:], b.history[:-1])


def test_window_alignment():
    power = np.arange(40) / 40
    exo = np.arange(40.0) * 10
    windows = make_windows(power, exo)
    k = 5
    np.testing.assert_array_equal(windows[k].truth, power[k + 12:k + 20])
    np.testing.assert_array_equal(windows[k].exo, exo[k + 12:k + 20])


def test_map_windows_carry_trailing_contexts():
    maps = np.arange(30.0)[:, None, None] * np.ones((30, 2, 3))
    w = make_windows(np.linspace(0, 1, 30), maps, context=5)[0]
    assert w.exo.shape == (8, 5, 2, 3)
    np.testing.assert_array_equal(w.exo[0, :, 0, 0], [8, 9, 10, 11, 12])


def test_short_series_rejected():
    with pytest.raises(ValueError, match="shorter"):
        make_windows(np.zeros(19), np.zeros(19))


def test_scenario_has_no_leakage():
    cfg = ScenarioConfig(seed=4, length=400)
    sc = build_scenario(cfg, "series")
    power = sc.raw["power"]
    a, b = 240, 320
    assert all(np.array_equal(s.truth, power[s.sample_id + 12:s.sample_id + 20]) for s in sc.train)
    assert sc.train[-1].sample_id + 20 <= a
    np.testing.assert_array_equal(sc.test[0].history, power[b:b + 12])
    np.testing.assert_array_equal(sc.val[0].history, power[a:a + 12])
    assert len(sc.train) == a - 19 and len(sc.test) == 400 - b - 19


def test_scenario_deterministic_and_bounded():
    cfg = ScenarioConfig(seed=5, length=300)
    s1, s2 = build_scenario(cfg), build_scenario(cfg)
    for a, b in zip(s1.test, s2.test):
        assert np.array_equal(a.exo, b.exo) and np.array_equal(a.truth, b.truth)
    lo, hi = s1.input_bounds
    train_exo = np.concatenate([s.exo for s in s1.train])
    assert lo <= train_exo.min() and train_exo.max() <= hi
    assert s1.epsilon_in_ms(0.15) == pytest.approx(0.15 * s1.stats.std)


def test_config_round_trip(tmp_path):
    cfg = ScenarioConfig(seed=9, map_height=7)
    cfg.save(tmp_path / "s.json")
    assert ScenarioConfig.load(tmp_path / "s.json") == cfg
    with pytest.raises(ValueError, match="unknown"):
        ScenarioConfig.from_dict({"sede": 1})


# -- catalogs -------------------------------------------------------------------


def test_targets():
    t = catalog_targets(8)
    np.testing.assert_allclose(t["increasing"], np.arange(8) / 7)
    np.testing.assert_array_equal(t["decreasing"], t["increasing"][::-1])
    assert np.all(t["constant"] == 0.5)
    np.testing.assert_array_equal(t["zigzag"][:4], [0.25, 0.75, 0.25, 0.75])
    assert all(np.all((v >= 0) & (v <= 1)) for v in t.values())


def test_bands():
    bands = catalog_bands(8)
    assert list(bands) == ["low", "medium", "high", "very_high"]
    lo, hi = bands["low"]
    assert np.all(lo == 0.0) and np.all(hi == 0.25) and lo.shape == (8,)
    assert all(np.all(a <= b) for a, b in bands.values())


def test_catalog_needs_two_steps():
    with pytest.raises(ValueError):
        catalog_targets(1)


# -- CSV ------------------------------------------------------------------------


def test_csv_uv_components(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,power,u,v\n2020-01-01T00,0.5,3,4\n2020-01-01T01,0.0,0,0\n")
    power, speed = load_csv(path)
    np.testing.assert_allclose(speed, [5.0, 0.0])
    np.testing.assert_allclose(power, [0.5, 0.0])


def test_csv_power_out_of_range_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,power,speed\nt0,0.5,3\nt1,1.2,4\n")
    with pytest.raises(CsvSchemaError, match="row 3"):
        load_csv(path)


def test_csv_missing_column_and_bad_cell(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,speed\nt0,3\n")
    with pytest.raises(CsvSchemaError, match="power"):
        load_csv(path)
    path.write_text("timestamp,power,speed\nt0,0.5,fast\n")
    with pytest.raises(CsvSchemaError, match="non-numeric"):
        load_csv(path)


def test_csv_round_trip(tmp_path):
    power, speed = np.array([0.1, 0.25]), np.array([4.5, 6.0])
    scenarios.write_series_csv(tmp_path / "d.csv", power, speed)
    p, s = load_csv(tmp_path / "d.csv")
    assert np.array_equal(p, power) and np.array_equal(s, speed)
