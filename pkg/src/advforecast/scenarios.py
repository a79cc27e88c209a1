"""Synthetic wind-power scenarios and preprocessing.

A scenario couples a *true* wind-speed process (which drives the power a
turbine or region actually produces) with a *forecast* of that speed carrying
a correlated forecast error. Models see only the forecast, as a real
day-ahead forecaster would, so even a perfect model has a non-zero clean
error. Power is normalized to installed capacity and lies in [0, 1].

Two layouts:

* series - one site; speed is a scalar per hour.
* maps - a region; speed is an Hm x Wm field per hour and power is the
  spatial mean of the pointwise power curve.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .models import ForecastSample


@dataclass(frozen=True)
class PowerCurve:
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        if not 0 < self.cut_in < self.rated < self.cut_out:
            raise ValueError(f"power curve needs 0 < cut_in < rated < cut_out, got {self}")


def power_curve_apply(speed, curve: PowerCurve = PowerCurve()) -> np.ndarray:
    """Normalized output: cubic ramp from cut-in to rated, flat to cut-out, 0 beyond."""
    v = np.asarray(speed, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("wind speeds must be non-negative")
    ramp = np.clip((v - curve.cut_in) / (curve.rated - curve.cut_in), 0.0, 1.0) ** 3
    return np.where((v < curve.cut_in) | (v > curve.cut_out), 0.0, ramp)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    length: int = 1000
    mean_speed: float = 8.0
    reversion: float = 0.05
    volatility: float = 0.8
    forecast_error: float = 1.2
    forecast_error_corr: float = 0.7
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0
    map_height: int = 20
    map_width: int = 17
    smoothing: float = 4.0
    spatial_volatility: float = 1.5
    spatial_corr: float = 0.9
    context: int = 5
    history: int = 12
    horizon: int = 8
    train_frac: float = 0.6
    val_frac: float = 0.2
    n_datasets: int = 3

    def __post_init__(self):
        if self.volatility < 0 or self.forecast_error < 0 or self.spatial_volatility < 0:
            raise ValueError("volatilities must be non-negative")
        if not 0 < self.reversion <= 1:
            raise ValueError(f"reversion must lie in (0, 1], got {self.reversion}")
        if self.smoothing < 1:
            raise ValueError(f"smoothing length must be >= 1, got {self.smoothing}")
        if self.history < self.context - 1:
            raise ValueError("history must cover the map context")
        if not (0 < self.train_frac and 0 < self.val_frac and self.train_frac + self.val_frac < 1):
            raise ValueError("split fractions must be positive and leave room for a test split")
        PowerCurve(self.cut_in, self.rated, self.cut_out)

    @property
    def curve(self) -> PowerCurve:
        return PowerCurve(self.cut_in, self.rated, self.cut_out)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _rng(config: ScenarioConfig, dataset: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, dataset, stream])


def _ar1(rng, n, rho, std, shape=()):
    """Stationary AR(1) noise with marginal std ``std``."""
    out = np.empty((n,) + shape)
    out[0] = rng.standard_normal(shape) * std
    innov = std * np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        out[t] = rho * out[t - 1] + innov * rng.standard_normal(shape)
    return out


def gen_speed_series(config: ScenarioConfig, dataset: int = 0) -> np.ndarray:
    """Mean-reverting (Ornstein-Uhlenbeck, Euler-discretized) hourly speeds in m/s, floored at 0."""
    rng = _rng(config, dataset, 0)
    v = np.empty(config.length)
    v[0] = config.mean_speed
    shocks = rng.standard_normal(config.length)
    for t in range(1, config.length):
        step = v[t - 1] + config.reversion * (config.mean_speed - v[t - 1]) + config.volatility * shocks[t]
        v[t] = max(step, 0.0)
    return v


def gen_forecast_series(config: ScenarioConfig, speed: np.ndarray, dataset: int = 0) -> np.ndarray:
    """Speed forecast = truth + AR(1) forecast error, floored at 0."""
    err = _ar1(_rng(config, dataset, 1), len(speed), config.forecast_error_corr, config.forecast_error)
    return np.maximum(speed + err, 0.0)


def _smooth_unit(rng, shape, sigma):
    """Gaussian-smoothed white noise on a torus, rescaled to unit pointwise variance."""
    impulse = np.zeros(shape)
    impulse[0, 0] = 1.0
    scale = np.sqrt(np.sum(gaussian_filter(impulse, sigma, mode="wrap") ** 2))
    return gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap") / scale


def _smooth_field_sequence(rng, n, shape, sigma, rho, std):
    out = np.empty((n,) + shape)
    out[0] = std * _smooth_unit(rng, shape, sigma)
    innov = std * np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        out[t] = rho * out[t - 1] + innov * _smooth_unit(rng, shape, sigma)
    return out


def gen_speed_maps(config: ScenarioConfig, dataset: int = 0):
    """True and forecast speed fields plus regional power.

    Returns ``(true_maps, forecast_maps, power)`` with map arrays of shape
    (L, Hm, Wm) in m/s and power (L,) in [0, 1].
    """
    shape = (config.map_height, config.map_width)
    regional = gen_speed_series(config, dataset)
    anomaly = _smooth_field_sequence(_rng(config, dataset, 2), config.length, shape,
                                     config.smoothing, config.spatial_corr, config.spatial_volatility)
    true_maps = np.maximum(regional[:, None, None] + anomaly, 0.0)
    error = _smooth_field_sequence(_rng(config, dataset, 3), config.length, shape,
                                   config.smoothing, config.forecast_error_corr, config.forecast_error)
    forecast_maps = np.maximum(true_maps + error, 0.0)
    power = power_curve_apply(true_maps, config.curve).mean(axis=(1, 2))
    return true_maps, forecast_maps, power


# -- preprocessing ------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def standardize(values, stats: Standardizer | None = None):
    """z-score ``values``; stats come from ``values`` itself unless given.

    Wind speed is a single feature, so maps share one mean/std over all cells.
    """
    values = np.asarray(values, dtype=np.float64)
    if stats is None:
        std = float(values.std())
        if not std > 0:
            raise ValueError("cannot standardize a zero-variance feature")
        stats = Standardizer(float(values.mean()), std)
    return stats.apply(values), stats


def destandardize(values, stats: Standardizer) -> np.ndarray:
    return stats.invert(values)


def make_windows(power, exo, history: int = 12, horizon: int = 8, context: int = 5,
                 start_id: int = 0) -> list[ForecastSample]:
    """One-step sliding windows.

    Window k uses power[k : k+history] as history and power[k+history :
    k+history+horizon] as truth. For series ``exo`` (L,), its exo is the speed
    at the forecast steps. For maps ``exo`` (L, Hm, Wm), forecast step j gets
    the ``context`` maps ending at j, giving exo of shape (H, C, Hm, Wm).
    """
    power = np.asarray(power, dtype=np.float64)
    exo = np.asarray(exo, dtype=np.float64)
    n = len(power)
    if len(exo) != n:
        raise ValueError(f"power has {n} steps but exo has {len(exo)}")
    if n < history + horizon:
        raise ValueError(f"series of length {n} is shorter than history+horizon={history + horizon}")
    maps = exo.ndim == 3
    if maps and history < context - 1:
        raise ValueError("history must be at least context-1 for map windows")
    out = []
    for k in range(n - history - horizon + 1):
        steps = np.arange(k + history, k + history + horizon)
        if maps:
            x = np.stack([exo[j - context + 1:j + 1] for j in steps])
        else:
            x = exo[steps]
        out.append(ForecastSample(power[k:k + history], x, power[steps], start_id + k))
    return out


@dataclass
class Scenario:
    """One dataset: contiguous train/val/test windows plus preprocessing stats."""

    kind: str
    dataset: int
    train: list
    val: list
    test: list
    stats: Standardizer
    input_bounds: tuple
    raw: dict = field(default_factory=dict, repr=False)

    def epsilon_in_ms(self, epsilon: float) -> float:
        """Speed change in m/s that a standardized budget corresponds to."""
        return epsilon * self.stats.std


def _split_points(n, config):
    a = int(round(n * config.train_frac))
    b = int(round(n * (config.train_frac + config.val_frac)))
    return a, b


def build_scenario(config: ScenarioConfig, kind: str = "series", dataset: int = 0) -> Scenario:
    """Generate, split (before windowing), standardize and window one dataset."""
    if kind == "series":
        speed = gen_speed_series(config, dataset)
        forecast = gen_forecast_series(config, speed, dataset)
        power = power_curve_apply(speed, config.curve)
        raw = {"speed": speed, "forecast": forecast, "power": power}
    elif kind == "maps":
        true_maps, forecast, power = gen_speed_maps(config, dataset)
        raw = {"speed": true_maps, "forecast": forecast, "power": power}
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    a, b = _split_points(config.length, config)
    _, stats = standardize(forecast[:a])
    z = stats.apply(forecast)
    seg = {"train": (0, a), "val": (a, b), "test": (b, config.length)}
    windows = {name: make_windows(power[s:e], z[s:e], config.history, config.horizon, config.context)
               for name, (s, e) in seg.items()}
    bounds = (float(z[:a].min()), float(z[:a].max()))
    return Scenario(kind, dataset, windows["train"], windows["val"], windows["test"], stats, bounds, raw)


def build_datasets(config: ScenarioConfig, kind: str = "series") -> list[Scenario]:
    return [build_scenario(config, kind, i) for i in range(config.n_datasets)]


# -- attacker catalogs --------------------------------------------------------


def catalog_targets(horizon: int = 8) -> dict[str, np.ndarray]:
    if horizon < 2:
        raise ValueError("targets need a horizon of at least 2")
    inc = np.linspace(0.0, 1.0, horizon)
    return {
        "increasing": inc,
        "decreasing": inc[::-1].copy(),
        "constant": np.full(horizon, 0.5),
        "zigzag": np.where(np.arange(horizon) % 2 == 0, 0.25, 0.75),
    }


BANDS = {"low": (0.0, 0.25), "medium": (0.25, 0.5), "high": (0.5, 0.75), "very_high": (0.75, 1.0)}


def catalog_bands(horizon: int = 8) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    if horizon < 2:
        raise ValueError("bands need a horizon of at least 2")
    return {name: (np.full(horizon, lo), np.full(horizon, hi)) for name, (lo, hi) in BANDS.items()}


# -- external data ------------------------------------------------------------


class CsvSchemaError(ValueError):
    pass


def load_csv(path):
    """Read ``timestamp,power,speed`` or ``timestamp,power,u,v`` hourly data.

    Returns ``(power, speed)``; with u/v columns the horizontal speed is
    sqrt(u^2 + v^2). Errors name the offending file line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if "power" not in cols:
            raise CsvSchemaError(f"{path}: missing column 'power'")
        if "speed" in cols:
            speed_cols = ("speed",)
        elif {"u", "v"} <= cols:
            speed_cols = ("u", "v")
        else:
            raise CsvSchemaError(f"{path}: missing column 'speed' (or both 'u' and 'v')")
        power, speed = [], []
        for line, row in enumerate(reader, start=2):
            vals = {}
            for col in ("power",) + speed_cols:
                try:
                    vals[col] = float(row[col])
                except (TypeError, ValueError):
                    raise CsvSchemaError(f"{path}: row {line}: non-numeric {col!r} value {row[col]!r}") from None
                if not np.isfinite(vals[col]):
                    raise CsvSchemaError(f"{path}: row {line}: non-finite {col!r} value")
            if not 0.0 <= vals["power"] <= 1.0:
                raise CsvSchemaError(f"{path}: row {line}: power {vals['power']} outside [0, 1]")
            if speed_cols == ("speed",):
                if vals["speed"] < 0:
                    raise CsvSchemaError(f"{path}: row {line}: negative speed {vals['speed']}")
                speed.append(vals["speed"])
            else:
                speed.append(float(np.hypot(vals["u"], vals["v"])))
            power.append(vals["power"])
    return np.array(power), np.array(speed)


def write_series_csv(path, power, speed, start="2020-01-01T00:00") -> None:
    first = np.datetime64(start, "h")
    stamps = np.arange(first, first + len(power))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "power", "speed"])
        for ts, p, s in zip(stamps, power, speed):
            writer.writerow([str(ts), repr(float(p)), repr(float(s))])
