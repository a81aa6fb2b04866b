"""Weather ingestion, synthesis, and forecast-error modeling.

Historical weather arrives as CSV on the native 10-minute grid; forecasts
arrive as an hourly JSON subset (the shape produced by common open forecast
APIs) and are resampled to 10 minutes. A seeded synthetic generator provides
diurnal temperature, Poisson storm arrivals, and AR(1) humidity/wind for
experiments, and ``perturb_forecast`` turns a true future into a plausibly
wrong forecast clue.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .core import TimeAxis, parse_timestamp, format_timestamp, _freeze

CSV_HEADER = ("timestamp", "precip_mm", "temp_c", "rh_pct", "wind_ms")

FORECAST_KEYS = {
    "time": "time",
    "precipitation": "precip_mm",
    "temperature_2m": "temp_c",
    "relative_humidity_2m": "rh_pct",
    "wind_speed_10m": "wind_ms",
}


@dataclass(frozen=True)
class WeatherRecord:
    timestamp: datetime
    precip_mm: float
    temp_c: float
    rh_pct: float
    wind_ms: float

    def __post_init__(self) -> None:
        if self.precip_mm < 0:
            raise ValueError("precip_mm must be non-negative")
        if not (0.0 <= self.rh_pct <= 100.0):
            raise ValueError("rh_pct must lie in [0, 100]")


@dataclass(frozen=True)
class WeatherSeries:
    axis: TimeAxis
    precip_mm: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray
    wind_ms: np.ndarray

    COLUMNS = ("precip_mm", "temp_c", "rh_pct", "wind_ms")

    def __post_init__(self) -> None:
        for name in self.COLUMNS:
            arr = _freeze(getattr(self, name))
            if arr.shape != (self.axis.count,):
                raise ValueError(f"{name} length does not match axis")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.axis.count

    def record(self, i: int) -> WeatherRecord:
        return WeatherRecord(
            timestamp=self.axis.timestamp(i),
            precip_mm=float(self.precip_mm[i]),
            temp_c=float(self.temp_c[i]),
            rh_pct=float(self.rh_pct[i]),
            wind_ms=float(self.wind_ms[i]),
        )

    def slice(self, start: int, stop: int) -> "WeatherSeries":
        return WeatherSeries(
            axis=self.axis.slice(start, stop),
            precip_mm=self.precip_mm[start:stop],
            temp_c=self.temp_c[start:stop],
            rh_pct=self.rh_pct[start:stop],
            wind_ms=self.wind_ms[start:stop],
        )


class WeatherFormatError(ValueError):
    pass


def load_csv(stream) -> WeatherSeries:
    """Read weather CSV with the exact header
    ``timestamp,precip_mm,temp_c,rh_pct,wind_ms``; timestamps must be strictly
    increasing and uniformly spaced."""
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream if isinstance(stream, str) else stream.decode())
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise WeatherFormatError("empty file") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise WeatherFormatError(f"header must be exactly {','.join(CSV_HEADER)}")

    times: list[datetime] = []
    cols: list[list[float]] = [[], [], [], []]
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise WeatherFormatError(f"line {lineno}: expected 5 fields")
        try:
            times.append(parse_timestamp(row[0]))
        except ValueError as exc:
            raise WeatherFormatError(f"line {lineno}: bad timestamp") from exc
        for j, cell in enumerate(row[1:]):
            try:
                cols[j].append(float(cell))
            except ValueError as exc:
                raise WeatherFormatError(f"line {lineno}: unparseable number {cell!r}") from exc

    if not times:
        raise WeatherFormatError("no data rows")
    deltas = {(times[i + 1] - times[i]).total_seconds() for i in range(len(times) - 1)}
    if any(d <= 0 for d in deltas):
        raise WeatherFormatError("timestamps must be strictly increasing")
    if len(deltas) > 1:
        raise WeatherFormatError("timestamps must be uniformly spaced")
    step = timedelta(seconds=deltas.pop()) if deltas else timedelta(seconds=600)

    precip = np.asarray(cols[0])
    rh = np.asarray(cols[2])
    if np.any(precip < 0):
        raise WeatherFormatError("precip_mm must be non-negative")
    if np.any((rh < 0) | (rh > 100)):
        raise WeatherFormatError("rh_pct must lie in [0, 100]")
    axis = TimeAxis(times[0], len(times), step)
    return WeatherSeries(axis=axis, precip_mm=precip, temp_c=np.asarray(cols[1]), rh_pct=rh, wind_ms=np.asarray(cols[3]))


def write_csv(series: WeatherSeries, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i in range(len(series)):
        writer.writerow(
            [
                format_timestamp(series.axis.timestamp(i)),
                repr(float(series.precip_mm[i])),
                repr(float(series.temp_c[i])),
                repr(float(series.rh_pct[i])),
                repr(float(series.wind_ms[i])),
            ]
        )


def load_forecast_json(document) -> WeatherSeries:
    """Resample an hourly forecast document to the 10-minute grid.

    Temperature, humidity, and wind are linearly interpolated between hourly
    samples (held constant over the final hour); hourly precipitation is
    split into six equal parts so totals are conserved exactly.
    """
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if "hourly" not in document:
        raise WeatherFormatError("missing 'hourly' object")
    hourly = document["hourly"]
    missing = [k for k in FORECAST_KEYS if k not in hourly]
    if missing:
        raise WeatherFormatError(f"missing keys: {missing}")
    n_hours = len(hourly["time"])
    for key in FORECAST_KEYS:
        if len(hourly[key]) != n_hours:
            raise WeatherFormatError(f"array length mismatch for {key!r}")
    if n_hours == 0:
        raise WeatherFormatError("empty forecast")

    times = [parse_timestamp(t) for t in hourly["time"]]
    for a, b in zip(times, times[1:]):
        if (b - a).total_seconds() != 3600:
            raise WeatherFormatError("hourly timestamps must be consecutive hours")

    n = n_hours * 6
    pos = np.arange(n) / 6.0  # position in hours
    hour_idx = np.arange(n) // 6
    frac = pos - hour_idx

    def interp(values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        nxt = np.minimum(hour_idx + 1, n_hours - 1)
        right = v[nxt]
        # Hold the last sample over the final hour instead of extrapolating.
        return np.where(hour_idx + 1 < n_hours, v[hour_idx] * (1 - frac) + right * frac, v[hour_idx])

    precip = np.asarray(hourly["precipitation"], dtype=float)
    if np.any(precip < 0):
        raise WeatherFormatError("precipitation must be non-negative")
    axis = TimeAxis(times[0], n, timedelta(seconds=600))
    return WeatherSeries(
        axis=axis,
        precip_mm=np.repeat(precip / 6.0, 6),
        temp_c=interp(hourly["temperature_2m"]),
        rh_pct=np.clip(interp(hourly["relative_humidity_2m"]), 0.0, 100.0),
        wind_ms=interp(hourly["wind_speed_10m"]),
    )


@dataclass(frozen=True)
class SynthWeatherConfig:
    t_mean_c: float = 15.0
    t_amp_c: float = 8.0
    t_peak_hour: float = 15.0
    rain_rate_per_day: float = 0.12
    rain_duration_mean_h: float = 12.0
    rain_intensity_log_mu: float = 0.0  # log of mm/h
    rain_intensity_log_sigma: float = 0.8
    rh_mean_pct: float = 60.0
    rh_sigma_pct: float = 6.0
    wind_mean_ms: float = 2.5
    wind_sigma_ms: float = 0.8
    ar_phi: float = 0.97
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rain_rate_per_day < 0:
            raise ValueError("rain rate must be non-negative")
        if self.t_amp_c < 0:
            raise ValueError("temperature amplitude must be non-negative")


def synth_weather(config: SynthWeatherConfig, n_steps: int, start: datetime | None = None) -> WeatherSeries:
    """Deterministic synthetic weather: sinusoidal diurnal temperature peaking
    at ``t_peak_hour``, Poisson rain events with exponential durations and
    log-normal intensities, and mean-reverting AR(1) humidity and wind."""
    cfg = config
    axis = TimeAxis(start or datetime(2023, 1, 1), n_steps)
    rng = np.random.default_rng(cfg.seed)
    step_h = axis.step_seconds / 3600.0

    hours = axis.hours_of_day()
    temp = cfg.t_mean_c + cfg.t_amp_c * np.sin(2 * np.pi * (hours - cfg.t_peak_hour + 6.0) / 24.0)

    precip = np.zeros(n_steps)
    if cfg.rain_rate_per_day > 0:
        horizon_h = n_steps * step_h
        t = 0.0
        while True:
            t += rng.exponential(24.0 / cfg.rain_rate_per_day)
            if t >= horizon_h:
                break
            duration = rng.exponential(cfg.rain_duration_mean_h)
            intensity = float(np.exp(rng.normal(cfg.rain_intensity_log_mu, cfg.rain_intensity_log_sigma)))
            i0 = int(t / step_h)
            i1 = min(n_steps, int((t + duration) / step_h) + 1)
            precip[i0:i1] += intensity * step_h

    def ar1(mean: float, sigma: float, lo: float, hi: float) -> np.ndarray:
        out = np.empty(n_steps)
        x = mean
        noise = rng.normal(0.0, sigma, size=n_steps)
        for i in range(n_steps):
            x = mean + cfg.ar_phi * (x - mean) + noise[i] * np.sqrt(1 - cfg.ar_phi**2)
            x = min(max(x, lo), hi)
            out[i] = x
        return out

    rh = ar1(cfg.rh_mean_pct, cfg.rh_sigma_pct, 0.0, 100.0)
    wind = ar1(cfg.wind_mean_ms, cfg.wind_sigma_ms, 0.0, np.inf)
    return WeatherSeries(axis=axis, precip_mm=precip, temp_c=temp, rh_pct=rh, wind_ms=wind)


@dataclass(frozen=True)
class ForecastNoise:
    temp_sigma_c: float = 1.0
    rh_sigma_pct: float = 3.0
    wind_sigma_ms: float = 0.5
    precip_log_sigma: float = 0.3
    jitter_max_steps: int = 6

    def __post_init__(self) -> None:
        for name in ("temp_sigma_c", "rh_sigma_pct", "wind_sigma_ms", "precip_log_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.jitter_max_steps < 0:
            raise ValueError("jitter_max_steps must be non-negative")


def perturb_forecast(truth: WeatherSeries, noise: ForecastNoise, seed) -> WeatherSeries:
    """Turn a true future into an imperfect forecast clue: additive noise on
    temperature/humidity/wind, and per-event timing jitter plus log-normal
    amplitude error on precipitation. All-zero noise returns the truth
    unchanged (bit-exact)."""
    rng = np.random.default_rng(seed)
    n = len(truth)

    temp = truth.temp_c + rng.normal(0.0, noise.temp_sigma_c, size=n)
    rh = np.clip(truth.rh_pct + rng.normal(0.0, noise.rh_sigma_pct, size=n), 0.0, 100.0)
    wind = np.maximum(truth.wind_ms + rng.normal(0.0, noise.wind_sigma_ms, size=n), 0.0)

    precip = np.zeros(n)
    positive = truth.precip_mm > 0
    i = 0
    while i < n:
        if not positive[i]:
            i += 1
            continue
        j = i
        while j < n and positive[j]:
            j += 1
        shift = int(rng.integers(-noise.jitter_max_steps, noise.jitter_max_steps + 1))
        scale = float(np.exp(rng.normal(0.0, noise.precip_log_sigma)))
        for k in range(i, j):
            dst = k + shift
            if 0 <= dst < n:
                precip[dst] += truth.precip_mm[k] * scale
        i = j

    return WeatherSeries(axis=truth.axis, precip_mm=np.maximum(precip, 0.0), temp_c=temp, rh_pct=rh, wind_ms=wind)
