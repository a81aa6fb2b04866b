"""FFT periodicity analysis and 2D period folding.

Detects dominant periods in environmental series, identifies frequency bins
driven by the flooding schedule itself (so they can be excluded from
environmental period selection), and folds a series into a rows-by-period
matrix from which a recency-weighted seasonal profile is extracted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray  # cycles per step, strictly increasing in (0, 0.5]
    amplitudes: np.ndarray
    n: int  # original series length

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        if f.shape != a.shape:
            raise ValueError("frequency/amplitude length mismatch")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "amplitudes", a)


@dataclass(frozen=True)
class FoldedSeries:
    period: int
    matrix: np.ndarray  # rows x period, oldest row first
    pad_mask: np.ndarray  # True where the cell is synthetic padding

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def flatten(self) -> np.ndarray:
        """Undo the fold, dropping padded cells."""
        return self.matrix.ravel()[self.pad_mask.size - self.valid_length :]

    @property
    def valid_length(self) -> int:
        return int(self.pad_mask.size - self.pad_mask.sum())


def periodogram(series) -> Spectrum:
    """One-sided amplitude spectrum of the demeaned series, DC excluded."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 4:
        raise ValueError("series must be 1-D with at least 4 samples")
    n = x.size
    amp = np.abs(np.fft.rfft(x - x.mean())) * (2.0 / n)
    # rfft bin k corresponds to frequency k/n; drop DC (k=0).
    freqs = np.arange(1, amp.size) / n
    return Spectrum(frequencies=freqs, amplitudes=amp[1:], n=n)


def action_frequency_bins(flood, amp_ratio: float = 0.2) -> set[int]:
    """Bins of the flood schedule's spectrum strong enough to contaminate
    environmental period detection, widened by one neighbor on each side.

    Bin indices index into the Spectrum arrays of a same-length series.
    """
    flood = np.asarray(flood, dtype=float)
    if flood.size and not np.all((flood == 0) | (flood == 1)):
        raise ValueError("flood sequence must be binary")
    spec = periodogram(flood)
    peak = spec.amplitudes.max(initial=0.0)
    if peak <= 0.0:
        return set()
    hot = np.flatnonzero(spec.amplitudes >= amp_ratio * peak)
    out: set[int] = set()
    last = spec.amplitudes.size - 1
    for i in hot:
        out.update(j for j in (i - 1, i, i + 1) if 0 <= j <= last)
    return out


def dominant_periods(spec: Spectrum, k: int = 2, excluded: set[int] | None = None) -> list[int]:
    """Top-k periods by spectral amplitude, skipping excluded bins.

    Bins below 3x the median amplitude are treated as noise and dropped, so
    an aperiodic series yields an empty list rather than an arbitrary period.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    excluded = excluded or set()
    amps = spec.amplitudes
    floor = 3.0 * float(np.median(amps)) if amps.size else 0.0
    order = np.argsort(-amps, kind="stable")
    periods: list[int] = []
    for i in order:
        if len(periods) == k:
            break
        if int(i) in excluded or amps[i] < floor:
            continue
        period = int(round(1.0 / spec.frequencies[i]))
        if period >= 2 and period not in periods:
            periods.append(period)
    return periods


def fold_2d(series, period: int) -> FoldedSeries:
    """Reshape a series into rows of one period each, right-aligned so the
    most recent sample lands in the last cell; the leading partial row is
    padded by replicating the first real value."""
    x = np.asarray(series, dtype=float)
    if period < 2:
        raise ValueError("period must be >= 2")
    if period > x.size:
        raise ValueError("period exceeds series length")
    rows = -(-x.size // period)
    pad = rows * period - x.size
    padded = np.concatenate([np.full(pad, x[0]), x])
    mask = np.zeros(rows * period, dtype=bool)
    mask[:pad] = True
    return FoldedSeries(period=period, matrix=padded.reshape(rows, period), pad_mask=mask.reshape(rows, period))


@dataclass(frozen=True)
class SeasonalModel:
    """Per-phase level (anchored at the most recent period) and per-phase slope."""

    period: int
    profile: np.ndarray
    trend: np.ndarray

    def predict_rows(self, phases: np.ndarray, rows_ahead: np.ndarray) -> np.ndarray:
        return self.profile[phases] + self.trend[phases] * rows_ahead


def seasonal_profile(folded: FoldedSeries, recency_halflife: float = 4.0) -> SeasonalModel:
    """Per-phase recency-weighted level plus a per-phase linear trend.

    The level is anchored at the last (most recent) row: the weighted mean of
    each column is shifted along the fitted slope to the final row index, so a
    column with an exact linear trend is continued exactly by
    ``profile + trend * rows_ahead``. Padded cells carry zero weight; columns
    with fewer than 3 real cells get a zero slope.
    """
    m = folded.matrix
    valid = ~folded.pad_mask
    rows, period = m.shape
    r = np.arange(rows, dtype=float)
    w_time = np.power(0.5, (rows - 1 - r) / max(recency_halflife, 1e-9))
    w = w_time[:, None] * valid

    wsum = w.sum(axis=0)
    wsum_safe = np.where(wsum > 0, wsum, 1.0)
    mean_val = (w * m).sum(axis=0) / wsum_safe
    mean_row = (w * r[:, None]).sum(axis=0) / wsum_safe

    # Unweighted least-squares slope per column over real cells.
    trend = np.zeros(period)
    cnt = valid.sum(axis=0)
    if rows >= 3:
        vr = np.where(valid, r[:, None], 0.0)
        vm = np.where(valid, m, 0.0)
        sr = vr.sum(axis=0)
        sm = vm.sum(axis=0)
        srr = (vr * vr).sum(axis=0)
        srm = (vr * vm).sum(axis=0)
        denom = cnt * srr - sr * sr
        ok = (cnt >= 3) & (denom > 0)
        trend[ok] = (cnt[ok] * srm[ok] - sr[ok] * sm[ok]) / denom[ok]

    profile = mean_val + trend * (rows - 1 - mean_row)
    return SeasonalModel(period=folded.period, profile=profile, trend=trend)
