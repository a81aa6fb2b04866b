"""Two-stage soil oxygen forecasting.

Stage one is a self-consistent multivariate backbone: per variate, dominant
periods are detected once at fit time (flood-schedule frequency bins are
excluded so the controller's own cadence is not mistaken for an environmental
rhythm), and at prediction time a seasonal profile is re-fit on the recent
window and continued forward; a cross-variate ridge regression on
deseasonalized lag features predicts whatever the seasonal continuation
misses, directly for all S future steps.

Stage two calibrates the preliminary forecast against exogenous clues (the
weather forecast and a candidate flooding plan). Clue-minus-preliminary
deltas propagate through a fixed tier structure ({flood, weather} -> soil
water -> oxygen) via small per-edge lagged linear models, and the oxygen
delta is added to the preliminary oxygen forecast.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .core import (
    O_ATM_PCT,
    VARIATE_NAMES,
    ExogenousClues,
    HistoryWindow,
    OxygenTrace,
    TimeAxis,
    forecast_metrics,
    validate_frame,
)
from .spectral import action_frequency_bins, dominant_periods, fold_2d, periodogram, seasonal_profile

TIER1 = ("flood", "precip_mm", "temp_c", "rh_pct", "wind_ms")
TIER2 = ("swc",)
TIER3 = ("oxygen_pct",)
# Every edge crosses tiers downward; acyclic by construction.
EDGES = tuple((a, b) for a in TIER1 for b in TIER2 + TIER3) + (("swc", "oxygen_pct"),)

VARIATE_BOUNDS = {
    "oxygen_pct": (0.0, O_ATM_PCT),
    "swc": (0.0, 1.0),
    "flood": (0.0, 1.0),
    "precip_mm": (0.0, None),
    "temp_c": (None, None),
    "rh_pct": (0.0, 100.0),
    "wind_ms": (0.0, None),
}

_MODEL_MAGIC = b"AQMRF1"


@dataclass(frozen=True)
class BackboneConfig:
    t_in: int = 720
    s: int = 720
    k_periods: int = 2
    ridge_lambda: float = 1.0
    downsample: int = 6
    train_stride: int = 24
    recency_halflife: float = 4.0
    action_amp_ratio: float = 0.2

    def __post_init__(self) -> None:
        if self.t_in < 4 or self.s < 1:
            raise ValueError("t_in must be >= 4 and s >= 1")
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")
        if not (1 <= self.downsample <= self.t_in):
            raise ValueError("downsample must be in [1, t_in]")
        if self.train_stride < 1 or self.k_periods < 1:
            raise ValueError("train_stride and k_periods must be >= 1")


@dataclass(frozen=True)
class CausalConfig:
    p: int = 6
    ridge_lambda: float = 0.1
    n_windows: int = 30
    stride: int = 6

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError("lag order p must be >= 1")
        if self.ridge_lambda <= 0 or self.n_windows < 1 or self.stride < 1:
            raise ValueError("ridge_lambda, n_windows and stride must be positive")


@dataclass
class BackboneModel:
    config: BackboneConfig
    periods: dict[str, tuple[int, ...]]
    weights: dict[str, np.ndarray]

    @property
    def n_features(self) -> int:
        return len(VARIATE_NAMES) * self._lags_per_variate

    @property
    def _lags_per_variate(self) -> int:
        d = self.config.downsample
        return len(range(d - 1, self.config.t_in, d))


@dataclass(frozen=True)
class CausalEdgeModel:
    source: str
    target: str
    p: int
    a_levels: np.ndarray
    a_derivs: np.ndarray
    resid_var: float

    def __post_init__(self) -> None:
        for name in ("a_levels", "a_derivs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.p,):
                raise ValueError(f"{name} must have length p={self.p}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass
class CausalModel:
    config: CausalConfig
    edges: dict[tuple[str, str], CausalEdgeModel]


@dataclass
class ForecastModels:
    backbone: BackboneModel
    causal: CausalModel


@dataclass
class MultiForecast:
    """Preliminary per-variate forecast over the horizon axis."""

    axis: TimeAxis
    values: dict[str, np.ndarray]

    def column(self, name: str) -> np.ndarray:
        return self.values[name]

    def __len__(self) -> int:
        return self.axis.count


@dataclass
class ForecastResult:
    preliminary: MultiForecast
    calibrated_oxygen: OxygenTrace
    calibrated_swc: np.ndarray
    deltas: dict[str, np.ndarray]


def _seasonal_split(values: np.ndarray, periods: tuple[int, ...], s_out: int, halflife: float):
    """Fit the dominant-period seasonal model on one window.

    Returns the in-window seasonal fit and its s_out-step continuation. With
    no usable period both are the window mean, so constant series are
    reproduced exactly and the ridge stage sees zero residuals.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if not periods:
        level = float(x.mean()) if n else 0.0
        return np.full(n, level), np.full(s_out, level)
    period = periods[0]
    folded = fold_2d(x, period)
    model = seasonal_profile(folded, halflife)
    rows = folded.matrix.shape[0]
    pad = rows * period - n
    j = np.arange(n) + pad
    in_fit = model.predict_rows(j % period, j // period - (rows - 1))
    f = np.arange(s_out)
    cont = model.predict_rows(f % period, 1 + f // period)
    return in_fit, cont


def _clamp(name: str, values: np.ndarray) -> np.ndarray:
    lo, hi = VARIATE_BOUNDS[name]
    return np.clip(values, -np.inf if lo is None else lo, np.inf if hi is None else hi)


def detect_periods(history: HistoryWindow, config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    """Dominant periods per variate, skipping flood-cadence bins everywhere
    except on the flood series itself (whose rhythm IS the action cadence)."""
    action_bins = action_frequency_bins(history.flood, config.action_amp_ratio)
    out: dict[str, tuple[int, ...]] = {}
    for name in VARIATE_NAMES:
        spec = periodogram(history.column(name))
        excluded = set() if name == "flood" else action_bins
        found = dominant_periods(spec, config.k_periods, excluded)
        out[name] = tuple(p for p in found if 2 <= p <= config.t_in)
    return out


def _window_features(model: BackboneModel, cols: dict[str, np.ndarray], start: int):
    """Deseasonalized lag features plus per-variate seasonal continuations for
    the window ending at ``start`` (exclusive)."""
    cfg = model.config
    d = cfg.downsample
    feats = np.empty(model.n_features)
    conts: dict[str, np.ndarray] = {}
    lags = model._lags_per_variate
    for vi, name in enumerate(VARIATE_NAMES):
        win = cols[name][start - cfg.t_in : start]
        in_fit, cont = _seasonal_split(win, model.periods[name], cfg.s, cfg.recency_halflife)
        feats[vi * lags : (vi + 1) * lags] = (win - in_fit)[d - 1 :: d]
        conts[name] = cont
    return feats, conts


def fit_backbone(history: HistoryWindow, config: BackboneConfig | None = None) -> BackboneModel:
    cfg = config or BackboneConfig()
    n = len(history)
    if n < cfg.t_in + cfg.s:
        raise ValueError(f"insufficient history: need >= {cfg.t_in + cfg.s} steps, got {n}")

    model = BackboneModel(config=cfg, periods=detect_periods(history, cfg), weights={})
    cols = history.columns()
    origins = list(range(cfg.t_in, n - cfg.s + 1, cfg.train_stride))

    features = np.empty((len(origins), model.n_features))
    targets = {name: np.empty((len(origins), cfg.s)) for name in VARIATE_NAMES}
    for i, o in enumerate(origins):
        feats, conts = _window_features(model, cols, o)
        features[i] = feats
        for name in VARIATE_NAMES:
            targets[name][i] = cols[name][o : o + cfg.s] - conts[name]

    gram = features.T @ features + cfg.ridge_lambda * np.eye(model.n_features)
    for name in VARIATE_NAMES:
        model.weights[name] = np.linalg.solve(gram, features.T @ targets[name])
    return model


def predict_backbone(model: BackboneModel, recent: HistoryWindow) -> MultiForecast:
    cfg = model.config
    n = len(recent)
    if n < cfg.t_in:
        raise ValueError(f"recent window too short: need >= {cfg.t_in} steps, got {n}")
    cols = {name: recent.column(name) for name in VARIATE_NAMES}
    feats, conts = _window_features(model, cols, n)
    values = {
        name: _clamp(name, conts[name] + feats @ model.weights[name]) for name in VARIATE_NAMES
    }
    axis = TimeAxis(recent.axis.timestamp(n), cfg.s, recent.axis.step)
    return MultiForecast(axis=axis, values=values)


def _edge_regressors(delta: np.ndarray, p: int) -> np.ndarray:
    """Design matrix for one edge: p lagged levels then p lagged centered
    derivatives of the source delta, zero-padded before the origin."""
    x = np.asarray(delta, dtype=float)
    n = x.size

    def shift(k: int) -> np.ndarray:
        if k <= 0:
            return x
        out = np.zeros(n)
        out[k:] = x[:-k]
        return out

    cols = [shift(j) for j in range(1, p + 1)]
    cols += [(shift(j - 1) - shift(j + 1)) / 2.0 for j in range(1, p + 1)]
    return np.column_stack(cols)


def apply_edge(edge: CausalEdgeModel, delta: np.ndarray) -> np.ndarray:
    coef = np.concatenate([edge.a_levels, edge.a_derivs])
    return _edge_regressors(delta, edge.p) @ coef


def edge_kernel(edge: CausalEdgeModel) -> np.ndarray:
    """The edge response as one causal FIR kernel: apply_edge(e, d) equals
    convolve(d, kernel) truncated to len(d)."""
    p = edge.p
    w = np.zeros(p + 2)
    for k in range(p + 2):
        if 1 <= k <= p:
            w[k] += edge.a_levels[k - 1]
        if k + 1 <= p:
            w[k] += edge.a_derivs[k] / 2.0
        if 1 <= k - 1 <= p:
            w[k] -= edge.a_derivs[k - 2] / 2.0
    return w


def backtest_deltas(
    history: HistoryWindow, backbone: BackboneModel, n_windows: int, stride: int
) -> dict[str, list[np.ndarray]]:
    """Actual-minus-preliminary sequences from rolling-origin backtests, the
    training signal for the causal stage."""
    cfg = backbone.config
    n = len(history)
    last = n - cfg.s
    origins = [last - i * stride for i in range(n_windows)][::-1]
    if not origins or origins[0] < cfg.t_in:
        raise ValueError(
            f"too few backtest windows: {n_windows} windows at stride {stride} "
            f"need >= {cfg.t_in + cfg.s + (n_windows - 1) * stride} steps, got {n}"
        )
    deltas: dict[str, list[np.ndarray]] = {name: [] for name in VARIATE_NAMES}
    for o in origins:
        pred = predict_backbone(backbone, history.slice(o - cfg.t_in, o))
        for name in VARIATE_NAMES:
            deltas[name].append(history.column(name)[o : o + cfg.s] - pred.values[name])
    return deltas


def fit_causal(
    history: HistoryWindow, backbone: BackboneModel, config: CausalConfig | None = None
) -> CausalModel:
    cfg = config or CausalConfig()
    deltas = backtest_deltas(history, backbone, cfg.n_windows, cfg.stride)

    edges: dict[tuple[str, str], CausalEdgeModel] = {}
    design_cache = {
        name: np.vstack([_edge_regressors(d, cfg.p) for d in deltas[name]])
        for name in TIER1 + TIER2
    }
    for src, dst in EDGES:
        X = design_cache[src]
        y = np.concatenate(deltas[dst])
        gram = X.T @ X + cfg.ridge_lambda * np.eye(2 * cfg.p)
        coef = np.linalg.solve(gram, X.T @ y)
        resid = y - X @ coef
        edges[(src, dst)] = CausalEdgeModel(
            source=src,
            target=dst,
            p=cfg.p,
            a_levels=coef[: cfg.p],
            a_derivs=coef[cfg.p :],
            resid_var=float(np.mean(resid**2)),
        )
    return CausalModel(config=cfg, edges=edges)


def fit_edge(
    delta_src: np.ndarray, delta_dst: np.ndarray, p: int, ridge_lambda: float = 0.1
) -> CausalEdgeModel:
    """Fit a single edge on one pair of delta sequences (mainly for analysis
    and tests; fit_causal is the production path)."""
    if p < 1:
        raise ValueError("lag order p must be >= 1")
    X = _edge_regressors(delta_src, p)
    y = np.asarray(delta_dst, dtype=float)
    gram = X.T @ X + ridge_lambda * np.eye(2 * p)
    coef = np.linalg.solve(gram, X.T @ y)
    resid = y - X @ coef
    return CausalEdgeModel(
        source="src",
        target="dst",
        p=p,
        a_levels=coef[:p],
        a_derivs=coef[p:],
        resid_var=float(np.mean(resid**2)),
    )


def calibrate(
    preliminary: MultiForecast, clues: ExogenousClues, causal: CausalModel
) -> ForecastResult:
    s = len(preliminary)
    if clues.axis.count != s:
        raise ValueError(f"horizon mismatch: clues {clues.axis.count} vs forecast {s}")

    def edge(src: str, dst: str) -> CausalEdgeModel:
        try:
            return causal.edges[(src, dst)]
        except KeyError:
            raise ValueError(f"missing edge model {src} -> {dst}") from None

    deltas: dict[str, np.ndarray] = {}
    for name in ExogenousClues.CLUE_NAMES:
        deltas[name] = clues.column(name) - preliminary.values[name]

    d_swc = np.zeros(s)
    for src in TIER1:
        d_swc += apply_edge(edge(src, "swc"), deltas[src])
    deltas["swc"] = d_swc

    d_oxy = np.zeros(s)
    for src in TIER1:
        d_oxy += apply_edge(edge(src, "oxygen_pct"), deltas[src])
    d_oxy += apply_edge(edge("swc", "oxygen_pct"), d_swc)
    deltas["oxygen_pct"] = d_oxy

    cal_ox = np.clip(preliminary.values["oxygen_pct"] + d_oxy, 0.0, O_ATM_PCT)
    cal_swc = np.clip(preliminary.values["swc"] + d_swc, 0.0, 1.0)
    return ForecastResult(
        preliminary=preliminary,
        calibrated_oxygen=OxygenTrace(preliminary.axis, cal_ox),
        calibrated_swc=cal_swc,
        deltas=deltas,
    )


def forecast(models: ForecastModels, recent: HistoryWindow, clues: ExogenousClues) -> ForecastResult:
    return calibrate(predict_backbone(models.backbone, recent), clues, models.causal)


def refit(models: ForecastModels, history: HistoryWindow) -> ForecastModels:
    """Full re-fit on the given (typically extended) history with the same
    configuration; incremental updates are deliberately not attempted."""
    report = validate_frame(history)
    if not report.ok:
        raise ValueError(f"history failed validation: {report.violations}")
    backbone = fit_backbone(report.frame, models.backbone.config)
    causal = fit_causal(report.frame, backbone, models.causal.config)
    return ForecastModels(backbone=backbone, causal=causal)


def rolling_backtest(
    models: ForecastModels, history: HistoryWindow, n_windows: int = 50, stride: int = 36
) -> list[dict]:
    """Held-out window metrics with and without clue calibration; clues are
    taken from the realized history (a perfect-hindsight weather forecast plus
    the flood schedule actually applied)."""
    cfg = models.backbone.config
    n = len(history)
    last = n - cfg.s
    origins = [last - i * stride for i in range(n_windows)][::-1]
    if not origins or origins[0] < cfg.t_in:
        raise ValueError(f"too few backtest windows for history of {n} steps")

    rows = []
    for o in origins:
        recent = history.slice(o - cfg.t_in, o)
        horizon_axis = history.axis.slice(o, o + cfg.s)
        clues = ExogenousClues(
            axis=horizon_axis,
            flood=history.flood[o : o + cfg.s],
            precip_mm=history.precip_mm[o : o + cfg.s],
            temp_c=history.temp_c[o : o + cfg.s],
            rh_pct=history.rh_pct[o : o + cfg.s],
            wind_ms=history.wind_ms[o : o + cfg.s],
        )
        result = forecast(models, recent, clues)
        actual = OxygenTrace(horizon_axis, history.oxygen_pct[o : o + cfg.s])
        prelim = OxygenTrace(horizon_axis, result.preliminary.values["oxygen_pct"])
        rows.append(
            {
                "origin": o,
                "calibrated": forecast_metrics(result.calibrated_oxygen, actual),
                "preliminary": forecast_metrics(prelim, actual),
            }
        )
    return rows


def save_models(models: ForecastModels, path) -> None:
    b = models.backbone
    header = {
        "format": "aquamar-forecast-model",
        "version": 1,
        "backbone": {
            "config": asdict(b.config),
            "periods": {k: list(v) for k, v in b.periods.items()},
            "weights_shape": [b.n_features, b.config.s],
        },
        "causal": {
            "config": asdict(models.causal.config),
            "edges": [
                {
                    "source": e.source,
                    "target": e.target,
                    "p": e.p,
                    "a_levels": [float(v) for v in e.a_levels],
                    "a_derivs": [float(v) for v in e.a_derivs],
                    "resid_var": e.resid_var,
                }
                for _, e in sorted(models.causal.edges.items())
            ],
        },
    }
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for name in VARIATE_NAMES:
            fh.write(np.ascontiguousarray(b.weights[name], dtype="<f8").tobytes())


def load_models(path) -> ForecastModels:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != _MODEL_MAGIC:
            raise ValueError("not a forecast model file")
        header = json.loads(fh.readline().decode())
        if header.get("version") != 1:
            raise ValueError(f"unsupported model version {header.get('version')!r}")
        bh = header["backbone"]
        cfg = BackboneConfig(**bh["config"])
        n_feat, s = bh["weights_shape"]
        weights = {}
        for name in VARIATE_NAMES:
            raw = fh.read(n_feat * s * 8)
            if len(raw) != n_feat * s * 8:
                raise ValueError("model file truncated")
            weights[name] = np.frombuffer(raw, dtype="<f8").reshape(n_feat, s)
        backbone = BackboneModel(
            config=cfg,
            periods={k: tuple(v) for k, v in bh["periods"].items()},
            weights=weights,
        )
        ch = header["causal"]
        causal = CausalModel(
            config=CausalConfig(**ch["config"]),
            edges={
                (e["source"], e["target"]): CausalEdgeModel(
                    source=e["source"],
                    target=e["target"],
                    p=e["p"],
                    a_levels=np.array(e["a_levels"]),
                    a_derivs=np.array(e["a_derivs"]),
                    resid_var=e["resid_var"],
                )
                for e in ch["edges"]
            },
        )
    return ForecastModels(backbone=backbone, causal=causal)


class OxygenForecaster(BaseEstimator):
    """Estimator wrapper around the two-stage pipeline.

    fit() expects a HistoryWindow; predict() returns the calibrated oxygen
    forecast for a recent window plus exogenous clues. Parameters follow the
    usual get_params/set_params protocol so grid search and cloning work.
    """

    def __init__(
        self,
        t_in: int = 720,
        s: int = 720,
        k_periods: int = 2,
        backbone_lambda: float = 1.0,
        downsample: int = 6,
        train_stride: int = 24,
        recency_halflife: float = 4.0,
        action_amp_ratio: float = 0.2,
        causal_p: int = 6,
        causal_lambda: float = 0.1,
        backtest_windows: int = 30,
        backtest_stride: int = 6,
    ):
        self.t_in = t_in
        self.s = s
        self.k_periods = k_periods
        self.backbone_lambda = backbone_lambda
        self.downsample = downsample
        self.train_stride = train_stride
        self.recency_halflife = recency_halflife
        self.action_amp_ratio = action_amp_ratio
        self.causal_p = causal_p
        self.causal_lambda = causal_lambda
        self.backtest_windows = backtest_windows
        self.backtest_stride = backtest_stride

    def _configs(self) -> tuple[BackboneConfig, CausalConfig]:
        return (
            BackboneConfig(
                t_in=self.t_in,
                s=self.s,
                k_periods=self.k_periods,
                ridge_lambda=self.backbone_lambda,
                downsample=self.downsample,
                train_stride=self.train_stride,
                recency_halflife=self.recency_halflife,
                action_amp_ratio=self.action_amp_ratio,
            ),
            CausalConfig(
                p=self.causal_p,
                ridge_lambda=self.causal_lambda,
                n_windows=self.backtest_windows,
                stride=self.backtest_stride,
            ),
        )

    def fit(self, history: HistoryWindow, y=None) -> "OxygenForecaster":
        bcfg, ccfg = self._configs()
        backbone = fit_backbone(history, bcfg)
        causal = fit_causal(history, backbone, ccfg)
        self.models_ = ForecastModels(backbone=backbone, causal=causal)
        return self

    def _check_fitted(self) -> ForecastModels:
        if not hasattr(self, "models_"):
            raise ValueError("forecaster is not fitted; call fit() first")
        return self.models_

    def forecast(self, recent: HistoryWindow, clues: ExogenousClues) -> ForecastResult:
        return forecast(self._check_fitted(), recent, clues)

    def predict(self, recent: HistoryWindow, clues: ExogenousClues) -> np.ndarray:
        return self.forecast(recent, clues).calibrated_oxygen.values

    def refit(self, history: HistoryWindow) -> "OxygenForecaster":
        self.models_ = refit(self._check_fitted(), history)
        return self

    def save(self, path) -> None:
        save_models(self._check_fitted(), path)

    @classmethod
    def load(cls, path) -> "OxygenForecaster":
        models = load_models(path)
        b, c = models.backbone.config, models.causal.config
        est = cls(
            t_in=b.t_in,
            s=b.s,
            k_periods=b.k_periods,
            backbone_lambda=b.ridge_lambda,
            downsample=b.downsample,
            train_stride=b.train_stride,
            recency_halflife=b.recency_halflife,
            action_amp_ratio=b.action_amp_ratio,
            causal_p=c.p,
            causal_lambda=c.ridge_lambda,
            backtest_windows=c.n_windows,
            backtest_stride=c.stride,
        )
        est.models_ = models
        return est
