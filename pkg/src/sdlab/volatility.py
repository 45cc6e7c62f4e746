"""Windowed marginal-volatility estimates and their theoretical values.

A window starting at grid index i holds K increments
S_j = P(t_{i+j}) - P(t_{i+j-1}), j = 1..K (log P for ``vlog``). With
Var{S_j} = mean(S^2) - mean(S)^2 the estimates are

    vp    Var{S_j} / dt
    vpn   Var{S_j} / dt / Pbar^2,   Pbar = K^-1 sum_{j=0}^{K-1} P(t_{i+j})
    vlog  Var{Delta log P} / dt

The theory is (sigma G'(x) x)^2 at the window centre, times P^2 for vp.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy import stats

from .gfunc import GFunction, g_eval, g_prime
from .sde import MarketScenario, PathEnsemble, PricePath, Scheme, deterministic_log_price

__all__ = [
    "ExtremaReport",
    "IngestError",
    "Mode",
    "VolatilityConfig",
    "VolatilitySeries",
    "estimate_volatility",
    "extrema_report",
    "ingest_prices",
    "theoretical_volatility",
    "window_additivity",
]


class Mode(str, enum.Enum):
    VP = "vp"
    VPN = "vpn"
    VLOG = "vlog"


@dataclass(frozen=True)
class VolatilityConfig:
    """K increments per window; ``stride`` defaults to K (non-overlapping)."""

    window: int
    stride: int | None = None
    mode: Mode = Mode.VLOG
    bessel: bool = False

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 2:
            raise ValueError("window K must be an integer >= 2")
        stride = self.window if self.stride is None else self.stride
        if int(stride) != stride or stride < 1:
            raise ValueError("stride must be a positive integer")
        object.__setattr__(self, "window", int(self.window))
        object.__setattr__(self, "stride", int(stride))
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def overlapping(self) -> bool:
        return self.stride < self.window


@dataclass
class VolatilitySeries:
    centers: np.ndarray
    estimates: np.ndarray
    mode: Mode
    theory: np.ndarray | None = None
    dropped: int = 0
    overlapping: bool = False
    per_path: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.estimates < 0):
            raise ValueError("volatility estimates must be nonnegative")
        if np.any(np.diff(self.centers) <= 0):
            raise ValueError("window centres must be strictly increasing")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("t_center,estimate,theory\n")
            for i, (c, e) in enumerate(zip(self.centers, self.estimates)):
                th = "" if self.theory is None else f"{self.theory[i]:.17g}"
                fh.write(f"{c:.17g},{e:.17g},{th}\n")
        return path


def _starts(n_points: int, cfg: VolatilityConfig):
    """Full window starts and the count of partial windows dropped at the end."""
    last = n_points - 1
    all_starts = np.arange(0, last, cfg.stride)
    full = all_starts[all_starts + cfg.window <= last]
    return full, int(all_starts.size - full.size)


def _window_estimates(times, prices, log_prices, cfg: VolatilityConfig):
    """Estimates for every row of ``prices`` (shape paths x points)."""
    starts, dropped = _starts(prices.shape[1], cfg)
    k = cfg.window
    idx = starts[:, None] + np.arange(k + 1)[None, :]
    dt = float(times[1] - times[0])
    src = log_prices if cfg.mode is Mode.VLOG else prices
    win = src[:, idx]
    inc = np.diff(win, axis=2)
    var = inc.var(axis=2, ddof=1 if cfg.bessel else 0)
    est = var / dt
    if cfg.mode is Mode.VPN:
        pbar = prices[:, idx[:, :k]].mean(axis=2)
        est = est / pbar**2
    centers = times[starts] + 0.5 * k * dt
    return centers, est, dropped


def _as_matrix(path):
    if isinstance(path, PathEnsemble):
        return path.times, path.prices, path.log_prices
    return path.times, path.prices[None, :], path.log_prices[None, :]


def estimate_volatility(path, cfg: VolatilityConfig, scenario: MarketScenario | None = None,
                        g: GFunction | None = None) -> VolatilitySeries:
    """Window estimates for a path, or the pathwise mean over an ensemble.

    With a scenario and G the theoretical value at each window centre is
    attached. Raises ``ValueError`` when the path is shorter than K + 1.
    """
    times, prices, logp = _as_matrix(path)
    if prices.shape[1] < cfg.window + 1:
        raise ValueError(f"path has {prices.shape[1]} points; window needs {cfg.window + 1}")
    centers, est, dropped = _window_estimates(times, prices, logp, cfg)
    series = VolatilitySeries(centers, est.mean(axis=0), cfg.mode, dropped=dropped,
                              overlapping=cfg.overlapping,
                              per_path=est if est.shape[0] > 1 else None)
    if dropped:
        series.notes.append(f"{dropped} partial window(s) at the end dropped")
    if cfg.overlapping:
        series.notes.append("overlapping windows: estimates are serially correlated")
    if scenario is not None and g is not None:
        series.theory = np.array([theoretical_volatility(scenario, g, c, cfg.mode) for c in centers])
    return series


def theoretical_volatility(scenario: MarketScenario, g: GFunction, t: float, mode="vlog",
                           price_hint: float | None = None) -> float:
    """(sigma G'(x) x)^2 at time t, times P^2 for vp.

    For vp the price is ``price_hint`` or the noise-free path; vpn uses the
    noise-free path for both P and E[P], so it equals vlog.
    """
    mode = Mode(mode)
    if not scenario.t0 <= t <= scenario.t_end:
        raise ValueError("t lies outside the scenario horizon")
    x = float(scenario.ratio(t))
    base = (scenario.sigma * g_prime(g, x) * x) ** 2
    if mode is Mode.VP:
        p = price_hint if price_hint is not None else math.exp(float(deterministic_log_price(scenario, g, [t])[0]))
        return base * p * p
    return base


def window_additivity(path, window: int) -> float:
    """Mean over windows of Var_paths[P_end - P_start] / (K mean_paths Var{S_j}).

    Quantifies Var[Delta P] ~ K Var{S_j}; needs an ensemble.
    """
    if not isinstance(path, PathEnsemble) or path.n_paths < 2:
        raise ValueError("window additivity needs an ensemble of at least two paths")
    cfg = VolatilityConfig(window, mode="vp")
    starts, _ = _starts(path.prices.shape[1], cfg)
    p = path.prices
    total = p[:, starts + window] - p[:, starts]
    idx = starts[:, None] + np.arange(window + 1)[None, :]
    within = np.diff(p[:, idx], axis=2).var(axis=2)
    return float(np.mean(total.var(axis=0) / (window * within.mean(axis=0))))


# ---------------------------------------------------------------------------
# extrema


@dataclass
class ExtremaReport:
    price_extrema: list
    deterministic_extrema: list
    vol_minima: list
    vol_max: float | None
    fastest_change: float | None
    min_offsets: list
    max_offset: float | None
    rank_corr_log: float | None
    rank_corr_rel: float | None
    window_length: float
    flags: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"window length {self.window_length:g}",
            f"price extrema (smoothed): {_fmt(self.price_extrema)}",
            f"price extrema (noise-free): {_fmt(self.deterministic_extrema)}",
            f"volatility minima: {_fmt(self.vol_minima)}",
            f"volatility max at {self.vol_max}, fastest price change at {self.fastest_change}",
            f"extremum to nearest volatility minimum offsets: {_fmt(self.min_offsets)}",
            f"fastest change to volatility max offset: {self.max_offset}",
            f"rank correlation |dlog P| vs volatility: {self.rank_corr_log}",
            f"rank correlation |dP/P| vs volatility: {self.rank_corr_rel}",
        ]
        return out + [f"flag: {f}" for f in self.flags]


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.6g}" for x in xs) + "]"


def _interior_minima(y) -> np.ndarray:
    y = np.asarray(y)
    if y.size < 3:
        return np.array([], dtype=int)
    return np.flatnonzero((y[1:-1] < y[:-2]) & (y[1:-1] < y[2:])) + 1


def _sign_changes(times, values) -> list:
    """Times where ``values`` changes sign, by linear interpolation.

    A run of exact zeros between opposite signs counts once, at its middle.
    """
    v = np.asarray(values, dtype=float)
    nz = np.flatnonzero(v != 0)
    out = []
    for i, j in zip(nz[:-1], nz[1:]):
        if v[i] * v[j] > 0:
            continue
        if j == i + 1:
            out.append(float(times[i] - v[i] * (times[j] - times[i]) / (v[j] - v[i])))
        else:
            out.append(float(0.5 * (times[i + 1] + times[j - 1])))
    return out


def extrema_report(path, series: VolatilitySeries, scenario: MarketScenario | None = None,
                   g: GFunction | None = None, window: int | None = None) -> ExtremaReport:
    """Compare price extrema and fast moves with the volatility series.

    Price extrema are taken from the (ensemble-mean) log price smoothed by a
    moving average of one window, and, with a scenario, from the sign
    changes of G(D/S) on the noise-free path.
    """
    if len(series.estimates) == 0:
        raise ValueError("series is empty")
    times, prices, logp = _as_matrix(path)
    dt = float(times[1] - times[0])
    if window is None:
        window = int(round((series.centers[1] - series.centers[0]) / dt)) if len(series.centers) > 1 else 2
    wlen = window * dt

    mean_log = logp.mean(axis=0)
    kernel = np.ones(window) / window
    smooth = np.convolve(mean_log, kernel, mode="valid")
    st = times[: smooth.size] + 0.5 * (window - 1) * dt
    ext = np.concatenate([sps.argrelextrema(smooth, np.greater, order=window)[0],
                          sps.argrelextrema(smooth, np.less, order=window)[0]])
    price_ext = sorted(float(st[i]) for i in ext)

    det_ext = []
    if scenario is not None and g is not None:
        fine = np.linspace(scenario.t0, scenario.t_end, 20 * scenario.n_steps + 1)
        det_ext = [t for t in _sign_changes(fine, np.asarray(g_eval(g, scenario.ratio(fine))))
                   if scenario.t0 < t < scenario.t_end]

    est = series.estimates
    vmin = [float(series.centers[i]) for i in _interior_minima(est)]
    vmax = float(series.centers[int(np.argmax(est))])

    # windowed moves, ensemble-averaged, on the same windows as the series
    half = 0.5 * window * dt
    starts = np.searchsorted(times, series.centers - half - 0.5 * dt)
    ends = starts + window
    ok = ends < times.size
    starts, ends = starts[ok], ends[ok]
    dlog = np.abs(logp[:, ends] - logp[:, starts]).mean(axis=0)
    drel = np.abs(prices[:, ends] / prices[:, starts] - 1.0).mean(axis=0)
    fastest = float(series.centers[ok][int(np.argmax(drel))]) if drel.size else None

    reference = det_ext if scenario is not None and g is not None else price_ext
    offsets = [min((abs(m - e) for m in vmin), default=math.inf) for e in reference]
    flags = []
    if not reference:
        flags.append("no interior extrema")
    corr_log = corr_rel = None
    if dlog.size >= 3 and np.ptp(est[ok]) > 0:
        corr_log = float(stats.spearmanr(dlog, est[ok]).statistic)
        corr_rel = float(stats.spearmanr(drel, est[ok]).statistic)
    return ExtremaReport(price_ext, det_ext, vmin, vmax, fastest, offsets,
                         None if fastest is None else abs(fastest - vmax),
                         corr_log, corr_rel, wlen, flags)


# ---------------------------------------------------------------------------
# ingestion


class IngestError(ValueError):
    pass


def ingest_prices(source, format: str = "csv_tp") -> PricePath:
    """Read a ``t,price`` CSV into a path tagged ``ingested``.

    Rows must have strictly increasing, uniformly spaced t (relative
    tolerance 1e-9) and positive prices. Errors give the file line number;
    grid errors also name the data row (1-based).
    """
    if format != "csv_tp":
        raise ValueError(f"unknown format {format!r}")
    ts, ps = [], []
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "price"]:
            raise IngestError(f"{source}:1: expected header 't,price'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"{source}:{line}: expected 2 fields, got {len(row)}")
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError:
                raise IngestError(f"{source}:{line}: cannot parse {','.join(row)!r}") from None
            if not (math.isfinite(t) and math.isfinite(p)):
                raise IngestError(f"{source}:{line}: non-finite value")
            if p <= 0:
                raise IngestError(f"{source}:{line}: non-positive price {p:g}")
            ts.append(t)
            ps.append(p)
            n = len(ts)
            if n >= 2 and ts[-1] <= ts[-2]:
                raise IngestError(f"{source}:{line}: t not strictly increasing at row {n}")
            if n >= 3:
                d0 = ts[1] - ts[0]
                if abs((ts[-1] - ts[-2]) - d0) > 1e-9 * max(abs(d0), abs(ts[-1])):
                    raise IngestError(
                        f"{source}:{line}: non-uniform grid at row {n} (spacing "
                        f"{ts[-1] - ts[-2]:g}, expected {d0:g}); resample to a uniform grid first"
                    )
    if len(ts) < 2:
        raise IngestError(f"{source}: need at least two rows")
    return PricePath.from_prices(ts, ps, Scheme.INGESTED)
