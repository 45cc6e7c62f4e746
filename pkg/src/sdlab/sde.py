"""Price paths driven by demand and supply signals.

With x = D(t)/S(t), mu = G(x) and b = sigma G'(x) x, the schemes step

    euler_p     P <- P (1 + mu dt + b dW)
    euler_logp  log P <- log P + (mu - b^2/2) dt + b dW
    sym_p       as euler_p, with mu = (G(x) - G(1/x)) / 2 and
                b = (sigma/2) (G'(x) x + G'(1/x) / x)

D and S are read at the left end of each step. Brownian increments come
from (seed, stream) only, so all schemes see the same dW for the same seed.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gfunc import GFunction, g_eval, g_prime
from .sampler import normal_draws

__all__ = [
    "MarketScenario",
    "PathEnsemble",
    "PositivityError",
    "PricePath",
    "Scheme",
    "Signal",
    "SignalKind",
    "SupplyDemandCurves",
    "Variant",
    "brownian_increments",
    "deterministic_log_price",
    "discrete_tatonnement",
    "intersect_curves",
    "scenario_signal",
    "scheme_coefficients",
    "simulate_ensemble",
    "simulate_path",
]

POSITIVITY_SCAN = 1000


class PositivityError(ValueError):
    """A price or signal that must be positive is not."""


# ---------------------------------------------------------------------------
# signals


class SignalKind(str, enum.Enum):
    CONSTANT = "constant"
    SINUSOID = "sinusoid"
    PIECEWISE = "piecewise"
    CSV = "csv"


@dataclass(frozen=True)
class Signal:
    """A positive function of time.

    constant   value
    sinusoid   mean + amplitude sin(2 pi t / period + phase)
    piecewise  value[i] on [times[i], times[i+1]); times[0] starts the first piece
    csv        linear interpolation through (times, values), flat beyond the ends
    """

    kind: SignalKind
    value: float = 1.0
    mean: float = 1.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        if self.kind is SignalKind.SINUSOID and not self.period > 0:
            raise ValueError("sinusoid period must be positive")
        if self.kind in (SignalKind.PIECEWISE, SignalKind.CSV):
            t = np.asarray(self.times, dtype=float)
            if t.size == 0 or t.size != len(self.values):
                raise ValueError(f"{self.kind.value} signal needs matching, nonempty times and values")
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"{self.kind.value} signal times must be strictly increasing")

    def __call__(self, t):
        ta = np.asarray(t, dtype=float)
        if self.kind is SignalKind.CONSTANT:
            out = np.full_like(ta, self.value)
        elif self.kind is SignalKind.SINUSOID:
            out = self.mean + self.amplitude * np.sin(2 * math.pi * ta / self.period + self.phase)
        elif self.kind is SignalKind.PIECEWISE:
            idx = np.clip(np.searchsorted(self.times, ta, side="right") - 1, 0, len(self.values) - 1)
            out = np.asarray(self.values, dtype=float)[idx]
        else:
            out = np.interp(ta, self.times, self.values)
        return float(out) if np.ndim(t) == 0 else out

    def check_positive(self, t0: float, t_end: float, name: str = "signal"):
        t = np.linspace(t0, t_end, POSITIVITY_SCAN)
        v = self(t)
        bad = ~(v > 0)
        if np.any(bad):
            raise PositivityError(f"{name} is not positive at t = {t[bad][0]:g} ({v[bad][0]:g})")

    def describe(self) -> dict:
        base = {"kind": self.kind.value}
        if self.kind is SignalKind.CONSTANT:
            base["value"] = self.value
        elif self.kind is SignalKind.SINUSOID:
            base.update(mean=self.mean, amplitude=self.amplitude, period=self.period, phase=self.phase)
        else:
            base.update(times=list(self.times), values=list(self.values))
        return base


def _read_table(path) -> tuple:
    ts, vs = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["t", "value"]:
            raise ValueError(f"{path}: expected header 't,value'")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, v = (float(c) for c in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {row!r}") from None
            ts.append(t)
            vs.append(v)
    return tuple(ts), tuple(vs)


def scenario_signal(kind, **params) -> Signal:
    """Build a signal: ``constant(value)``, ``sinusoid(mean, amplitude, period, phase)``,
    ``piecewise(times, values)`` or ``csv(path)`` / ``csv(times, values)``."""
    kind = SignalKind(kind)
    if kind is SignalKind.CSV and "path" in params:
        times, values = _read_table(params.pop("path"))
        params.update(times=times, values=values)
    for key in ("times", "values"):
        if key in params:
            params[key] = tuple(float(v) for v in params[key])
    return Signal(kind, **params)


# ---------------------------------------------------------------------------
# scenario and paths


@dataclass(frozen=True)
class MarketScenario:
    demand: Signal
    supply: Signal
    sigma: float
    t0: float = 0.0
    t_end: float = 1.0
    dt_step: float = 1e-3
    p0: float = 1.0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be nonnegative and finite")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if not self.dt_step > 0 or self.dt_step > (self.t_end - self.t0) / 10 * (1 + 1e-12):
            raise ValueError("dt_step must be positive and at most (t_end - t0) / 10")
        if not self.p0 > 0:
            raise ValueError("p0 must be positive")
        steps = (self.t_end - self.t0) / self.dt_step
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("(t_end - t0) / dt_step must be a whole number of steps")
        self.demand.check_positive(self.t0, self.t_end, "demand")
        self.supply.check_positive(self.t0, self.t_end, "supply")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.dt_step))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_step * np.arange(self.n_steps + 1)

    def ratio(self, t):
        return np.asarray(self.demand(t)) / np.asarray(self.supply(t))

    def with_(self, **changes) -> "MarketScenario":
        fields_ = dict(demand=self.demand, supply=self.supply, sigma=self.sigma, t0=self.t0,
                       t_end=self.t_end, dt_step=self.dt_step, p0=self.p0)
        fields_.update(changes)
        return MarketScenario(**fields_)

    def describe(self) -> dict:
        return {"demand": self.demand.describe(), "supply": self.supply.describe(),
                "sigma": self.sigma, "t0": self.t0, "t_end": self.t_end,
                "dt_step": self.dt_step, "p0": self.p0}


class Scheme(str, enum.Enum):
    EULER_P = "euler_p"
    EULER_LOGP = "euler_logp"
    SYM_P = "sym_p"
    DISCRETE = "discrete_tatonnement"
    INGESTED = "ingested"


@dataclass(frozen=True)
class PricePath:
    times: np.ndarray
    prices: np.ndarray
    log_prices: np.ndarray
    scheme: Scheme
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise ValueError("times and prices must be 1-D of equal length")
        if np.any(~(p > 0)):
            raise PositivityError("prices must be positive")
        if t.size > 2:
            d = np.diff(t)
            if np.max(np.abs(d - d[0])) > 1e-9 * max(abs(d[0]), abs(t).max()):
                raise ValueError("times must be uniformly spaced")
        if not np.allclose(np.exp(self.log_prices), p, rtol=1e-12, atol=0):
            raise ValueError("prices and log_prices disagree")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @classmethod
    def from_prices(cls, times, prices, scheme, seed=None) -> "PricePath":
        p = np.asarray(prices, dtype=float)
        if np.any(~(p > 0)):
            raise PositivityError("prices must be positive")
        return cls(np.asarray(times, dtype=float), p, np.log(p), scheme, seed)

    @property
    def dt_step(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self):
        return len(self.prices)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("t,price\n")
            for t, p in zip(self.times, self.prices):
                fh.write(f"{t:.17g},{p:.17g}\n")
        return path


@dataclass(frozen=True)
class PathEnsemble:
    """Paths on a shared grid; ``prices`` has one row per path."""

    times: np.ndarray
    prices: np.ndarray
    scheme: Scheme
    seed: int
    log_prices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.log_prices is None:
            object.__setattr__(self, "log_prices", np.log(self.prices))

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def dt_step(self) -> float:
        return float(self.times[1] - self.times[0])

    def path(self, i: int) -> PricePath:
        return PricePath(self.times, self.prices[i], self.log_prices[i], self.scheme, self.seed)

    def mean_log_price(self) -> np.ndarray:
        return self.log_prices.mean(axis=0)


def brownian_increments(scenario: MarketScenario, seed: int, stream: tuple = ()) -> np.ndarray:
    """dW for every step; depends only on (seed, stream, n_steps, dt_step)."""
    z = normal_draws(seed, scenario.n_steps, 1, key=stream)[:, 0]
    return z * math.sqrt(scenario.dt_step)


def scheme_coefficients(g: GFunction, x, sigma: float, scheme="euler_p"):
    """Relative drift mu and diffusion b at ratio x for ``euler_p`` or ``sym_p``."""
    scheme = Scheme(scheme)
    xa = np.asarray(x, dtype=float)
    if scheme is Scheme.SYM_P:
        inv = 1.0 / xa
        mu = 0.5 * (np.asarray(g_eval(g, xa)) - np.asarray(g_eval(g, inv)))
        b = 0.5 * sigma * (np.asarray(g_prime(g, xa)) * xa + np.asarray(g_prime(g, inv)) * inv)
    else:
        mu = np.asarray(g_eval(g, xa))
        b = sigma * np.asarray(g_prime(g, xa)) * xa
    return mu, b


def simulate_path(scenario: MarketScenario, g: GFunction, scheme="euler_logp", seed: int = 0,
                  stream: tuple = (), increments=None) -> PricePath:
    """Euler-Maruyama path on the scenario grid.

    Raises
    ------
    PositivityError
        If a euler_p or sym_p step takes the price to zero or below; the
        message names the step.
    """
    scheme = Scheme(scheme)
    if scheme not in (Scheme.EULER_P, Scheme.EULER_LOGP, Scheme.SYM_P):
        raise ValueError(f"simulate_path does not run scheme {scheme.value!r}")
    t = scenario.times
    dt = scenario.dt_step
    dw = brownian_increments(scenario, seed, stream) if increments is None else np.asarray(increments)
    if dw.shape != (scenario.n_steps,):
        raise ValueError("increments must have one entry per step")
    x = scenario.ratio(t[:-1])
    if scheme is Scheme.EULER_LOGP:
        mu, b = scheme_coefficients(g, x, scenario.sigma, "euler_p")
        logp = math.log(scenario.p0) + np.concatenate([[0.0], np.cumsum((mu - 0.5 * b * b) * dt + b * dw)])
        return PricePath(t, np.exp(logp), logp, scheme, seed)
    mu, b = scheme_coefficients(g, x, scenario.sigma, scheme)
    factor = 1.0 + mu * dt + b * dw
    bad = np.flatnonzero(~(factor > 0))
    if bad.size:
        i = int(bad[0])
        raise PositivityError(
            f"{scheme.value}: price not positive after step {i + 1} (t = {t[i + 1]:g}); reduce dt_step"
        )
    logp = math.log(scenario.p0) + np.concatenate([[0.0], np.cumsum(np.log(factor))])
    prices = scenario.p0 * np.concatenate([[1.0], np.cumprod(factor)])
    return PricePath(t, prices, np.log(prices), scheme, seed)


def simulate_ensemble(scenario: MarketScenario, g: GFunction, n_paths: int, scheme="euler_logp",
                      seed: int = 0, threads: int = 1) -> PathEnsemble:
    """``n_paths`` independent paths; path i draws from stream (i,) of ``seed``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")

    def one(i):
        return simulate_path(scenario, g, scheme, seed, stream=(i,)).log_prices

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, range(n_paths)))
    else:
        rows = [one(i) for i in range(n_paths)]
    logp = np.vstack(rows)
    return PathEnsemble(scenario.times, np.exp(logp), Scheme(scheme), seed, logp)


def deterministic_log_price(scenario: MarketScenario, g: GFunction, times=None) -> np.ndarray:
    """log P of the noise-free path, log p0 + integral of G(D/S), by trapezoid on a fine grid."""
    times = scenario.times if times is None else np.asarray(times, dtype=float)
    fine = np.linspace(scenario.t0, scenario.t_end, 20 * scenario.n_steps + 1)
    rate = np.asarray(g_eval(g, scenario.ratio(fine)))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(fine))])
    return math.log(scenario.p0) + np.interp(times, fine, cum)


# ---------------------------------------------------------------------------
# discrete excess-demand recursions


class Variant(str, enum.Enum):
    RAW = "raw"
    NORMALIZED = "normalized"
    NONLINEAR = "nonlinear"


def discrete_tatonnement(p0: float, d, s, tau0: float, variant="raw", g: GFunction | None = None) -> np.ndarray:
    """Iterate the excess-demand price recursion; returns p_0 .. p_T.

    raw         p_t = p_{t-1} + (d - s) / tau0
    normalized  p_t = p_{t-1} (1 + (d - s) / (s tau0))
    nonlinear   p_t = p_{t-1} (1 + g(d / s) / tau0)

    A non-positive price in the raw variant is reported with a
    ``RuntimeWarning`` and the sequence is returned unchanged.
    """
    variant = Variant(variant)
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    if d.shape != s.shape or d.ndim != 1:
        raise ValueError("d and s must be 1-D of equal length")
    if np.any(~(s > 0)):
        raise ValueError("supply must be positive")
    if not (p0 > 0 and tau0 > 0):
        raise ValueError("p0 and tau0 must be positive")
    if variant is Variant.RAW:
        prices = p0 + np.concatenate([[0.0], np.cumsum((d - s) / tau0)])
        bad = np.flatnonzero(prices <= 0)
        if bad.size:
            warnings.warn(f"raw recursion reaches a non-positive price at t = {bad[0]}", RuntimeWarning,
                          stacklevel=2)
        return prices
    if variant is Variant.NORMALIZED:
        rel = (d - s) / (s * tau0)
    else:
        if g is None:
            raise ValueError("the nonlinear variant needs g")
        if np.any(~(d > 0)):
            raise ValueError("nonlinear variant needs positive demand")
        rel = np.asarray(g_eval(g, d / s)) / tau0
    return p0 * np.concatenate([[1.0], np.cumprod(1.0 + rel)])


# ---------------------------------------------------------------------------
# affine supply and demand


@dataclass(frozen=True)
class SupplyDemandCurves:
    """Demand q = demand_intercept + demand_slope p (slope < 0) and
    supply q = supply_intercept + supply_slope p (slope > 0)."""

    demand_intercept: float
    demand_slope: float
    supply_intercept: float
    supply_slope: float

    def __post_init__(self):
        if not self.demand_slope < 0:
            raise ValueError("demand curve must be decreasing")
        if not self.supply_slope > 0:
            raise ValueError("supply curve must be increasing")
        if not intersect_curves(self) > 0:
            raise ValueError("curves must cross at a positive price")

    def shifted(self, demand_shift: float = 0.0, supply_shift: float = 0.0) -> "SupplyDemandCurves":
        return SupplyDemandCurves(self.demand_intercept + demand_shift, self.demand_slope,
                                  self.supply_intercept + supply_shift, self.supply_slope)


def intersect_curves(c: SupplyDemandCurves) -> float:
    """Price at which the two affine curves meet."""
    denom = c.supply_slope - c.demand_slope
    if denom == 0:
        raise ValueError("curves are parallel")
    return (c.demand_intercept - c.supply_intercept) / denom
