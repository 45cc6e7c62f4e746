"""Monte Carlo draws of the relative price change X3.

Demand and supply factors are (dt + (sigma/2) Y1 sqrt(dt)) and
(dt + (sigma/2) Y2 sqrt(dt)); X3 = G((D/S) * demand / supply) * dt.
The baseline has Y2 = -Y1; the correlated variant builds
Y2 = rho Y1 + sqrt(1 - rho^2) Z. Draws with a non-positive factor are
rejected and counted, never clamped.

Randomness is split into fixed-size chunks, chunk i drawing from
``SeedSequence(seed, spawn_key=(i,))``, so the values do not depend on the
number of worker threads.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .density import NoiseParams, exact_tail_probability, f3_density
from .gfunc import GFunction, g_eval, g_inverse

__all__ = [
    "DistanceReport",
    "ExcessiveRejectionError",
    "Reference",
    "SampleBatch",
    "TailRow",
    "exact_cdf",
    "ks_distance",
    "normal_draws",
    "reference_cdf",
    "sample_x3",
    "sample_x3_correlated",
    "tabulated_cdf",
    "tail_exceedance",
]

CHUNK = 1 << 16
MAX_REJECT_FRACTION = 0.5
_TWO53 = float(2**53)


class ExcessiveRejectionError(ValueError):
    """More than half the draws had a non-positive demand or supply factor."""


def _uniforms(seed: int, chunk: int, size: int, key: tuple = ()) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(*key, chunk))
    rng = np.random.Generator(np.random.PCG64(ss))
    return (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / _TWO53


def normal_draws(seed: int, n: int, columns: int = 1, threads: int = 1, key: tuple = ()) -> np.ndarray:
    """Standard normals by inverse CDF, shape (n, columns), chunked by row.

    Row blocks of ``CHUNK`` rows use their own substream, drawn row-major,
    so the result is identical for every ``threads``. ``key`` prefixes the
    spawn key, giving independent streams (one per path, say) under one seed.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    starts = list(range(0, n, CHUNK))

    def block(i):
        rows = min(CHUNK, n - starts[i])
        return special.ndtri(_uniforms(seed, i, rows * columns, key)).reshape(rows, columns)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(block, range(len(starts))))
    else:
        parts = [block(i) for i in range(len(starts))]
    return np.concatenate(parts) if parts else np.empty((0, columns))


@dataclass(frozen=True)
class SampleBatch:
    values: np.ndarray
    n_requested: int
    n_rejected: int
    seed: int
    params: NoiseParams
    g: GFunction
    rho: float | str = "anti"

    def __post_init__(self):
        if len(self.values) != self.n_requested - self.n_rejected:
            raise ValueError("values length must equal n_requested - n_rejected")

    @property
    def reject_fraction(self) -> float:
        return self.n_rejected / self.n_requested if self.n_requested else 0.0

    def metadata(self) -> dict:
        return {
            "n_requested": self.n_requested,
            "n_rejected": self.n_rejected,
            "seed": self.seed,
            "rho": self.rho,
            "params": self.params.describe(),
            "g": self.g.describe(),
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("value\n")
            np.savetxt(fh, self.values, fmt="%.17g")
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path

    def histogram(self, bins=200, range=None):
        counts, edges = np.histogram(self.values, bins=bins, range=range)
        return edges, counts

    def histogram_to_csv(self, path, bins=200, range=None) -> Path:
        edges, counts = self.histogram(bins, range)
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("bin_left,bin_right,count\n")
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo:.17g},{hi:.17g},{int(c)}\n")
        return path


def _form(g, params, y1, y2):
    half = 0.5 * params.sigma * math.sqrt(params.dt)
    num = params.dt + half * y1
    den = params.dt + half * y2
    ok = (num > 0) & (den > 0)
    ratio = params.d_over_s * num[ok] / den[ok]
    return np.asarray(g_eval(g, ratio)) * params.dt, int(ok.size - ok.sum())


def _batch(g, params, n, seed, rho, values, rejected) -> SampleBatch:
    if n and rejected / n > MAX_REJECT_FRACTION:
        raise ExcessiveRejectionError(
            f"{rejected} of {n} draws rejected; sigma*sqrt(dt) = "
            f"{params.sigma * math.sqrt(params.dt):g} is outside the model's range"
        )
    return SampleBatch(values, n, rejected, seed, params, g, rho)


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    return int(n)


def sample_x3(g: GFunction, params: NoiseParams, n: int, seed: int, threads: int = 1) -> SampleBatch:
    """Draw X3 with perfectly anti-correlated demand and supply noise."""
    n = _check_n(n)
    y = normal_draws(seed, n, 1, threads)[:, 0]
    values, rejected = _form(g, params, y, -y)
    return _batch(g, params, n, seed, "anti", values, rejected)


def sample_x3_correlated(g: GFunction, params: NoiseParams, rho: float, n: int, seed: int,
                         threads: int = 1) -> SampleBatch:
    """Draw X3 with demand and supply shocks of correlation ``rho`` in (-1, 1]."""
    if not -1.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (-1, 1], got {rho!r}")
    n = _check_n(n)
    z = normal_draws(seed, n, 2, threads)
    y1 = z[:, 0]
    y2 = rho * y1 + math.sqrt(max(0.0, 1.0 - rho * rho)) * z[:, 1]
    values, rejected = _form(g, params, y1, y2)
    return _batch(g, params, n, seed, float(rho), values, rejected)


# ---------------------------------------------------------------------------
# reference CDFs


class Reference(str, enum.Enum):
    F3_EXACT = "f3_exact"
    F3_NORMAL = "f3_normal"


def exact_cdf(g: GFunction, params: NoiseParams, y):
    """CDF of X3 given acceptance, pulled back to the normal variable.

    X3 <= y iff Y <= (x/r - 1) / (a (x/r + 1)) with x = G^-1(y/dt), and the
    accepted Y range is (-1/a, 1/a).
    """
    a, r = params.a, params.d_over_s
    x = np.asarray(g_inverse(g, np.asarray(y, dtype=float) / params.dt)) / r
    ystar = (x - 1.0) / (a * (x + 1.0))
    lo = special.ndtr(-1.0 / a)
    return (special.ndtr(ystar) - lo) / (1.0 - 2.0 * lo)


def tabulated_cdf(g: GFunction, params: NoiseParams, n: int = 10_000):
    """Tabulate the exact CDF by cumulative trapezoid over ``n`` nodes.

    Nodes follow y = y0 + w sinh(u) with u uniform, clustering where the
    mass is; the tails outside the node range are added by quadrature, the
    table is normalised over the accepted mass and forced monotone.
    Returns (nodes, cdf).
    """
    y0 = params.mode(g)
    w = params.normal_std(g)
    if not w > 0:
        raise ValueError("tabulation needs G'(D/S) > 0; use exact_cdf")
    u = np.linspace(-np.arcsinh(40.0), np.arcsinh(40.0), n)
    y = y0 + w * np.sinh(u)
    f = np.asarray(f3_density(g, params, y))
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(y))])
    lower = max(0.0, 1.0 - 2 * special.ndtr(-1.0 / params.a) - exact_tail_probability(g, params, y[0]))
    upper = exact_tail_probability(g, params, y[-1])
    cdf = lower + inner
    cdf /= cdf[-1] + upper
    return y, np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))


def reference_cdf(reference, g: GFunction, params: NoiseParams, method: str = "tabulated"):
    """Callable CDF for ``reference``.

    For the exact density ``method`` picks the trapezoid table (default)
    or the closed pull-back form; the table falls back to the closed form
    when G' vanishes somewhere in the bulk (odd powers above 1).
    """
    reference = Reference(reference)
    if reference is Reference.F3_NORMAL:
        mean, std = params.mode(g), params.normal_std(g)
        if not std > 0:
            raise ValueError("Gaussian approximation is degenerate: G'(D/S) = 0")
        return lambda y: special.ndtr((np.asarray(y, dtype=float) - mean) / std)
    if method == "closed" or g.critical_points():
        return lambda y: exact_cdf(g, params, y)
    if method != "tabulated":
        raise ValueError(f"unknown method {method!r}")
    nodes, table = tabulated_cdf(g, params)

    def cdf(y):
        ya = np.asarray(y, dtype=float)
        out = np.interp(ya, nodes, table)
        # beyond the table, fall back to the closed form
        far = (ya < nodes[0]) | (ya > nodes[-1])
        if np.any(far):
            out[far] = exact_cdf(g, params, ya[far])
        return out
    return cdf


@dataclass(frozen=True)
class DistanceReport:
    ks_statistic: float
    n: int
    reference: Reference

    def __post_init__(self):
        if not 0.0 <= self.ks_statistic <= 1.0:
            raise ValueError("ks_statistic must lie in [0, 1]")


def ks_distance(batch: SampleBatch, reference="f3_exact", g: GFunction | None = None,
                method: str = "tabulated") -> DistanceReport:
    """Kolmogorov-Smirnov distance between the batch and a reference CDF."""
    if len(batch.values) == 0:
        raise ValueError("batch is empty")
    g = batch.g if g is None else g
    reference = Reference(reference)
    cdf = reference_cdf(reference, g, batch.params, method)
    x = np.sort(batch.values)
    n = x.size
    c = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - c)), float(np.max(c - (i - 1) / n)))
    return DistanceReport(min(1.0, max(0.0, d)), n, reference)


class TailRow(NamedTuple):
    threshold: float
    empirical: float
    gaussian: float


def tail_exceedance(batch: SampleBatch, thresholds) -> list[TailRow]:
    """Empirical P(X3 >= y) next to the Gaussian-approximation tail, per threshold."""
    t = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted")
    x = np.sort(batch.values)
    n = x.size
    mean, std = batch.params.mode(batch.g), batch.params.normal_std(batch.g)
    counts = n - np.searchsorted(x, t, side="left")
    gauss = stats.norm.sf(t, loc=mean, scale=std)
    return [TailRow(float(a), float(c) / n, float(b)) for a, c, b in zip(t, counts, gauss)]
