"""Exact densities of the relative price change and their Gaussian counterpart.

Chain of random variables, with Y standard normal and a = sigma / (2 sqrt(dt)):

    X   = (1 + a Y) / (1 - a Y)          quotient of anti-correlated normals
    X1  = (D/S) X
    X2  = G(X1)
    X3  = X2 * dt                        relative price change over dt

``fx_density``, ``fx1_density``, ``f2_density`` and ``f3_density`` are the
exact densities of X, X1, X2, X3. ``f3n_density`` is the normal with mean
G(D/S) dt and variance sigma^2 dt (G'(D/S) D/S)^2.

All density functions accept scalars or arrays.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .gfunc import Family, GFunction, g_eval, g_inverse, g_prime
from .quadrature import integrate

__all__ = [
    "DensityCurve",
    "NoiseParams",
    "TailRatio",
    "Which",
    "density",
    "exact_tail_probability",
    "f2_density",
    "f3_density",
    "f3_density_composed",
    "f3_exponent",
    "f3_log_density",
    "f3n_density",
    "integrate_f3",
    "fx1_density",
    "fx1_density_scaled",
    "fx_density",
    "normalization",
    "tabulate",
    "tail_ratio",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseParams:
    """Noise scale ``sigma``, window ``dt`` and demand/supply ratio ``d_over_s``."""

    sigma: float
    dt: float = 1.0
    d_over_s: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "dt", "d_over_s"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {getattr(self, name)!r}")
            object.__setattr__(self, name, v)
        if not math.isfinite(self.a):
            raise ValueError("sigma / (2 sqrt(dt)) is not finite")

    @property
    def a(self) -> float:
        """Noise amplitude of the quotient, sigma / (2 sqrt(dt))."""
        return self.sigma / (2.0 * math.sqrt(self.dt))

    def with_(self, **changes) -> "NoiseParams":
        return NoiseParams(**{**self.describe(), **changes})

    def describe(self) -> dict:
        return {"sigma": self.sigma, "dt": self.dt, "d_over_s": self.d_over_s}

    def mode(self, g: GFunction) -> float:
        """y0 = G(D/S) dt, the mean of the Gaussian approximation."""
        return g_eval(g, self.d_over_s) * self.dt

    def normal_std(self, g: GFunction) -> float:
        r = self.d_over_s
        return self.sigma * math.sqrt(self.dt) * g_prime(g, r) * r


class Which(str, enum.Enum):
    FX = "fX"
    FX1 = "fX1"
    F2 = "f2"
    F3 = "f3"
    F3N = "f3N"


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def fx_density(params: NoiseParams, x):
    """Density of X. Returns 0 at the removable point x = -1."""
    xa = np.asarray(x, dtype=float)
    a2 = params.sigma**2 / (4.0 * params.dt)
    a_prime = params.sigma / math.sqrt(params.dt)
    q = xa + 1.0
    out = np.zeros_like(xa)
    ok = q != 0
    den = a2 * q[ok] ** 2
    out[ok] = a_prime / _SQRT_2PI * np.exp(-0.5 * (xa[ok] - 1.0) ** 2 / den) / den
    return _out(out, x)


def fx1_density_scaled(params: NoiseParams, x):
    """Density of X1 written as f_X(x / (D/S)) / (D/S)."""
    r = params.d_over_s
    return _out(np.asarray(fx_density(params, np.asarray(x, dtype=float) / r)) / r, x)


def fx1_density(params: NoiseParams, x):
    """Density of X1 in the expanded form centred on D/S."""
    xa = np.asarray(x, dtype=float)
    r, s, dt = params.d_over_s, params.sigma, params.dt
    q = xa + r
    out = np.zeros_like(xa)
    ok = q != 0
    expo = -0.5 * (xa[ok] - r) ** 2 / (s * s / (4.0 * dt) * q[ok] ** 2)
    pref = 1.0 / (_SQRT_2PI * r * s / math.sqrt(dt))
    out[ok] = pref * np.exp(expo) / (0.25 * (1.0 / r) ** 2 * q[ok] ** 2)
    return _out(out, x)


def _slope_at(g: GFunction, x, y):
    """G'(x) where G(x) = y.

    For odd powers near the flat point x = 1 the inverse can round onto 1
    and G'(x) onto 0 although y != 0; there G' is rebuilt from y itself,
    q |y|^((q-1)/q) (1 + 1/x^2), which stays exact.
    """
    gp = np.asarray(g_prime(g, x), dtype=float)
    if g.family is Family.ODD_POWER_DIFF and g.q > 1:
        n = g.q
        ya = np.abs(np.asarray(y, dtype=float))
        with np.errstate(divide="ignore"):
            gp = np.where(ya > 0, n * ya ** ((n - 1.0) / n) * (1.0 + 1.0 / (x * x)), gp)
    return gp


def f2_density(g: GFunction, params: NoiseParams, y):
    """Density of X2 = G(X1): f_X1(G^-1(y)) / G'(G^-1(y))."""
    ya = np.asarray(y, dtype=float)
    x = np.asarray(g_inverse(g, ya))
    with np.errstate(divide="ignore"):
        return _out(np.asarray(fx1_density(params, x)) / _slope_at(g, x, ya), y)


def f3_exponent(g: GFunction, params: NoiseParams, y):
    """Exponent E(y) of f3 = exp(E) / B."""
    r, s, dt = params.d_over_s, params.sigma, params.dt
    x = np.asarray(g_inverse(g, np.asarray(y, dtype=float) / dt))
    e = -0.5 * (x - r) ** 2 / (s * s / (4.0 * dt) * (x + r) ** 2)
    return _out(e, y)


def f3_log_density(g: GFunction, params: NoiseParams, y):
    r, s, dt = params.d_over_s, params.sigma, params.dt
    y2 = np.asarray(y, dtype=float) / dt
    x = np.asarray(g_inverse(g, y2))
    e = -0.5 * (x - r) ** 2 / (s * s / (4.0 * dt) * (x + r) ** 2)
    b = _SQRT_2PI * (1.0 / r) * (s * dt / math.sqrt(dt)) * _slope_at(g, x, y2) * 0.25 * (x + r) ** 2
    with np.errstate(divide="ignore"):
        return _out(e - np.log(b), y)


def f3_density(g: GFunction, params: NoiseParams, y):
    """Exact density of the relative price change X3 = G(X1) dt.

    One inverse solve per point; the composed form
    :func:`f3_density_composed` must agree with this one.
    """
    return _out(np.exp(np.asarray(f3_log_density(g, params, y))), y)


def f3_density_composed(g: GFunction, params: NoiseParams, y):
    """f3(y) = f2(y / dt) / dt."""
    dt = params.dt
    return _out(np.asarray(f2_density(g, params, np.asarray(y, dtype=float) / dt)) / dt, y)


def f3n_density(g: GFunction, params: NoiseParams, y):
    mean = params.mode(g)
    std = params.normal_std(g)
    if not std > 0:
        raise ValueError("Gaussian approximation is degenerate: G'(D/S) = 0")
    z = (np.asarray(y, dtype=float) - mean) / std
    return _out(np.exp(-0.5 * z * z) / (_SQRT_2PI * std), y)


_DENSITIES = {
    Which.FX: lambda g, p, y: fx_density(p, y),
    Which.FX1: lambda g, p, y: fx1_density(p, y),
    Which.F2: f2_density,
    Which.F3: f3_density,
    Which.F3N: f3n_density,
}


def density(which: Which | str, g: GFunction | None, params: NoiseParams, y):
    which = Which(which)
    if which in (Which.F2, Which.F3, Which.F3N) and g is None:
        raise ValueError(f"{which.value} needs a G function")
    return _DENSITIES[which](g, params, y)


def _location(which: Which, g: GFunction | None, params: NoiseParams):
    """Centre, width and singular points of each density, for placing quadrature nodes.

    The width is half the spread of the variable between Y = -1 and Y = +1,
    which stays positive even where G' vanishes at D/S.
    """
    r, a = params.d_over_s, params.a
    if which is Which.FX:
        return 1.0, 2.0 * a, ()
    if which is Which.FX1:
        return r, 2.0 * a * r, ()
    lo, hi = r * (1 - a) / (1 + a), r * (1 + a) / (1 - a) if a < 1 else r * (1 + a)
    scale = params.dt if which is not Which.F2 else 1.0
    if which is Which.F3N:
        return params.mode(g), params.normal_std(g), ()
    width = 0.5 * scale * (g_eval(g, hi) - g_eval(g, lo))
    cusps = tuple(g_eval(g, x) * scale for x in g.critical_points())
    return g_eval(g, r) * scale, width, cusps


def _cusp_power(g, cusps) -> int:
    return int(g.q) if cusps else 1


def normalization(which: Which | str, g: GFunction | None, params: NoiseParams, atol: float = 1e-9) -> float:
    """Total mass over the real line by tanh-substitution quadrature."""
    which = Which(which)
    c, w, cusps = _location(which, g, params)
    return integrate(lambda y: density(which, g, params, y), center=c, scale=w, atol=atol,
                     cusps=cusps, cusp_power=_cusp_power(g, cusps)).value


def integrate_f3(fn, g: GFunction, params: NoiseParams, a: float = -math.inf, b: float = math.inf,
                 atol: float = 1e-9, points=()):
    """Integrate ``fn(y) * f3(y)`` over [a, b] with nodes placed around the bulk of f3.

    ``points`` are kinks of ``fn`` to split at.
    """
    c, w, cusps = _location(Which.F3, g, params)
    return integrate(lambda y: fn(y) * f3_density(g, params, y), a, b, center=c, scale=w,
                     atol=atol, points=points, cusps=cusps, cusp_power=_cusp_power(g, cusps)).value


def exact_tail_probability(g: GFunction, params: NoiseParams, y: float, atol: float = 1e-13) -> float:
    """P(X3 >= y) from the exact density."""
    c = params.mode(g)
    one = lambda u: np.ones_like(u)  # noqa: E731
    if y < c:
        below = integrate_f3(one, g, params, -math.inf, y, atol=atol)
        return integrate_f3(one, g, params, atol=atol) - below
    return integrate_f3(one, g, params, y, math.inf, atol=atol)


class TailRatio(NamedTuple):
    ratio: float
    overflow: bool


def tail_ratio(g: GFunction, params: NoiseParams, y: float) -> TailRatio:
    """f3(y) / f3N(y), computed in log space.

    When the Gaussian has underflowed the ratio is not representable;
    ``overflow`` is then True and ``ratio`` is ``inf``.
    """
    log_f3 = f3_log_density(g, params, y)
    mean, std = params.mode(g), params.normal_std(g)
    z = (y - mean) / std
    log_fn = -0.5 * z * z - math.log(_SQRT_2PI * std)
    if math.exp(log_fn) == 0.0:
        return TailRatio(math.inf, True)
    diff = log_f3 - log_fn
    if diff > 709.0:
        return TailRatio(math.inf, True)
    return TailRatio(math.exp(diff), False)


@dataclass(frozen=True)
class DensityCurve:
    which: Which
    y: np.ndarray
    f: np.ndarray
    params: NoiseParams
    g: GFunction | None = None

    def __post_init__(self):
        if self.y.shape != self.f.shape or self.y.ndim != 1:
            raise ValueError("y and f must be 1-D arrays of equal length")
        if np.any(np.diff(self.y) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.f < 0):
            raise ValueError("density values must be nonnegative")

    @property
    def spacing(self) -> float:
        return float(self.y[1] - self.y[0])

    def riemann_mass(self) -> float:
        return float(self.f.sum() * self.spacing)

    def argmax(self) -> float:
        return float(self.y[np.argmax(self.f)])

    def metadata(self) -> dict:
        meta = {"which": self.which.value, **self.params.describe()}
        if self.g is not None:
            meta.update(self.g.describe())
        return meta

    def to_csv(self, path: str | Path) -> Path:
        """Write ``y,f`` rows plus a ``<name>.json`` sidecar with the parameters."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "f"])
            for yy, ff in zip(self.y, self.f):
                w.writerow([f"{yy:.17g}", f"{ff:.17g}"])
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path


def tabulate(g: GFunction | None, params: NoiseParams, which: Which | str,
             y_min: float, y_max: float, n: int) -> DensityCurve:
    """Evaluate a density on a uniform grid of ``n`` points over [y_min, y_max]."""
    which = Which(which)
    if not y_min < y_max:
        raise ValueError("y_min must be below y_max")
    if n < 2:
        raise ValueError("n must be at least 2")
    y = np.linspace(y_min, y_max, int(n))
    f = np.asarray(density(which, g, params, y), dtype=float)
    keep_g = None if which in (Which.FX, Which.FX1) else g
    return DensityCurve(which, y, f, params, keep_g)
