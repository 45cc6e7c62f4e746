"""Laplace approximation and the small-noise comparison of exact and Gaussian densities.

Two scalings of the noise are compared:

* ``fixed_dt``: dt stays put and sigma shrinks; the error
  |E_f3[R] - E_f3N[R]| should decay like sigma**2.
* ``alpha_scaling``: R is read on w = (y - y0) / dt and dt moves with
  sigma; the error should decay like sigma**2 / dt.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .density import NoiseParams, f3_exponent, f3_log_density, f3n_density, integrate_f3
from .gfunc import GFunction, g_eval, g_prime
from .quadrature import integrate

__all__ = [
    "CurvatureEstimate",
    "CurvatureReport",
    "CurvatureSignError",
    "ConvergenceReport",
    "LaplaceProblem",
    "RFunction",
    "Scaling",
    "UnboundedWeightError",
    "convergence_experiment",
    "expectation_f3",
    "expectation_f3n",
    "laplace_approx",
    "r_function",
    "second_derivative",
    "verify_h1_curvature",
]

EXPECTATION_ATOL = 1e-9
# errors below this are treated as exact agreement when fitting an order
ERROR_FLOOR = 1e-12


class CurvatureSignError(ValueError):
    """h''(0) is not negative, so the Laplace approximation does not apply."""


class UnboundedWeightError(ValueError):
    """The weight R is not bounded on the probed range."""


# ---------------------------------------------------------------------------
# finite-difference curvature


@dataclass(frozen=True)
class CurvatureEstimate:
    """Richardson table for a second derivative.

    ``sequence`` holds the extrapolated value for each successive halving of
    the step; ``converged`` is False when the last two disagree by more than
    ``rtol``.
    """

    value: float
    steps: tuple
    sequence: tuple
    converged: bool


def _five_point(f, x0: float, h: float) -> float:
    fs = np.asarray(f(np.array([x0 - 2 * h, x0 - h, x0, x0 + h, x0 + 2 * h])), dtype=float)
    return float((-fs[0] + 16 * fs[1] - 30 * fs[2] + 16 * fs[3] - fs[4]) / (12.0 * h * h))


def second_derivative(f, x0: float = 0.0, step: float | None = None, levels: int = 2,
                      rtol: float = 1e-6) -> CurvatureEstimate:
    """Second derivative of ``f`` at ``x0`` by a 5-point stencil and Richardson steps.

    Without ``step`` a pilot 3-point estimate c sets it to 1e-4 / sqrt(|c|),
    i.e. 1e-4 of the curvature length. Each level halves the step and
    eliminates the h**4 term, ``(16 D(h/2) - D(h)) / 15``.
    """
    if levels < 2:
        raise ValueError("levels must be at least 2")
    if step is None:
        p = 1e-4
        fs = np.asarray(f(np.array([x0 - p, x0, x0 + p])), dtype=float)
        c = (fs[0] - 2 * fs[1] + fs[2]) / (p * p)
        step = 1e-4 / math.sqrt(abs(c)) if c != 0 and math.isfinite(c) else 1e-4
    if not step > 0:
        raise ValueError("step must be positive")
    steps = [step / 2**k for k in range(levels)]
    raw = [_five_point(f, x0, h) for h in steps]
    extrap = [raw[0]] + [(16 * raw[k] - raw[k - 1]) / 15.0 for k in range(1, levels)]
    last, prev = extrap[-1], extrap[-2]
    converged = abs(last - prev) <= rtol * max(abs(last), 1e-300)
    return CurvatureEstimate(last, tuple(steps), tuple(extrap), bool(converged))


# ---------------------------------------------------------------------------
# Laplace approximation


@dataclass(frozen=True)
class LaplaceProblem:
    """The integral of u(z) exp(a h(z)) dz, with h peaked at z = 0."""

    u: Callable
    h: Callable
    a: float

    def __post_init__(self):
        if not (callable(self.u) and callable(self.h)):
            raise TypeError("u and h must be callable")
        if not (math.isfinite(self.a) and self.a >= 10):
            raise ValueError(f"a must be at least 10, got {self.a!r}")

    def curvature(self) -> CurvatureEstimate:
        return second_derivative(self.h, 0.0)


def laplace_approx(p: LaplaceProblem) -> float:
    """Leading Laplace term u(0) sqrt(-2 pi / (a h''(0))) exp(a h(0)).

    Raises
    ------
    CurvatureSignError
        If the estimated h''(0) is not negative.
    """
    c = p.curvature().value
    if not c < 0:
        raise CurvatureSignError(f"h''(0) = {c:.3e} is not negative")
    u0 = float(np.asarray(p.u(np.array([0.0])))[0])
    h0 = float(np.asarray(p.h(np.array([0.0])))[0])
    return u0 * math.sqrt(-2.0 * math.pi / (p.a * c)) * math.exp(p.a * h0)


# ---------------------------------------------------------------------------
# weights R


@dataclass(frozen=True)
class RFunction:
    """A named bounded weight, with ``bound`` = sup |R| and ``kinks`` where R' jumps."""

    name: str
    fn: Callable
    bound: float
    kinks: tuple = ()

    def __call__(self, y):
        return self.fn(np.asarray(y, dtype=float))


_R_FAMILY = {
    "one": RFunction("one", np.ones_like, 1.0),
    "tanh": RFunction("tanh", np.tanh, 1.0),
    "cauchy": RFunction("cauchy", lambda y: 1.0 / (1.0 + y * y), 1.0),
    "clipped_linear": RFunction("clipped_linear", lambda y: np.clip(y, -1.0, 1.0), 1.0, (-1.0, 1.0)),
    "sigmoid": RFunction("sigmoid", lambda y: 0.5 * (1.0 + np.tanh(0.5 * y)), 1.0),
}


def r_function(name: str) -> RFunction:
    try:
        return _R_FAMILY[name]
    except KeyError:
        raise ValueError(f"unknown R {name!r}; choose from {sorted(_R_FAMILY)}") from None


def _check_bounded(R, centre: float, spread: float, limit: float = 1e6):
    """Reject weights that grow without bound: probe out to 1e12 spreads."""
    if isinstance(R, RFunction):
        return
    k = np.geomspace(1.0, 1e12, 25)
    y = np.concatenate([centre - spread * k, centre + spread * k])
    with np.errstate(all="ignore"):
        vals = np.abs(np.asarray(R(y), dtype=float))
    if not np.all(np.isfinite(vals)) or vals.max() > limit * max(1.0, vals[[0, 25]].max()):
        raise UnboundedWeightError("R must be bounded; it grows along the probed range")


def _vec(R):
    def f(y):
        out = np.asarray(R(y), dtype=float)
        return np.broadcast_to(out, np.shape(y)) if out.ndim == 0 else out
    return f


def expectation_f3(R, g: GFunction, params: NoiseParams, atol: float = EXPECTATION_ATOL) -> float:
    """E[R(X3)] under the exact density, by DE quadrature."""
    return integrate_f3(_vec(R), g, params, atol=atol, points=getattr(R, "kinks", ()))


def expectation_f3n(R, g: GFunction, params: NoiseParams, atol: float = EXPECTATION_ATOL) -> float:
    """E[R(X3)] under the Gaussian approximation."""
    mean, std = params.mode(g), params.normal_std(g)
    if not std > 0:
        raise ValueError("Gaussian approximation is degenerate: G'(D/S) = 0")
    Rv = _vec(R)
    return integrate(lambda y: Rv(y) * f3n_density(g, params, y), center=mean, scale=std,
                     atol=atol, points=getattr(R, "kinks", ())).value


# ---------------------------------------------------------------------------
# convergence experiment


class Scaling(str, enum.Enum):
    FIXED_DT = "fixed_dt"
    ALPHA = "alpha_scaling"


@dataclass
class ConvergenceReport:
    """Per-sigma errors |E_f3[R] - E_f3N[R]| and the fitted log-log order.

    ``fitted_order`` is the slope against sigma; ``order_vs_ratio`` the slope
    against sigma**2 / dt. Both are None (``flagged`` set) when the errors
    sit at the floor, e.g. constant R or an odd R against a symmetric density.
    """

    sigmas: list
    dts: list
    errors: list
    scaling: Scaling
    r_name: str = ""
    fitted_order: float | None = None
    order_vs_ratio: float | None = None
    flagged: str = ""
    exact: list = field(default_factory=list)
    gaussian: list = field(default_factory=list)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("sigmas must be strictly decreasing")
        if not len(self.errors) == len(self.sigmas) == len(self.dts):
            raise ValueError("sigmas, dts and errors must have the same length")

    @property
    def ratios(self) -> np.ndarray:
        return np.asarray(self.sigmas) ** 2 / np.asarray(self.dts)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("sigma,dt,error\n")
            for s, d, e in zip(self.sigmas, self.dts, self.errors):
                fh.write(f"{s:.17g},{d:.17g},{e:.17g}\n")
        side = {
            "scaling": self.scaling.value,
            "r": self.r_name,
            "fitted_order": self.fitted_order,
            "order_vs_sigma2_over_dt": self.order_vs_ratio,
            "flagged": self.flagged,
        }
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
        return path


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def convergence_experiment(R, g: GFunction, base: NoiseParams, sigmas, scaling="fixed_dt",
                           threads: int = 1) -> ConvergenceReport:
    """Measure |E_f3[R] - E_f3N[R]| over decreasing sigma.

    Under ``alpha_scaling`` dt is co-varied as dt_i = base.dt * sigma_i / sigma_0,
    so sigma**2 / dt still tends to zero, and R is applied to
    w = (y - y0) / dt through R(G(D/S) + w). At dt = 1 both scalings coincide.
    """
    scaling = Scaling(scaling)
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 4:
        raise ValueError("need at least 4 sigma values")
    if max(sigmas) / min(sigmas) < 10 * (1 - 1e-12):
        raise ValueError("sigma values must span at least one decade")
    Rv = _vec(R)
    _check_bounded(R, base.mode(g), 1.0)
    s0 = sigmas[0]

    def one(s):
        if scaling is Scaling.FIXED_DT:
            p = base.with_(sigma=s)
            weight = R
        else:
            p = base.with_(sigma=s, dt=base.dt * s / s0)
            y0, dt, shift = p.mode(g), p.dt, g_eval(g, p.d_over_s)

            def on_w(y, y0=y0, dt=dt, shift=shift):
                return Rv(shift + (np.asarray(y) - y0) / dt)
            # kinks move with the map y = y0 + (w - G(D/S)) dt
            weight = RFunction(getattr(R, "name", "R"), on_w, getattr(R, "bound", math.inf),
                               tuple(y0 + (k - shift) * dt for k in getattr(R, "kinks", ())))
        return p.dt, expectation_f3(weight, g, p), expectation_f3n(weight, g, p)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, sigmas))
    else:
        rows = [one(s) for s in sigmas]
    dts = [r[0] for r in rows]
    errors = [abs(r[1] - r[2]) for r in rows]
    rep = ConvergenceReport(sigmas, dts, errors, scaling,
                            r_name=getattr(R, "name", getattr(R, "__name__", "")),
                            exact=[r[1] for r in rows], gaussian=[r[2] for r in rows])
    e = np.asarray(errors)
    if np.all(e <= ERROR_FLOOR):
        rep.flagged = "errors at floor: R is matched exactly, order undefined"
    elif np.any(e <= ERROR_FLOOR):
        rep.flagged = "some errors at floor; order fitted on the rest"
        keep = e > ERROR_FLOOR
        if keep.sum() >= 2:
            rep.fitted_order = _slope(np.asarray(sigmas)[keep], e[keep])
            rep.order_vs_ratio = _slope(rep.ratios[keep], e[keep])
    else:
        rep.fitted_order = _slope(sigmas, e)
        rep.order_vs_ratio = _slope(rep.ratios, e)
    return rep


# ---------------------------------------------------------------------------
# curvature of the exponent at the mode


@dataclass(frozen=True)
class CurvatureReport:
    measured: float
    target: float
    rel_error: float
    converged: bool
    quantity: str
    sequence: tuple

    def lines(self) -> list[str]:
        flag = "" if self.converged else " (Richardson sequence not converged)"
        return [f"sigma^2 dt d2/dy2 {self.quantity} at y0 = {self.measured:.10g}",
                f"target -1/((D/S) G'(D/S))^2 = {self.target:.10g}",
                f"relative error {self.rel_error:.3e}{flag}"]


def verify_h1_curvature(g: GFunction, params: NoiseParams, step: float | None = None,
                        quantity: str = "exponent", levels: int = 4,
                        rtol: float = 1e-6) -> CurvatureReport:
    """Compare sigma^2 dt E''(y0) with -1/((D/S) G'(D/S))^2.

    ``quantity`` is ``"exponent"`` (E alone) or ``"log_density"``
    (E - log B). The default step is 0.05 of the Gaussian std, halved
    ``levels - 1`` times in the Richardson table.
    """
    funcs = {"exponent": f3_exponent, "log_density": f3_log_density}
    if quantity not in funcs:
        raise ValueError(f"quantity must be one of {sorted(funcs)}")
    r = params.d_over_s
    gp = g_prime(g, r)
    target = -1.0 / (r * gp) ** 2
    y0 = params.mode(g)
    if step is None:
        width = params.normal_std(g)
        step = 0.05 * (width if width > 0 else params.sigma * math.sqrt(params.dt))
    fn = funcs[quantity]
    est = second_derivative(lambda y: fn(g, params, y), y0, step=step, levels=levels, rtol=rtol)
    measured = est.value * params.sigma**2 * params.dt
    rel = abs(measured - target) / abs(target) if target != 0 and math.isfinite(target) else math.inf
    return CurvatureReport(measured, target, rel, est.converged, quantity, est.sequence)
