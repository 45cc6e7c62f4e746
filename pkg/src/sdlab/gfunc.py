"""Price-response functions G mapping the demand/supply ratio to a relative price rate.

Two closed-form families are supported:

    power_diff       G(x) = x**q - x**(-q),   q > 0
    odd_power_diff   G(x) = (x - 1/x)**q,     q = 1, 3, 5, ...

Every function here accepts scalars or numpy arrays and returns the same shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AxiomReport",
    "ConvergenceError",
    "Family",
    "GFunction",
    "check_condition_g",
    "g_eval",
    "g_inverse",
    "g_prime",
    "g_second",
]

DEFAULT_INVERSE_TOL = 1e-12
DEFAULT_MAX_ITER = 200


class ConvergenceError(RuntimeError):
    """Raised when the inverse solver exhausts its iteration cap."""


class Family(str, enum.Enum):
    POWER_DIFF = "power_diff"
    ODD_POWER_DIFF = "odd_power_diff"


@dataclass(frozen=True)
class GFunction:
    family: Family
    q: float

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        q = float(self.q)
        if not np.isfinite(q) or q <= 0:
            raise ValueError(f"q must be positive and finite, got {self.q!r}")
        if family is Family.ODD_POWER_DIFF and (q != int(q) or int(q) % 2 == 0):
            raise ValueError(f"odd_power_diff needs an odd positive integer q, got {self.q!r}")
        object.__setattr__(self, "q", q)

    @classmethod
    def power_diff(cls, q: float = 1.0) -> "GFunction":
        return cls(Family.POWER_DIFF, q)

    @classmethod
    def odd_power_diff(cls, q: int = 1) -> "GFunction":
        return cls(Family.ODD_POWER_DIFF, q)

    def __call__(self, x):
        return g_eval(self, x)

    def prime(self, x):
        return g_prime(self, x)

    def second(self, x):
        return g_second(self, x)

    def inverse(self, y, tol: float = DEFAULT_INVERSE_TOL):
        return g_inverse(self, y, tol)

    def critical_points(self) -> tuple[float, ...]:
        """Points where G' vanishes: x = 1 for odd powers q >= 3, none otherwise."""
        if self.family is Family.ODD_POWER_DIFF and self.q > 1:
            return (1.0,)
        return ()

    def describe(self) -> dict:
        return {"family": self.family.value, "q": self.q}


def _domain(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("G is defined for x > 0 only")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def g_eval(g: GFunction, x):
    """Evaluate G(x). Raises ``ValueError`` for x <= 0."""
    xa = _domain(x)
    q = g.q
    if g.family is Family.POWER_DIFF:
        if q == 1.0:
            val = xa - 1.0 / xa
        else:
            lx = np.log(xa)
            val = np.exp(q * lx) - np.exp(-q * lx)
    else:
        val = (xa - 1.0 / xa) ** int(q)
    return _out(val, x)


def g_prime(g: GFunction, x):
    """Analytic first derivative G'(x)."""
    xa = _domain(x)
    q = g.q
    if g.family is Family.POWER_DIFF:
        lx = np.log(xa)
        val = q * (np.exp((q - 1.0) * lx) + np.exp((-q - 1.0) * lx))
    else:
        n = int(q)
        u = xa - 1.0 / xa
        du = 1.0 + 1.0 / (xa * xa)
        val = du if n == 1 else n * u ** (n - 1) * du
    return _out(val, x)


def g_second(g: GFunction, x):
    """Analytic second derivative G''(x)."""
    xa = _domain(x)
    q = g.q
    if g.family is Family.POWER_DIFF:
        lx = np.log(xa)
        val = q * ((q - 1.0) * np.exp((q - 2.0) * lx) - (q + 1.0) * np.exp((-q - 2.0) * lx))
    else:
        n = int(q)
        u = xa - 1.0 / xa
        du = 1.0 + 1.0 / (xa * xa)
        d2u = -2.0 / xa**3
        if n == 1:
            val = d2u
        else:
            val = n * (n - 1) * u ** (n - 2) * du * du + n * u ** (n - 1) * d2u
    return _out(val, x)


def g_inverse(g: GFunction, y, tol: float = DEFAULT_INVERSE_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Solve G(x) = y for x > 0.

    The bracket starts at [1, 1] and is widened geometrically (x2 upward,
    /2 downward) until it straddles ``y``; a Newton step is then taken inside
    the bracket whenever it stays there and the previous step halved the
    bracket, otherwise a geometric bisection.
    Iteration stops once ``|G(x) - y| <= tol * |y|``, or once the bracket
    has shrunk to neighbouring floats, which is the best x representable
    (near the flat point of odd powers a relative residual on y cannot
    otherwise be met).

    Vectorised over ``y``: every element runs its own bracket, and the
    iteration count is shared (bracket expansion plus refinement together
    must not exceed ``max_iter``).

    Raises
    ------
    ConvergenceError
        If some element has not met the tolerance after ``max_iter`` steps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    ya = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(ya)):
        raise ValueError("g_inverse needs finite y")
    flat = ya.ravel()
    lo = np.ones_like(flat)
    hi = np.ones_like(flat)
    thresh = tol * np.abs(flat)

    # geometric bracket expansion
    it = 0
    g_hi = np.zeros_like(flat)
    g_lo = np.zeros_like(flat)
    need_up = g_hi < flat
    need_dn = g_lo > flat
    while np.any(need_up) or np.any(need_dn):
        if it >= max_iter:
            raise ConvergenceError(f"bracket expansion exceeded {max_iter} steps")
        it += 1
        lo[need_up] = hi[need_up]
        hi[need_up] *= 2.0
        hi[need_dn] = lo[need_dn]
        lo[need_dn] *= 0.5
        g_hi = g_eval(g, hi)
        g_lo = g_eval(g, lo)
        need_up = g_hi < flat
        need_dn = g_lo > flat

    x = np.where(np.abs(g_lo - flat) < np.abs(g_hi - flat), lo, hi)
    resid = g_eval(g, x) - flat
    active = np.abs(resid) > thresh
    # Newton is trusted only while it at least halves the bracket; near a flat
    # point (odd powers at x = 1) it converges linearly and would stall
    slow = np.zeros_like(active)
    width = np.log(hi / lo)
    while np.any(active):
        if it >= max_iter:
            raise ConvergenceError(
                f"g_inverse did not reach tol={tol:g} within {max_iter} iterations"
            )
        it += 1
        xa, ra = x[active], resid[active]
        la, ha = lo[active], hi[active]
        # shrink bracket with the current iterate
        below = ra < 0
        la = np.where(below, xa, la)
        ha = np.where(below, ha, xa)
        dp = g_prime(g, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xa - ra / dp
        ok = np.isfinite(newton) & (newton > la) & (newton < ha) & ~slow[active]
        x_new = np.where(ok, newton, np.sqrt(la * ha))
        w_new = np.log(ha / la)
        slow[active] = w_new > 0.5 * width[active]
        width[active] = w_new
        lo[active], hi[active] = la, ha
        x[active] = x_new
        resid[active] = g_eval(g, x_new) - flat[active]
        stalled = (ha - la) <= 4 * np.finfo(float).eps * ha
        still = (np.abs(resid[active]) > thresh[active]) & ~stalled
        active_idx = np.flatnonzero(active)
        active[active_idx[~still]] = False

    # one polishing Newton step, kept only where it lowers the residual
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = x - resid / g_prime(g, x)
    good = np.isfinite(polished) & (polished > 0)
    if np.any(good):
        r_new = np.full_like(resid, np.inf)
        r_new[good] = g_eval(g, polished[good]) - flat[good]
        better = np.abs(r_new) < np.abs(resid)
        x = np.where(better, polished, x)
    return _out(x.reshape(ya.shape), y)


@dataclass
class AxiomReport:
    """Per-axiom outcome of :func:`check_condition_g` on a grid."""

    g: GFunction
    grid: np.ndarray
    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, max_violation: float, detail: str = ""):
        self.checks[name] = {
            "passed": bool(passed),
            "max_violation": float(max_violation),
            "detail": detail,
        }

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    @property
    def max_violation(self) -> float:
        return max((c["max_violation"] for c in self.checks.values()), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, c in self.checks.items():
            status = "PASS" if c["passed"] else "FAIL"
            out.append(f"{status} {name}: max violation {c['max_violation']:.3e} {c['detail']}".rstrip())
        return out


def check_condition_g(g: GFunction, grid, tol: float = 1e-10) -> AxiomReport:
    """Check the G axioms pointwise on ``grid``.

    Violations are relative: each identity residual is divided by
    ``1 + |scale|`` of the quantity it compares, so values of very different
    magnitude (q = 5 at x = 20 reaches 1e7) are judged alike.
    """
    x = np.unique(np.asarray(grid, dtype=float))
    if x.size == 0:
        raise ValueError("grid must be nonempty")
    if np.any(x <= 0):
        raise ValueError("grid points must be positive")
    report = AxiomReport(g=g, grid=x)

    g1 = abs(g_eval(g, 1.0))
    report.add("G(1)=0", g1 <= tol, g1)

    gp = np.asarray(g_prime(g, x))
    neg = np.maximum(0.0, -gp)
    report.add("G'>0", bool(np.all(gp > 0)), float(neg.max()),
               "" if np.all(gp > 0) else f"at x={x[gp <= 0].tolist()}")

    gx = np.asarray(g_eval(g, x))
    ginv = np.asarray(g_eval(g, 1.0 / x))
    anti = np.abs(gx + ginv) / (1.0 + np.abs(gx))
    report.add("G(x)=-G(1/x)", anti.max() <= tol, anti.max())

    xgp = x * gp
    mirror = (1.0 / x) * np.asarray(g_prime(g, 1.0 / x))
    deriv = np.abs(xgp - mirror) / (1.0 + np.abs(xgp))
    report.add("xG'(x)=x^-1 G'(1/x)", deriv.max() <= tol, deriv.max())

    # (xG')' = G' + x G''
    slope = gp + x * np.asarray(g_second(g, x))
    left, right = x < 1, x > 1
    bad = np.concatenate([np.maximum(0.0, slope[left]), np.maximum(0.0, -slope[right])])
    sign_ok = bool(np.all(slope[left] < 0) and np.all(slope[right] > 0))
    report.add("(xG')' sign change at 1", sign_ok, float(bad.max()) if bad.size else 0.0)

    # growth: xG' falls toward 1 from the left and rises past 1, G increasing
    xl, xr = xgp[left], xgp[right]
    growth_ok = bool(np.all(np.diff(xl) < 0) and np.all(np.diff(xr) > 0) and np.all(np.diff(gx) > 0))
    report.add("xG' grows away from 1", growth_ok, 0.0 if growth_ok else 1.0)
    return report
