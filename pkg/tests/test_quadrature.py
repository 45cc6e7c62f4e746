import math

import numpy as np
import pytest
from scipy import integrate as sint
from scipy import special

from sdlab.quadrature import QuadratureError, integrate


def test_gaussian_whole_line():
    r = integrate(lambda y: np.exp(-0.5 * y * y) / math.sqrt(2 * math.pi))
    assert r.value == pytest.approx(1.0, abs=1e-13)


def test_shifted_narrow_gaussian_needs_center_and_scale():
    c, s = 40.0, 1e-3
    f = lambda y: np.exp(-0.5 * ((y - c) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    assert integrate(f, center=c, scale=s).value == pytest.approx(1.0, abs=1e-12)


def test_half_line_against_closed_form():
    assert integrate(lambda y: np.exp(-y), 0.0, math.inf).value == pytest.approx(1.0, abs=1e-13)
    assert integrate(lambda y: 1 / (1 + y * y), -math.inf, 0.0).value == pytest.approx(math.pi / 2, abs=1e-12)


def test_finite_with_endpoint_singularity():
    r = integrate(lambda y: 1 / np.sqrt(y), 0.0, 1.0)
    assert r.value == pytest.approx(2.0, abs=1e-10)


def test_kink_as_breakpoint_against_scipy():
    f = lambda y: np.abs(np.clip(y, -1, 1)) * np.exp(-y * y)
    ours = integrate(f, points=(-1.0, 0.0, 1.0)).value
    ref = sint.quad(lambda y: float(f(np.array(y))), -np.inf, np.inf, points=None, limit=200)[0]
    assert ours == pytest.approx(ref, abs=1e-8)


def test_cusp_substitution_handles_power_singularity_and_tail():
    # |y|^(-2/3) near 0 and |y|^(-4/3) in the tail: integral over R of the Cauchy-like shape
    f = lambda y: np.abs(y) ** (-2 / 3) / (1 + np.abs(y) ** (2 / 3)) ** 2 / 3
    r = integrate(f, cusps=(0.0,), cusp_power=3)
    # substituting v = |y|^(1/3) reduces it to 2 * int_0^inf dv / (1 + v^2)^2 = pi / 2
    assert r.value == pytest.approx(math.pi / 2, abs=1e-10)


def test_reversed_and_empty_intervals():
    f = lambda y: np.exp(-y)
    assert integrate(f, 1.0, 0.0).value == pytest.approx(-(1 - math.exp(-1)), abs=1e-14)
    assert integrate(f, 2.0, 2.0).value == 0.0


def test_bad_scale():
    with pytest.raises(ValueError):
        integrate(lambda y: y, 0.0, 1.0, scale=0.0)


def test_non_integrable_raises():
    with pytest.raises(QuadratureError):
        integrate(lambda y: 1 / (1 + np.abs(y)), 0.0, math.inf)


def test_erf_oracle():
    for b in (0.3, 1.0, 2.5):
        r = integrate(lambda y: 2 / math.sqrt(math.pi) * np.exp(-y * y), 0.0, b)
        assert r.value == pytest.approx(special.erf(b), abs=1e-14)
