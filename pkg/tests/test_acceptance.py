"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines appear in the
output even without ``-s``) or ``python tests/test_acceptance.py``.
Tolerances and runtimes are pinned to the build contract.
"""

import itertools
import json
import math
import sys
import time

import numpy as np
import pytest
from scipy import special

from sdlab.asymptotics import convergence_experiment, r_function, verify_h1_curvature
from sdlab.cli import main as cli_main
from sdlab.density import NoiseParams, exact_tail_probability, normalization
from sdlab.gfunc import GFunction, check_condition_g, g_prime
from sdlab.sampler import ks_distance, sample_x3, tail_exceedance
from sdlab.sde import MarketScenario, PricePath, scenario_signal, simulate_ensemble, simulate_path
from sdlab.volatility import VolatilityConfig, estimate_volatility, extrema_report

G1 = GFunction.power_diff(1)
SIGMAS = [0.2, 0.1, 0.05, 0.02]


@pytest.fixture
def say(capsys):
    def emit(cid, ok, detail, elapsed=None):
        t = "" if elapsed is None else f" [{elapsed:.2f} s]"
        with capsys.disabled():
            print(f"\n{cid} {'PASS' if ok else 'FAIL'}: {detail}{t}")
        return ok
    return emit


def const_scenario(ratio, sigma, t_end=1.0, dt_step=1e-3):
    return MarketScenario(scenario_signal("constant", value=ratio), scenario_signal("constant"),
                          sigma, 0.0, t_end, dt_step)


def test_c01_axioms(say):
    t = time.perf_counter()
    grid = np.geomspace(0.05, 20.0, 200)
    reps = [check_condition_g(g, grid) for g in (GFunction.power_diff(1), GFunction.odd_power_diff(1))]
    worst = max(r.max_violation for r in reps)
    el = time.perf_counter() - t
    ok = all(r.all_passed for r in reps) and worst < 1e-10 and el < 1.0
    assert say("C1", ok, f"both families pass all axiom checks, max violation {worst:.2e} < 1e-10", el)


def test_c02_normalization(say):
    t = time.perf_counter()
    worst = 0.0
    for s, dt, r, fam in itertools.product((0.05, 0.1, 0.2), (0.25, 1.0), (0.8, 1.0, 1.25),
                                           (("power_diff", 1), ("odd_power_diff", 1))):
        worst = max(worst, abs(normalization("f3", GFunction(*fam), NoiseParams(s, dt, r)) - 1.0))
    el = time.perf_counter() - t
    ok = worst <= 1e-5 and el < 30
    assert say("C2", ok, f"36-point sweep, max |mass - 1| = {worst:.2e} <= 1e-5", el)


def test_c03_order_unbalanced(say):
    t = time.perf_counter()
    slopes = {name: convergence_experiment(r_function(name), G1, NoiseParams(0.2, 1.0, 1.2), SIGMAS).fitted_order
              for name in ("tanh", "cauchy")}
    el = time.perf_counter() - t
    ok = all(abs(v - 2.0) <= 0.3 for v in slopes.values()) and el < 60
    detail = ", ".join(f"{k} slope {v:.3f}" for k, v in slopes.items())
    assert say("C3", ok, f"D/S = 1.2: {detail} (want 2.0 +/- 0.3)", el)


@pytest.mark.xfail(strict=True, reason=(
    "unattainable at D/S = 1: X3 is symmetric about 0 there, so E[tanh] vanishes under both "
    "densities (error identically 0, no slope), and for the even Cauchy weight the O(sigma^2) "
    "terms cancel, leaving an O(sigma^4) error (slope near 3.6)"))
def test_c03_order_balanced(say):
    t = time.perf_counter()
    tanh = convergence_experiment(r_function("tanh"), G1, NoiseParams(0.2, 1.0, 1.0), SIGMAS)
    cauchy = convergence_experiment(r_function("cauchy"), G1, NoiseParams(0.2, 1.0, 1.0), SIGMAS)
    el = time.perf_counter() - t
    ok = (tanh.fitted_order is not None and abs(tanh.fitted_order - 2) <= 0.3
          and abs(cauchy.fitted_order - 2) <= 0.3)
    say("C3", ok, f"D/S = 1.0: tanh errors max {max(tanh.errors):.1e} ({tanh.flagged or 'fitted'}), "
                  f"cauchy slope {cauchy.fitted_order:.3f} (want 2.0 +/- 0.3); expected failure, see ledger", el)
    assert ok


def test_c04_alpha_scaling_collapse(say):
    t = time.perf_counter()
    worst = 1.0
    for name in ("tanh", "cauchy"):
        base = NoiseParams(0.2, 1.0, 1.2)
        fixed = convergence_experiment(r_function(name), G1, base, SIGMAS, "fixed_dt")
        alpha = convergence_experiment(r_function(name), G1, base, SIGMAS, "alpha_scaling")
        # interpolate the fixed-dt curve in log-log at each alpha point's sigma^2/dt
        lx, ly = np.log(fixed.ratios[::-1]), np.log(np.asarray(fixed.errors)[::-1])
        pred = np.exp(np.interp(np.log(alpha.ratios), lx, ly))
        f = np.asarray(alpha.errors) / pred
        worst = max(worst, float(np.max(np.maximum(f, 1 / f))))
    el = time.perf_counter() - t
    ok = worst <= 2.0 and el < 60
    assert say("C4", ok, f"alpha-scaled vs fixed-dt errors at equal sigma^2/dt, worst factor {worst:.4f} <= 2", el)


def test_c05_curvature(say):
    t = time.perf_counter()
    cases = ((1.0, 1), (1.5, 1), (1.2, 2))
    expo = [verify_h1_curvature(GFunction.power_diff(q), NoiseParams(0.05, 1.0, r)).rel_error for r, q in cases]
    logd = [verify_h1_curvature(GFunction.power_diff(q), NoiseParams(0.01, 1.0, r), quantity="log_density").rel_error
            for r, q in cases]
    el = time.perf_counter() - t
    ok = max(expo) <= 1e-3 and max(logd) <= 1e-3 and el < 5
    assert say("C5", ok, f"exponent at sigma 0.05: max rel error {max(expo):.1e}; full log-density at "
                         f"sigma 0.01: {max(logd):.1e} (both <= 1e-3)", el)


def test_c06_weak_convergence(say):
    t = time.perf_counter()
    p = NoiseParams(0.1, 1.0, 1.2)
    ks_exact = ks_distance(sample_x3(G1, p, 1_000_000, 0, threads=4), "f3_exact").ks_statistic
    n = 1_000_000
    seq = [ks_distance(sample_x3(G1, p.with_(sigma=s), n, 1, threads=4), "f3_normal").ks_statistic
           for s in (0.4, 0.2, 0.1, 0.05)]
    noise = 2 * 1.63 / math.sqrt(n)
    rises = [b - a for a, b in zip(seq, seq[1:]) if b > a]
    monotone = len(rises) == 0 or (len(rises) == 1 and rises[0] <= noise)
    el = time.perf_counter() - t
    ok = ks_exact <= 0.002 and monotone and el < 60
    assert say("C6", ok, f"KS vs f3 = {ks_exact:.5f} <= 0.002; KS vs normal over sigma 0.4..0.05 = "
                         f"{', '.join(f'{v:.4f}' for v in seq)} (nonincreasing)", el)


def test_c07_fat_tails(say):
    t = time.perf_counter()
    lines, ok = [], True
    for r in (1.0, 1.2):
        p = NoiseParams(0.2, 1.0, r)
        y = p.mode(G1) + 5 * p.normal_std(G1)
        row = tail_exceedance(sample_x3(G1, p, 10_000_000, 0, threads=8), [y])[0]
        exact = exact_tail_probability(G1, p, y)
        ok &= row.empirical >= 3 * row.gaussian and exact > row.gaussian
        lines.append(f"D/S {r}: empirical {row.empirical:.2e}, exact {exact:.2e}, gaussian {row.gaussian:.2e} "
                     f"(x{row.empirical / row.gaussian:.0f})")
    el = time.perf_counter() - t
    ok &= el < 120
    assert say("C7", ok, "; ".join(lines), el)


def test_c08_scheme_gap(say):
    t = time.perf_counter()
    factors = []
    for ratio, seed in itertools.product((1.05, 1.1), range(10)):
        gaps = []
        for s in (0.1, 0.05):
            sc = const_scenario(ratio, s)
            a = simulate_path(sc, G1, "euler_p", seed)
            b = simulate_path(sc, G1, "euler_logp", seed)
            gaps.append(np.max(np.abs(a.log_prices - b.log_prices)))
        factors.append(gaps[0] / gaps[1])
    el = time.perf_counter() - t
    ok = all(3 <= f <= 5 for f in factors) and el < 10
    assert say("C8", ok, f"halving sigma shrinks the euler_p/euler_logp gap by {min(factors):.2f}..{max(factors):.2f} "
                         f"over 20 runs (want [3, 5])", el)


def test_c09_volatility(say):
    t = time.perf_counter()
    sc = const_scenario(1.2, 0.1, t_end=5.12)
    ens = simulate_ensemble(sc, G1, 100, seed=0, threads=4)
    est = estimate_volatility(ens, VolatilityConfig(256)).estimates.mean()
    want = (0.1 * g_prime(G1, 1.2) * 1.2) ** 2
    rel = abs(est / want - 1)
    path = ens.path(0)
    worst, exact2 = 0.0, True
    for c in (0.37, 3.0, 2.0, 0.5):
        scaled = PricePath(path.times, c * path.prices, path.log_prices + math.log(c), "ingested")
        for mode, factor in (("vp", c * c), ("vpn", 1.0)):
            a = estimate_volatility(path, VolatilityConfig(256, mode=mode)).estimates * factor
            b = estimate_volatility(scaled, VolatilityConfig(256, mode=mode)).estimates
            worst = max(worst, float(np.max(np.abs(b / a - 1))))
            if c in (2.0, 0.5):
                exact2 &= bool(np.array_equal(a, b))
    el = time.perf_counter() - t
    ok = rel <= 0.05 and exact2 and worst <= 1e-12 and el < 30
    assert say("C9", ok, f"mean vlog {est:.5f} vs theory {want:.5f} ({rel:.2%} <= 5%); vp/vpn scale equivariance "
                         f"bit-exact for powers of 2, max rel {worst:.1e} otherwise", el)


def test_c10_extrema(say):
    t = time.perf_counter()
    sc = MarketScenario(scenario_signal("sinusoid", mean=1.0, amplitude=0.3, period=2.0),
                        scenario_signal("constant"), 0.1, 0.0, 3.0, 1e-3)
    ens = simulate_ensemble(sc, G1, 200, seed=0, threads=4)
    series = estimate_volatility(ens, VolatilityConfig(200), sc, G1)
    rep = extrema_report(ens, series, sc, G1, window=200)
    w = rep.window_length
    per_min = [min(abs(m - e) for e in rep.deterministic_extrema) for m in rep.vol_minima]
    el = time.perf_counter() - t
    ok = (bool(rep.vol_minima) and all(d <= w for d in per_min) and all(d <= w for d in rep.min_offsets)
          and rep.rank_corr_log >= 0.5 and el < 60)
    assert say("C10", ok, f"price extrema {rep.deterministic_extrema}, volatility minima {rep.vol_minima}, "
                          f"offsets <= {max(per_min + rep.min_offsets):.2f} (window {w:g}); rank corr "
                          f"{rep.rank_corr_log:.3f} >= 0.5", el)


CLI_CONFIG = """sigma = 0.1
d_over_s = 1.2
sample.n = 200000
tails.n = 200000
t_end = 2
scenario.demand.kind = sinusoid
scenario.demand.amplitude = 0.3
scenario.demand.period = 2
simulate.paths = 4
volatility.window = 100
"""


def test_c11_cli_determinism(tmp_path, say):
    t = time.perf_counter()
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CLI_CONFIG)
    same, count = True, 0
    for cmd in ("density", "sample", "tails", "converge", "simulate", "volatility", "check-g"):
        dirs = []
        for threads in ("1", "8"):
            d = tmp_path / f"{cmd}-{threads}"
            assert cli_main([cmd, "--config", str(cfg), "--output-dir", str(d), "--seed", "42",
                             "--threads", threads]) == 0
            dirs.append(d)
        for name in json.loads((dirs[0] / "manifest.json").read_text())["artifacts"]:
            count += 1
            same &= (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    el = time.perf_counter() - t
    assert say("C11", same, f"{count} CSV artifacts from 7 commands byte-identical under threads 1 and 8", el)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
