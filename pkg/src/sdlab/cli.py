"""Command-line front end: ``sdlab <command> --config <file>``.

The config is flat ``key = value`` lines with ``#`` comments. Every key
must be known; defaults are filled in and echoed to ``manifest.json``
(``config_text`` there can be fed straight back in). Exit status is 0 on
success, 1 for configuration errors and 2 for numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .asymptotics import convergence_experiment, r_function
from .density import NoiseParams, exact_tail_probability, normalization, tabulate
from .gfunc import ConvergenceError, GFunction, check_condition_g
from .quadrature import QuadratureError
from .sampler import ExcessiveRejectionError, sample_x3, sample_x3_correlated, tail_exceedance
from .sde import MarketScenario, PositivityError, scenario_signal, simulate_ensemble
from .volatility import IngestError, VolatilityConfig, estimate_volatility, extrema_report, ingest_prices

COMMANDS = ("density", "sample", "simulate", "volatility", "converge", "tails", "check-g")
NUMERIC_ERRORS = (ConvergenceError, QuadratureError, PositivityError, ExcessiveRejectionError,
                  FloatingPointError, ArithmeticError, RuntimeError, ValueError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema: key -> (type, default); default None means "required when used"

_FLOAT, _INT, _STR, _BOOL, _FLOATS = "float", "int", "str", "bool", "floats"

SCHEMA = {
    "seed": (_INT, 0),
    "threads": (_STR, "1"),
    "output_dir": (_STR, ""),
    "g.family": (_STR, "power_diff"),
    "g.q": (_FLOAT, 1.0),
    "sigma": (_FLOAT, None),
    "dt": (_FLOAT, 1.0),
    "d_over_s": (_FLOAT, 1.0),
    "density.y_min": (_FLOAT, math.nan),
    "density.y_max": (_FLOAT, math.nan),
    "density.n": (_INT, 2001),
    "sample.n": (_INT, 100_000),
    "sample.rho": (_STR, "anti"),
    "sample.bins": (_INT, 200),
    "tails.n": (_INT, 1_000_000),
    "tails.k": (_FLOATS, (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)),
    "converge.sigmas": (_FLOATS, (0.2, 0.1, 0.05, 0.02)),
    "converge.r": (_STR, "tanh"),
    "converge.scaling": (_STR, "fixed_dt"),
    "t0": (_FLOAT, 0.0),
    "t_end": (_FLOAT, 1.0),
    "dt_step": (_FLOAT, 1e-3),
    "p0": (_FLOAT, 1.0),
    "simulate.scheme": (_STR, "euler_logp"),
    "simulate.paths": (_INT, 1),
    "volatility.window": (_INT, 100),
    "volatility.stride": (_INT, 0),
    "volatility.mode": (_STR, "vlog"),
    "volatility.input": (_STR, ""),
    "variance.bessel": (_BOOL, False),
    "check.grid_min": (_FLOAT, 0.05),
    "check.grid_max": (_FLOAT, 20.0),
    "check.grid_n": (_INT, 200),
}
for _side in ("demand", "supply"):
    SCHEMA.update({
        f"scenario.{_side}.kind": (_STR, "constant"),
        f"scenario.{_side}.value": (_FLOAT, 1.0),
        f"scenario.{_side}.mean": (_FLOAT, 1.0),
        f"scenario.{_side}.amplitude": (_FLOAT, 0.0),
        f"scenario.{_side}.period": (_FLOAT, 1.0),
        f"scenario.{_side}.phase": (_FLOAT, 0.0),
        f"scenario.{_side}.times": (_FLOATS, ()),
        f"scenario.{_side}.values": (_FLOATS, ()),
        f"scenario.{_side}.path": (_STR, ""),
    })

REQUIRED = {
    "density": ("sigma",),
    "sample": ("sigma",),
    "tails": ("sigma",),
    "converge": ("sigma",),
    "simulate": ("sigma",),
    "volatility": (),
    "check-g": (),
}

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*")


def _convert(key, kind, raw, line, col):
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == _FLOATS:
            return tuple(float(v) for v in raw.split(",") if v.strip()) if raw.strip() else ()
        return raw
    except ValueError:
        raise ConfigError(f"line {line}, column {col}: {key} expects {kind}, got {raw!r}") from None


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` text into a dict of typed values (no defaults)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError(f"line {lineno}, column {col}: expected 'key = value'")
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        kcol = len(key_part) - len(key_part.lstrip()) + 1
        if not _KEY.fullmatch(key):
            raise ConfigError(f"line {lineno}, column {kcol}: malformed key {key!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}, column {kcol}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}, column {kcol}: duplicate key {key!r}")
        value = value_part.strip()
        vcol = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise ConfigError(f"line {lineno}, column {vcol}: missing value for {key!r}")
        out[key] = _convert(key, SCHEMA[key][0], value, lineno, vcol)
    return out


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def config_text(values: dict) -> str:
    lines = [f"{k} = {_render(v)}" for k, v in sorted(values.items()) if not _is_blank(v)]
    return "\n".join(lines) + "\n"


def _is_blank(v) -> bool:
    return v is None or v == "" or v == () or (isinstance(v, float) and math.isnan(v))


@dataclass
class RunConfig:
    command: str
    values: dict
    output_dir: Path
    seed: int
    threads: int
    objects: dict = field(default_factory=dict)


def _threads(raw) -> int:
    if str(raw) == "auto":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {raw!r}") from None
    if n < 1:
        raise ConfigError("threads must be at least 1")
    return n


def resolve(command: str, parsed: dict, output_dir=None, seed=None, threads=None) -> RunConfig:
    """Fill defaults, apply overrides and build the domain objects.

    Raises ``ConfigError`` for missing keys and invalid parameter values.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    for key in REQUIRED[command]:
        if key not in parsed:
            raise ConfigError(f"required key {key!r} missing for command {command!r}")
    values = {k: parsed.get(k, d) for k, (_, d) in SCHEMA.items()}
    if seed is not None:
        values["seed"] = int(seed)
    if threads is not None:
        values["threads"] = str(threads)
    if output_dir is not None:
        values["output_dir"] = str(output_dir)
    out = values["output_dir"] or os.environ.get("SDLAB_OUTPUT_DIR", "") or "."
    if values["seed"] < 0 or values["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg = RunConfig(command, values, Path(out), values["seed"], _threads(values["threads"]))
    try:
        cfg.objects["g"] = GFunction(values["g.family"], values["g.q"])
        if values["sigma"] is not None and command in ("density", "sample", "tails", "converge"):
            cfg.objects["params"] = NoiseParams(values["sigma"], values["dt"], values["d_over_s"])
        if command == "simulate" or (command == "volatility" and not values["volatility.input"]):
            if values["sigma"] is None:
                raise ConfigError("required key 'sigma' missing (needed to simulate paths)")
            cfg.objects["scenario"] = MarketScenario(
                _signal(values, "demand"), _signal(values, "supply"), values["sigma"],
                values["t0"], values["t_end"], values["dt_step"], values["p0"])
        if command == "volatility":
            stride = values["volatility.stride"] or None
            cfg.objects["vol"] = VolatilityConfig(values["volatility.window"], stride,
                                                  values["volatility.mode"], values["variance.bessel"])
        if command == "converge":
            cfg.objects["r"] = r_function(values["converge.r"])
        if command == "sample" and values["sample.rho"] != "anti":
            rho = float(values["sample.rho"])
            if not -1 < rho <= 1:
                raise ValueError(f"sample.rho must lie in (-1, 1], got {rho}")
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def _signal(values, side):
    p = f"scenario.{side}."
    kind = values[p + "kind"]
    if kind == "constant":
        return scenario_signal(kind, value=values[p + "value"])
    if kind == "sinusoid":
        return scenario_signal(kind, mean=values[p + "mean"], amplitude=values[p + "amplitude"],
                               period=values[p + "period"], phase=values[p + "phase"])
    if kind == "csv" and values[p + "path"]:
        return scenario_signal(kind, path=values[p + "path"])
    return scenario_signal(kind, times=values[p + "times"], values=values[p + "values"])


# ---------------------------------------------------------------------------
# commands; each returns (artifacts, results) and may raise module errors


def _run_density(cfg):
    g, params = cfg.objects["g"], cfg.objects["params"]
    v = cfg.values
    y0, std = params.mode(g), params.normal_std(g)
    if not std > 0:
        std = params.sigma * math.sqrt(params.dt)
    lo = v["density.y_min"] if not math.isnan(v["density.y_min"]) else y0 - 8 * std
    hi = v["density.y_max"] if not math.isnan(v["density.y_max"]) else y0 + 8 * std
    arts, res = [], {}
    for which, name in (("f3", "f3.csv"), ("f3N", "f3n.csv")):
        curve = tabulate(g, params, which, lo, hi, v["density.n"])
        arts.append(curve.to_csv(cfg.output_dir / name))
        res[f"normalization_{which}"] = normalization(which, g, params)
    return arts, res


def _run_sample(cfg):
    g, params = cfg.objects["g"], cfg.objects["params"]
    v = cfg.values
    if v["sample.rho"] == "anti":
        batch = sample_x3(g, params, v["sample.n"], cfg.seed, cfg.threads)
    else:
        batch = sample_x3_correlated(g, params, float(v["sample.rho"]), v["sample.n"], cfg.seed, cfg.threads)
    arts = [batch.to_csv(cfg.output_dir / "samples.csv"),
            batch.histogram_to_csv(cfg.output_dir / "histogram.csv", bins=v["sample.bins"])]
    res = {"n_rejected": batch.n_rejected, "mean": float(np.mean(batch.values)),
           "std": float(np.std(batch.values))}
    return arts, res


def _run_tails(cfg):
    g, params = cfg.objects["g"], cfg.objects["params"]
    batch = sample_x3(g, params, cfg.values["tails.n"], cfg.seed, cfg.threads)
    y0, std = params.mode(g), params.normal_std(g)
    thresholds = sorted(y0 + k * std for k in cfg.values["tails.k"])
    rows = tail_exceedance(batch, thresholds)
    path = cfg.output_dir / "tails.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("threshold,empirical,gaussian,exact\n")
        for r in rows:
            fh.write(f"{r.threshold:.17g},{r.empirical:.17g},{r.gaussian:.17g},"
                     f"{exact_tail_probability(g, params, r.threshold):.17g}\n")
    return [path], {"n_rejected": batch.n_rejected}


def _run_converge(cfg):
    g, params, R = cfg.objects["g"], cfg.objects["params"], cfg.objects["r"]
    rep = convergence_experiment(R, g, params, cfg.values["converge.sigmas"],
                                 cfg.values["converge.scaling"], threads=cfg.threads)
    path = rep.to_csv(cfg.output_dir / "convergence.csv")
    return [path], {"fitted_order": rep.fitted_order, "order_vs_sigma2_over_dt": rep.order_vs_ratio,
                    "flagged": rep.flagged}


def _run_simulate(cfg):
    g, sc = cfg.objects["g"], cfg.objects["scenario"]
    n = cfg.values["simulate.paths"]
    ens = simulate_ensemble(sc, g, n, cfg.values["simulate.scheme"], cfg.seed, cfg.threads)
    if n == 1:
        arts = [ens.path(0).to_csv(cfg.output_dir / "path.csv")]
    else:
        width = max(3, len(str(n - 1)))
        arts = [ens.path(i).to_csv(cfg.output_dir / f"path_{i:0{width}d}.csv") for i in range(n)]
    return arts, {"final_mean_log_price": float(ens.log_prices[:, -1].mean())}


def _run_volatility(cfg):
    g, vol = cfg.objects["g"], cfg.objects["vol"]
    sc = cfg.objects.get("scenario")
    if cfg.values["volatility.input"]:
        path = ingest_prices(cfg.values["volatility.input"])
        sc = None
    else:
        path = simulate_ensemble(sc, g, cfg.values["simulate.paths"], cfg.values["simulate.scheme"],
                                 cfg.seed, cfg.threads)
    series = estimate_volatility(path, vol, sc, g if sc is not None else None)
    out = series.to_csv(cfg.output_dir / "volatility.csv")
    res = {"dropped_windows": series.dropped, "notes": series.notes}
    if len(series.estimates) >= 3:
        res["extrema"] = extrema_report(path, series, sc, g if sc is not None else None,
                                        window=vol.window).lines()
    return [out], res


def _run_check_g(cfg):
    g = cfg.objects["g"]
    v = cfg.values
    grid = np.geomspace(v["check.grid_min"], v["check.grid_max"], v["check.grid_n"])
    rep = check_condition_g(g, grid)
    path = cfg.output_dir / "axioms.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("check,passed,max_violation\n")
        for name, c in rep.checks.items():
            fh.write(f"\"{name}\",{str(c['passed']).lower()},{c['max_violation']:.17g}\n")
    for line in rep.lines():
        print(line)
    if not rep.all_passed:
        raise ArithmeticError("G axioms fail on the grid")
    return [path], {"all_passed": rep.all_passed, "max_violation": rep.max_violation}


RUNNERS = {
    "density": ("density", "tabulate/normalization", _run_density),
    "sample": ("sampler", "sample_x3", _run_sample),
    "tails": ("sampler", "tail_exceedance", _run_tails),
    "converge": ("asymptotics", "convergence_experiment", _run_converge),
    "simulate": ("sde", "simulate_path", _run_simulate),
    "volatility": ("volatility", "estimate_volatility", _run_volatility),
    "check-g": ("gfunc", "check_condition_g", _run_check_g),
}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg: RunConfig) -> int:
    module, op, fn = RUNNERS[cfg.command]
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"sdlab: config: output_dir not writable: {exc}", file=sys.stderr)
        return 1
    start = time.perf_counter()
    try:
        with np.errstate(over="ignore", under="ignore"):
            artifacts, results = fn(cfg)
    except IngestError as exc:
        print(f"sdlab: {module}.ingest_prices: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_ERRORS as exc:
        print(f"sdlab: {module}.{op}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "command": cfg.command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.values.items())
                   if not _is_blank(v) and k != "output_dir"},
        "config_text": config_text({k: v for k, v in cfg.values.items() if k != "output_dir"}),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": {"sdlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - start,
        "artifacts": {Path(a).name: _sha256(a) for a in artifacts},
        "results": results,
    }
    (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    print(f"sdlab {cfg.command}: wrote {len(artifacts)} artifact(s) to {cfg.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdlab", description="Supply/demand price dynamics experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat 'key = value' config file")
    p.add_argument("--output-dir", help="where CSVs and manifest.json go (else $SDLAB_OUTPUT_DIR, else .)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
    p.add_argument("--threads", help="worker threads, a count or 'auto'")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
        cfg = resolve(args.command, parse_config(text), args.output_dir, args.seed, args.threads)
    except (ConfigError, OSError) as exc:
        print(f"sdlab: config: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
