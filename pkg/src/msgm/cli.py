"""``msgm`` command line: sweeps, bound evaluation, bracket checks and the self-test.

Exit status is 0 on success, 1 when an invariant or bracket check fails and 2
for configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import bounds, bracketing, experiments, gaussian
from .core import STREAM_BRACKETING, RngStream
from .experiments import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parse_value(raw: str):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"parameter value {raw!r} is not a number") from exc


def parse_params(pairs: list[str]) -> dict:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        if key in out:
            raise ConfigError(f"parameter {key!r} given twice")
        out[key] = _parse_value(value)
    return out


def _cmd_sweep(args) -> int:
    cfg = experiments.SweepConfig.load(args.config)
    if cfg.experiment != args.expected:
        raise ConfigError(f"config is for experiment {cfg.experiment!r}, not {args.expected!r}")
    result = experiments.run_sweep(cfg)
    experiments.emit_csv(result.rows, args.out, experiments.provenance_line(cfg))
    print(f"wrote {len(result.rows)} rows to {args.out}")
    if getattr(args, "svg", None):
        experiments.emit_svg(result.rows, args.svg)
        print(f"wrote {args.svg}")
    if getattr(args, "fig", None):
        from .plotting import plot_sweep
        plot_sweep(result.rows, args.fig)
        print(f"wrote {args.fig}")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    params = parse_params(args.param)
    cls = bounds.PARAM_TYPES[args.instantiation]
    fields = set(cls.__dataclass_fields__)
    unknown = sorted(set(params) - fields)
    if unknown:
        raise ConfigError(f"unknown parameters for {args.instantiation}: {unknown}")
    try:
        p = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"missing parameters for {args.instantiation}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps(bounds.BOUND_FUNCS[args.instantiation](p, args.mode).as_dict()))
    return EXIT_OK


def _random_gaussian_target(gen: np.random.Generator):
    K, d = int(gen.integers(1, 6)), int(gen.integers(1, 11))
    d1 = int(gen.integers(0, d + 1))
    B = float(gen.uniform(0.5, 5.0))
    fam = gaussian.GaussianFamily(d, d1, K, gen.uniform(-B, B, (K, d1)), gen.uniform(-B, B, d - d1))
    return fam, B


def bracket_verify(family: str, epsilon: float, seed: int, n_probe: int = 10_000) -> bracketing.BracketReport:
    """One randomized bracket check; the random target is fixed by ``seed``."""
    rng = RngStream(seed, (STREAM_BRACKETING,))
    if family == "gaussian":
        fam, B = _random_gaussian_target(rng.child(0).generator())
        elem = bracketing.gaussian_bracket_cover(fam, B=B, eps=epsilon)
        return bracketing.gaussian_bracket_verify(elem, fam, n_probe, rng.child(1))
    if family == "ebm1d":
        u = bracketing.random_piecewise_linear_energy(rng.child(0).generator())
        return bracketing.ebm_bracket_verify_1d(u, epsilon, rng.child(1))
    if family == "constant":
        return bracketing.constant_bracket_verify(epsilon, n_probe, rng.child(1))
    raise ConfigError(f"unknown bracket family {family!r}")


def _cmd_bracket_verify(args) -> int:
    if not math.isfinite(args.epsilon) or args.epsilon <= 0 or (args.family != "ebm1d" and args.epsilon > 1):
        raise ConfigError(f"epsilon {args.epsilon} out of range for family {args.family}")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    report = bracket_verify(args.family, args.epsilon, args.seed)
    print(json.dumps({**report.as_dict(), "valid": report.valid}))
    return EXIT_OK if report.valid else EXIT_FAIL


def _cmd_selftest(args) -> int:
    from .selftest import format_report, run_selftest
    results = run_selftest()
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gaussian-sweep", help="run a conditional Gaussian sweep")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True, help="CSV output path")
    g.add_argument("--svg", help="also write a standalone SVG chart")
    g.add_argument("--fig", help="also render the chart with matplotlib (png, pdf, ...)")
    g.set_defaults(func=_cmd_sweep, expected="gaussian")

    a = sub.add_parser("arm-sweep", help="run an autoregressive-model sweep")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True, help="CSV output path")
    a.add_argument("--svg", help="also write a standalone SVG chart")
    a.add_argument("--fig", help="also render the chart with matplotlib")
    a.set_defaults(func=_cmd_sweep, expected="arm")

    b = sub.add_parser("bounds", help="evaluate a closed-form bound as JSON")
    b.add_argument("--instantiation", required=True, choices=bounds.INSTANTIATIONS)
    b.add_argument("--mode", required=True, choices=bounds.STRATEGIES)
    b.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    b.set_defaults(func=_cmd_bounds)

    v = sub.add_parser("bracket-verify", help="check a randomly generated bracket")
    v.add_argument("--family", required=True, choices=("gaussian", "ebm1d", "constant"))
    v.add_argument("--epsilon", required=True, type=float)
    v.add_argument("--seed", required=True, type=int)
    v.set_defaults(func=_cmd_bracket_verify)

    s = sub.add_parser("selftest", help="run every invariant check at fixed seeds")
    s.set_defaults(func=_cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
