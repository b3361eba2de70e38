"""Config-driven sweeps comparing multi-source and single-source fitting.

A sweep varies one axis (``K``, ``n``, ``beta_sim`` or ``D``) over a list of
values and repeats every value ``seeds`` times.  Each (axis value, seed) cell
draws from its own stream ``(module, axis index, seed index)`` so that cells
can run in any order, in any process, and still merge into identical output.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from . import __version__, arm, bounds, gaussian
from .core import STREAM_ARM, STREAM_GAUSSIAN, LabeledDataset, RngStream, SourceWeights, mean_and_std

CSV_HEADER = ["axis", "axis_value", "strategy", "estimator", "mean_tv", "std_tv", "n_runs", "theory_bound"]

AXES = {"gaussian": ("K", "n", "beta_sim"), "arm": ("K", "n", "D")}
REQUIRED = {
    "gaussian": ("n", "K", "d", "beta_sim"),
    "arm": ("n", "K", "M", "D", "de", "L", "W", "lr", "batch", "iters"),
}
OPTIONAL = {"gaussian": {"n_test": 500}, "arm": {"concentration": 1.0}}
INTEGER_KEYS = {"n", "K", "d", "n_test", "M", "D", "de", "L", "W", "batch", "iters"}
CONFIG_KEYS = {"experiment", "axis", "axis_values", "fixed", "seeds", "master_seed", "delta", "emit_theory"}
FIXED_KEYS = {"n", "K", "d", "beta_sim", "n_test", "M", "D", "de", "L", "W", "lr", "batch", "iters",
              "concentration"}


class ConfigError(ValueError):
    """Invalid sweep configuration; the CLI maps it to exit status 2."""


@dataclass(frozen=True)
class SweepConfig:
    experiment: str
    axis: str
    axis_values: list
    fixed: dict
    seeds: int = 5
    master_seed: int = 0
    delta: float = 0.1
    emit_theory: bool = True

    def __post_init__(self):
        problems = []
        if self.experiment not in AXES:
            raise ConfigError(f"experiment: expected 'gaussian' or 'arm', got {self.experiment!r}")
        if self.axis not in AXES[self.experiment]:
            problems.append(f"axis: {self.axis!r} is not sweepable for {self.experiment} "
                            f"(choose from {', '.join(AXES[self.experiment])})")
        values = list(self.axis_values) if isinstance(self.axis_values, (list, tuple)) else None
        if not values:
            problems.append("axis_values: must be a nonempty list")
        elif any(not isinstance(v, (int, float)) or isinstance(v, bool) for v in values):
            problems.append("axis_values: entries must be numbers")
        elif any(b <= a for a, b in zip(values, values[1:])):
            problems.append("axis_values: must be strictly increasing")
        elif self.axis in INTEGER_KEYS and any(float(v) != int(v) for v in values):
            problems.append(f"axis_values: {self.axis} takes integer values")
        if not isinstance(self.fixed, dict):
            problems.append("fixed: must be an object")
        else:
            unknown = sorted(set(self.fixed) - FIXED_KEYS)
            if unknown:
                problems.append(f"fixed: unknown keys {unknown}")
            missing = [k for k in REQUIRED[self.experiment] if k != self.axis and k not in self.fixed]
            if missing:
                problems.append(f"fixed: missing {missing} for experiment {self.experiment}")
            for k, v in self.fixed.items():
                if k in INTEGER_KEYS and k in FIXED_KEYS and (isinstance(v, bool) or not isinstance(v, int)):
                    problems.append(f"fixed.{k}: expected an integer, got {v!r}")
        if isinstance(self.seeds, bool) or not isinstance(self.seeds, int) or self.seeds < 1:
            problems.append(f"seeds: must be an integer >= 1, got {self.seeds!r}")
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int) \
                or not 0 <= self.master_seed < 2**64:
            problems.append(f"master_seed: must be a 64-bit unsigned integer, got {self.master_seed!r}")
        if not isinstance(self.delta, (int, float)) or not 0.0 < self.delta <= 0.5:
            problems.append(f"delta: must lie in (0, 1/2], got {self.delta!r}")
        if not isinstance(self.emit_theory, bool):
            problems.append("emit_theory: must be true or false")
        if problems:
            raise ConfigError("; ".join(problems))
        if values and self.axis in INTEGER_KEYS:
            object.__setattr__(self, "axis_values", [int(v) for v in values])
        else:
            object.__setattr__(self, "axis_values", [float(v) for v in values])

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(raw) - CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        missing = [k for k in ("experiment", "axis", "axis_values", "fixed") if k not in raw]
        if missing:
            raise ConfigError(f"missing config keys {missing}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def cell_params(self, axis_value) -> dict:
        """Fixed parameters with the axis value and defaults filled in."""
        params = dict(OPTIONAL[self.experiment])
        params.update(self.fixed)
        params[self.axis] = axis_value
        return params

    def to_json(self) -> str:
        return json.dumps({"experiment": self.experiment, "axis": self.axis, "axis_values": self.axis_values,
                           "fixed": self.fixed, "seeds": self.seeds, "master_seed": self.master_seed,
                           "delta": self.delta, "emit_theory": self.emit_theory},
                          sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: float
    strategy: str
    estimator: str
    mean_tv: float
    std_tv: float
    n_runs: int
    theory_bound: float | None = None

    def __post_init__(self):
        if self.strategy not in bounds.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.estimator not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        # Monte Carlo averages can exceed 1 by sampling noise; exact values cannot
        if self.mean_tv < 0 or (self.estimator == "exact" and self.mean_tv > 1 + 1e-12):
            raise ValueError(f"mean_tv {self.mean_tv} outside [0, 1]")
        if self.std_tv < 0:
            raise ValueError("std_tv must be nonnegative")


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]
    per_seed: dict = field(default_factory=dict)  # (axis_idx, strategy, estimator) -> per-seed values


# -- worker pool ---------------------------------------------------------------------

def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("MSGM_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"MSGM_THREADS must be a positive integer, got {raw!r}") from exc
    return max(1, min(cap, n_jobs))


def _run_cells(func, jobs: list) -> list:
    """Run ``func`` on every job; results come back in job order regardless of workers."""
    workers = worker_count(len(jobs))
    if workers == 1:
        return [func(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))


def _aggregate(cfg: SweepConfig, results: list, estimators: tuple, theory: dict) -> SweepResult:
    # results are ordered by (axis index, seed index); each maps (strategy, estimator) -> value
    per_seed: dict = {}
    for (axis_idx, _seed_idx), values in results:
        for key, v in values.items():
            per_seed.setdefault((axis_idx,) + key, []).append(v)
    rows = []
    for axis_idx, value in enumerate(cfg.axis_values):
        for estimator in estimators:
            for strategy in bounds.STRATEGIES:
                mean, std = mean_and_std(per_seed[(axis_idx, strategy, estimator)])
                rows.append(SweepRow(cfg.axis, value, strategy, estimator, mean, std, cfg.seeds,
                                     theory.get((axis_idx, strategy))))
    return SweepResult(cfg, rows, per_seed)


def _jobs(cfg: SweepConfig) -> list:
    return [(cfg, a, s) for a in range(len(cfg.axis_values)) for s in range(cfg.seeds)]


# -- Gaussian sweep ----------------------------------------------------------------------

def gaussian_theory(params: dict, mode: str, delta: float) -> float:
    """Theory curve value; the box bound is ``B = K`` since the true means are ``1..K``."""
    d1 = gaussian.sim_d1(params["d"], params["beta_sim"])
    p = bounds.GaussianBoundParams(n=params["n"], K=params["K"], d=params["d"], d1=d1,
                                   B=float(params["K"]), delta=delta)
    return bounds.gaussian_bound(p, mode).tv_bound


def _gaussian_cell(job):
    cfg, axis_idx, seed_idx = job
    p = cfg.cell_params(cfg.axis_values[axis_idx])
    stream = RngStream(cfg.master_seed, (STREAM_GAUSSIAN, axis_idx, seed_idx))
    truth = gaussian.make_sim_family(p["K"], p["d"], p["beta_sim"])
    w = SourceWeights.uniform(p["K"])
    ds = gaussian.sample_dataset(truth, w, p["n"], stream.child(0))
    fits = {"multi": gaussian.fit_multi(ds, truth.d1), "single": gaussian.fit_single(ds, truth.d1)}
    out = {}
    for strategy, est in fits.items():
        out[(strategy, "exact")] = gaussian.avg_tv_exact(est, truth, w)
        # common test sample for both strategies
        out[(strategy, "monte_carlo")] = gaussian.tv_monte_carlo(est, truth, w, p["n_test"], stream.child(1))
    return (axis_idx, seed_idx), out


def run_gaussian_sweep(cfg: SweepConfig) -> SweepResult:
    if cfg.experiment != "gaussian":
        raise ConfigError("run_gaussian_sweep needs experiment='gaussian'")
    results = _run_cells(_gaussian_cell, _jobs(cfg))
    theory = {}
    if cfg.emit_theory:
        for a, value in enumerate(cfg.axis_values):
            for mode in bounds.STRATEGIES:
                theory[(a, mode)] = gaussian_theory(cfg.cell_params(value), mode, cfg.delta)
    return _aggregate(cfg, results, ("exact", "monte_carlo"), theory)


# -- autoregressive sweep -------------------------------------------------------------------

def arm_theory(params: dict, mode: str, delta: float) -> float:
    """Theory curve with the dense MLP parameter count as ``S`` and norm bound ``B = 1``."""
    cfg = arm.ArmConfig(M=params["M"], D=params["D"], K=params["K"], de=params["de"], L=params["L"],
                        W=params["W"])
    widths = cfg.widths
    S = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    p = bounds.ArmBoundParams(n=params["n"], K=cfg.K, D=cfg.D, M=cfg.M, de=cfg.de, L=cfg.L, W=cfg.W,
                              S=S, B=1.0, delta=delta)
    return bounds.arm_bound(p, mode).tv_bound


def _arm_cell(job):
    cfg, axis_idx, seed_idx = job
    p = cfg.cell_params(cfg.axis_values[axis_idx])
    stream = RngStream(cfg.master_seed, (STREAM_ARM, axis_idx, seed_idx))
    K = p["K"]
    w = SourceWeights.uniform(K)
    truths = arm.make_truth_tables(K, p["M"], p["D"], p["concentration"], stream.child(0))
    ds = arm.sample_sequences(truths, w, p["n"], stream.child(1))
    hyper = dict(lr=p["lr"], batch_size=p["batch"], iters=p["iters"])

    multi_cfg = arm.ArmConfig(M=p["M"], D=p["D"], K=K, de=p["de"], L=p["L"], W=p["W"])
    multi = arm.train(arm.init_params(multi_cfg, stream.child(2)), ds, rng=stream.child(3), **hyper)

    single_cfg = arm.ArmConfig(M=p["M"], D=p["D"], K=1, de=p["de"], L=p["L"], W=p["W"])
    singles = []
    for k in range(1, K + 1):
        own = ds.y == k
        if not own.any():
            raise ValueError(f"source {k} drew no samples (n={p['n']}, K={K}); single-source fit undefined")
        sub = LabeledDataset(ds.x[own], np.ones(int(own.sum()), dtype=np.int64), 1)
        singles.append(arm.train(arm.init_params(single_cfg, stream.child(4, k)), sub,
                                 rng=stream.child(5, k), **hyper))
    out = {("multi", "exact"): arm.exact_avg_tv(multi, truths, w),
           ("single", "exact"): arm.exact_avg_tv(singles, truths, w)}
    return (axis_idx, seed_idx), out


def run_arm_sweep(cfg: SweepConfig) -> SweepResult:
    if cfg.experiment != "arm":
        raise ConfigError("run_arm_sweep needs experiment='arm'")
    for value in cfg.axis_values:
        p = cfg.cell_params(value)
        if p["M"] ** p["D"] > arm.MAX_SUPPORT:
            raise ConfigError(f"support M^D = {p['M']}^{p['D']} exceeds the enumeration guard {arm.MAX_SUPPORT}")
    results = _run_cells(_arm_cell, _jobs(cfg))
    theory = {}
    if cfg.emit_theory:
        for a, value in enumerate(cfg.axis_values):
            for mode in bounds.STRATEGIES:
                theory[(a, mode)] = arm_theory(cfg.cell_params(value), mode, cfg.delta)
    return _aggregate(cfg, results, ("exact",), theory)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    return run_gaussian_sweep(cfg) if cfg.experiment == "gaussian" else run_arm_sweep(cfg)


# -- output ------------------------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def provenance_line(cfg: SweepConfig) -> str:
    extra = " gaussian_theory_B=K" if cfg.experiment == "gaussian" else " arm_theory_B=1 arm_theory_S=dense"
    return f"# msgm {__version__} delta={cfg.delta:g}{extra} config={cfg.to_json()}"


def emit_csv(rows: list[SweepRow], path, provenance: str | None = None):
    """Write rows with 6 significant digits and LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if provenance:
            fh.write(provenance.rstrip("\n") + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.axis, _fmt(r.axis_value), r.strategy, r.estimator, _fmt(r.mean_tv),
                             _fmt(r.std_tv), r.n_runs, _fmt(r.theory_bound)])


def read_csv(path) -> list[SweepRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [SweepRow(rec["axis"], float(rec["axis_value"]), rec["strategy"], rec["estimator"],
                     float(rec["mean_tv"]), float(rec["std_tv"]), int(rec["n_runs"]),
                     float(rec["theory_bound"]) if rec["theory_bound"] else None)
            for rec in reader]


STRATEGY_COLORS = {"multi": "#2ca02c", "single": "#ff7f0e"}


def plot_series(rows: list[SweepRow], estimator: str | None = None):
    """Split rows into per-strategy empirical and theory series, sorted by axis value.

    Picks the Monte Carlo estimator when present (the estimator used for the
    published figures), else the exact one.
    """
    if not rows:
        raise ValueError("no rows to plot")
    axes = {r.axis for r in rows}
    if len(axes) != 1:
        raise ValueError(f"rows mix several sweep axes: {sorted(axes)}")
    if estimator is None:
        estimator = "monte_carlo" if any(r.estimator == "monte_carlo" for r in rows) else "exact"
    chosen = sorted((r for r in rows if r.estimator == estimator), key=lambda r: r.axis_value)
    if not chosen:
        raise ValueError(f"no rows for estimator {estimator!r}")
    empirical, theory = {}, {}
    for strategy in bounds.STRATEGIES:
        mine = [r for r in chosen if r.strategy == strategy]
        if mine:
            empirical[strategy] = [(r.axis_value, r.mean_tv) for r in mine]
            if all(r.theory_bound is not None for r in mine):
                theory[strategy] = [(r.axis_value, r.theory_bound) for r in mine]
    return axes.pop(), estimator, empirical, theory


def _scale(lo: float, hi: float, log: bool, a: float, b: float):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    span = hi - lo or 1.0

    def f(v: float) -> float:
        t = math.log10(v) if log else v
        return a + (t - lo) / span * (b - a)
    return f


def emit_svg(rows: list[SweepRow], path, style: dict | None = None):
    """Standalone dual-axis line chart: empirical solid on the left, theory dashed on the right."""
    axis, estimator, empirical, theory = plot_series(rows, (style or {}).get("estimator"))
    style = {"width": 640, "height": 420, "title": f"average TV error vs {axis}", **(style or {})}
    W, H = style["width"], style["height"]
    left, right, top, bottom = 70, W - 80, 40, H - 60
    xs = [x for s in empirical.values() for x, _ in s]
    log_x = axis in ("n", "K") and min(xs) > 0
    sx = _scale(min(xs), max(xs), log_x, left, right)
    emp_max = max(y for s in empirical.values() for _, y in s) * 1.1 or 1.0
    sy = _scale(0.0, emp_max, False, bottom, top)
    th_vals = [y for s in theory.values() for _, y in s]
    sy_th = _scale(0.0, max(th_vals) * 1.1 or 1.0, False, bottom, top) if th_vals else None

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(style["title"])}</text>',
             f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>']
    for v in sorted(set(xs)):
        parts.append(f'<text x="{sx(v):.1f}" y="{bottom + 16}" text-anchor="middle" font-size="10">{v:g}</text>')
    for i in range(5):
        v = emp_max * i / 4
        parts.append(f'<text x="{left - 6}" y="{sy(v) + 3:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    x_label = f"{axis} (log scale)" if log_x else axis
    parts.append(f'<text x="{(left + right) / 2:.1f}" y="{H - 20}" text-anchor="middle" font-size="12">'
                 f'{escape(x_label)}</text>')
    parts.append(f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">empirical TV ({estimator})</text>')
    if sy_th is not None:
        th_max = max(th_vals) * 1.1
        parts.append(f'<line x1="{right}" y1="{top}" x2="{right}" y2="{bottom}" stroke="black"/>')
        for i in range(5):
            v = th_max * i / 4
            parts.append(f'<text x="{right + 6}" y="{sy_th(v) + 3:.1f}" font-size="10">{v:.3g}</text>')
        parts.append(f'<text x="{W - 14}" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
                     f'transform="rotate(90 {W - 14} {(top + bottom) / 2:.1f})">theoretical bound</text>')

    def polyline(series, scale_y, color, dashed):
        pts = " ".join(f"{sx(x):.2f},{scale_y(y):.2f}" for x, y in series)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>'

    legend_y = top + 8
    for strategy, series in empirical.items():
        parts.append(polyline(series, sy, STRATEGY_COLORS[strategy], False))
        parts.append(f'<text x="{left + 10}" y="{legend_y}" font-size="11" fill="{STRATEGY_COLORS[strategy]}">'
                     f'{strategy}-source (empirical)</text>')
        legend_y += 14
    for strategy, series in theory.items():
        parts.append(polyline(series, sy_th, STRATEGY_COLORS[strategy], True))
        parts.append(f'<text x="{left + 10}" y="{legend_y}" font-size="11" fill="{STRATEGY_COLORS[strategy]}">'
                     f'{strategy}-source (theory, dashed)</text>')
        legend_y += 14
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(parts) + "\n")
