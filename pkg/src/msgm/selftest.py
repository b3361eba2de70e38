"""Release gate: every module's invariants checked at fixed seeds in under a minute."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import arm, bounds, bracketing, gaussian
from .core import STREAM_SELFTEST, RngStream, SourceWeights

SELFTEST_SEED = 20240601


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float


def _check_core(rng: RngStream):
    a = rng.child(1).generator().random(8)
    b = rng.child(1).generator().random(8)
    c = rng.child(2).generator().random(8)
    ok = np.array_equal(a, b) and not np.array_equal(a, c)
    try:
        SourceWeights([0.5, 0.6])
        ok = False
    except ValueError:
        pass
    return ok, "stream replay is exact, sibling streams differ, bad weights rejected"


def _check_gaussian_tv(rng: RngStream):
    gen = rng.generator()
    for _ in range(50):
        a, b = gen.normal(size=5) * 2, gen.normal(size=5) * 2
        t_ab, t_ba = gaussian.tv_exact_pair(a, b), gaussian.tv_exact_pair(b, a)
        if not (0.0 <= t_ab <= 1.0 and t_ab == t_ba and gaussian.tv_exact_pair(a, a) == 0.0):
            return False, f"range/symmetry broken at {a}, {b}"
    return True, "TV symmetric, in [0, 1], zero on the diagonal"


def _check_gaussian_fit(rng: RngStream):
    truth = gaussian.make_sim_family(3, 6, 0.5)
    ds = gaussian.sample_dataset(truth, SourceWeights.uniform(3), 300, rng)
    multi = gaussian.fit_multi(ds, truth.d1)
    single = gaussian.fit_single(ds, truth.d1)
    pooled = np.asarray(ds.x)[:, truth.d1:].mean(axis=0)
    ok = np.allclose(multi.psi, pooled) and np.allclose(multi.phi, single.phi)
    return ok, "multi pools the shared block; both strategies agree on the source block"


def _check_monte_carlo(rng: RngStream):
    truth = gaussian.make_sim_family(3, 4, 0.5)
    est = gaussian.GaussianFamily(4, truth.d1, 3, truth.phi + 0.3, truth.psi - 0.2, "multi_estimate")
    w = SourceWeights.uniform(3)
    exact = gaussian.avg_tv_exact(est, truth, w)
    mc, se = gaussian.tv_monte_carlo(est, truth, w, 40000, rng, return_stderr=True)
    return abs(mc - exact) <= 4 * se, f"exact {exact:.5f}, monte carlo {mc:.5f} ± {se:.5f}"


def _random_bound_params(gen, instantiation: str):
    n = int(gen.integers(1, 10**6))
    K = int(gen.integers(1, 20))
    B = float(gen.uniform(0.1, 10))
    delta = float(gen.uniform(0.01, 0.5))
    if instantiation == "gaussian":
        d = int(gen.integers(1, 50))
        return bounds.GaussianBoundParams(n, K, d, int(gen.integers(0, d + 1)), B, delta)
    L, W, de = int(gen.integers(1, 8)), int(gen.integers(1, 128)), int(gen.integers(1, 64))
    S = int(gen.integers(1, 10**5))
    if instantiation == "arm":
        return bounds.ArmBoundParams(n, K, int(gen.integers(1, 30)), int(gen.integers(2, 50)), de, L, W, S, B,
                                     delta)
    return bounds.EbmBoundParams(n, K, de, L, W, S, B, delta)


def _check_bound_ordering(rng: RngStream):
    """Multi-source log bracketing never exceeds single-source."""
    gen = rng.generator()
    for inst in bounds.INSTANTIATIONS:
        f = bounds.LOG_BRACKETING_FUNCS[inst]
        for _ in range(300):
            p = _random_bound_params(gen, inst)
            if f(p, "multi") > f(p, "single"):
                return False, f"{inst}: multi > single at {p}"
    return True, "multi <= single for 300 tuples per instantiation"


def _check_gaussian_bracket(rng: RngStream):
    gen = rng.generator()
    over = 0
    for trial in range(15):
        K, d = int(gen.integers(1, 6)), int(gen.integers(1, 8))
        d1 = int(gen.integers(0, d + 1))
        B = float(gen.uniform(0.5, 5))
        eps = float(gen.choice([1.0, 0.5, 0.1, 1 / 500]))
        fam = gaussian.GaussianFamily(d, d1, K, gen.uniform(-B, B, (K, d1)), gen.uniform(-B, B, d - d1))
        elem = bracketing.gaussian_bracket_cover(fam, B=B, eps=eps)
        rep = bracketing.gaussian_bracket_verify(elem, fam, 2000, rng.child(trial))
        if rep.dominance_violations:
            return False, f"trial {trial}: {rep.as_dict()}"
        # the eps/(1+d) grid keeps the gap within eps only for eps <= 0.1 at every d <= 10
        if rep.exact_l1_gap > eps:
            if eps <= 0.1:
                return False, f"trial {trial}: gap {rep.exact_l1_gap:.6g} > eps {eps:g}"
            over += 1
    log_n, _ = bracketing.gaussian_bracket_count(2, 1, 1, 1.0, 0.5)
    if round(math.exp(log_n)) != 81:
        return False, f"(K=2,d=1,d1=1,B=1,eps=0.5) count {math.exp(log_n)} != 81"
    return True, (f"15 random brackets dominate; gap <= eps whenever eps <= 0.1 "
                  f"({over} large-eps brackets exceed eps); small bracket has 81 elements")


def _check_ebm_bracket(rng: RngStream):
    gen = rng.generator()
    for trial in range(10):
        u = bracketing.random_piecewise_linear_energy(gen)
        eps_u = float(gen.choice([0.01, 0.1, 0.25]))
        rep = bracketing.ebm_bracket_verify_1d(u, eps_u, rng.child(trial))
        if not rep.valid:
            return False, f"trial {trial}: {rep.as_dict()}"
    return True, "10 random 1-D energies: dominance at every node, gap within the guarantee"


def _check_constant_bracket(rng: RngStream):
    for i, eps in enumerate((1.0, 0.3, 0.01)):
        rep = bracketing.constant_bracket_verify(eps, 1000, rng.child(i))
        if not rep.valid:
            return False, f"eps={eps}: {rep.as_dict()}"
    return True, "constant-level bracket dominates with gap <= eps"


def _check_mlp_lemmas(rng: RngStream):
    worst = {kind: bracketing.mlp_lemma_check(kind, 4, 16, 3.0, 300, rng.child(i), random_sizes=True)
             for i, kind in enumerate(bracketing.LEMMA_KINDS)}
    ok = all(r <= 1 + 1e-9 for r in worst.values())
    return ok, ", ".join(f"{k} max ratio {v:.3g}" for k, v in worst.items())


def _check_arm_normalization(rng: RngStream):
    cfg = arm.ArmConfig(M=2, D=8, K=3, de=4, L=3, W=8)
    for trial in range(10):
        p = arm.init_params(cfg, rng.child(trial))
        for y in (1, 3):
            total = arm.enumerate_distribution(p, y).sum()
            if abs(total - 1.0) > 1e-9:
                return False, f"trial {trial}, source {y}: mass {total!r}"
    return True, "enumerated conditionals sum to 1 within 1e-9"


def _check_arm_masking(rng: RngStream):
    cfg = arm.ArmConfig(M=3, D=6, K=2, de=4, L=2, W=8)
    gen = rng.generator()
    p = arm.init_params(cfg, rng.child(0))
    for _ in range(20):
        x = gen.integers(0, 3, 6)
        y = int(gen.integers(1, 3))
        for pos in range(1, 7):
            base = arm.forward_position(p, x, y, pos)
            x2 = x.copy()
            x2[pos - 1:] = gen.integers(0, 3, 6 - pos + 1)
            if not np.array_equal(base, arm.forward_position(p, x2, y, pos)):
                return False, f"position {pos} depends on a later token"
    return True, "no position depends on its own or later tokens"


def _check_arm_gradient(rng: RngStream):
    cfg = arm.ArmConfig(M=2, D=4, K=2, de=3, L=2, W=4)
    gen = rng.generator()
    p = arm.init_params(cfg, rng.child(0))
    X, Y = gen.integers(0, 2, (6, 4)), gen.integers(1, 3, 6)
    err = arm.gradient_check(p, X, Y)
    return err < 1e-4, f"max relative error {err:.2e}"


def _check_arm_training(rng: RngStream):
    cfg = arm.ArmConfig(M=2, D=4, K=1, de=3, L=2, W=8)
    truths = arm.make_truth_tables(1, 2, 4, 1.0, rng.child(0))
    ds = arm.sample_sequences(truths, SourceWeights.uniform(1), 500, rng.child(1))
    init = arm.init_params(cfg, rng.child(2))
    a = arm.train(init, ds, 0.2, 50, 200, rng.child(3))
    b = arm.train(init, ds, 0.2, 50, 200, rng.child(3))
    same = all(np.array_equal(u, v) for u, v in zip(a.arrays(), b.arrays()))
    before, after = arm.mean_nll(init, ds.x, ds.y), arm.mean_nll(a, ds.x, ds.y)
    return same and after <= before, f"deterministic replay, NLL {before:.4f} -> {after:.4f}"


CHECKS = [
    ("core", "stream reproducibility", _check_core),
    ("gaussian", "exact TV properties", _check_gaussian_tv),
    ("gaussian", "fit strategies", _check_gaussian_fit),
    ("gaussian", "monte carlo agrees with exact TV", _check_monte_carlo),
    ("bounds", "multi-source bracketing never exceeds single-source", _check_bound_ordering),
    ("bracketing", "gaussian bracket soundness", _check_gaussian_bracket),
    ("bracketing", "EBM 1-D bracket soundness", _check_ebm_bracket),
    ("bracketing", "constant bracket soundness", _check_constant_bracket),
    ("bracketing", "MLP lemma universality", _check_mlp_lemmas),
    ("arm", "normalization", _check_arm_normalization),
    ("arm", "masking/causality", _check_arm_masking),
    ("arm", "gradient vs finite differences", _check_arm_gradient),
    ("arm", "training determinism and descent", _check_arm_training),
]


def run_selftest(seed: int = SELFTEST_SEED) -> list[CheckResult]:
    root = RngStream(seed, (STREAM_SELFTEST,))
    results = []
    for i, (module, name, fn) in enumerate(CHECKS):
        start = time.perf_counter()
        try:
            passed, detail = fn(root.child(i))
        except Exception as exc:  # a crash is a failed property, reported like one
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(module, name, bool(passed), detail, time.perf_counter() - start))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'}  [{r.module}] {r.name}: {r.detail} ({r.seconds:.1f}s)"
             for r in results]
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} properties passed")
    return "\n".join(lines)
