import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgm import bounds
from msgm.bounds import (ArmBoundParams, EbmBoundParams, GaussianBoundParams, advantage_ratio, arm_exponent,
                         beta_sim, ebm_exponent, gaussian_bound, gaussian_log_bracketing, generic_mle_bound,
                         mlp_lipschitz_const, mlp_log_covering)


def _oracle_gaussian_bound(exponent: int) -> float:
    # independent arbitrary-precision evaluation of 3 sqrt((e * ln(2*11*5*500 + 1) + ln 10) / 500)
    with mpmath.workdps(40):
        return float(3 * mpmath.sqrt((exponent * mpmath.log(55001) + mpmath.log(10)) / 500))


WORKED_EXAMPLE = GaussianBoundParams(n=500, K=5, d=10, d1=5, B=5, delta=0.1)


def test_generic_bound_plug_in():
    assert generic_mle_bound(0.0, 9, 1 / math.e) == pytest.approx(1.0, abs=1e-15)


def test_generic_bound_doubling_log_n():
    a = generic_mle_bound(1e6, 100, 0.1)
    b = generic_mle_bound(2e6, 100, 0.1)
    assert b / a == pytest.approx(math.sqrt(2), rel=0.01)


def test_generic_bound_at_hand_log_n():
    assert generic_mle_bound(329.75 - 2.303, 500, 0.1) == pytest.approx(2.436, abs=5e-4)


@pytest.mark.parametrize("delta", [0.0, 0.51, 1.0])
def test_generic_bound_rejects_delta(delta):
    with pytest.raises(ValueError):
        generic_mle_bound(1.0, 10, delta)


def test_generic_bound_monotone():
    assert generic_mle_bound(2.0, 10, 0.1) > generic_mle_bound(1.0, 10, 0.1)
    assert generic_mle_bound(2.0, 20, 0.1) < generic_mle_bound(2.0, 10, 0.1)


def test_gaussian_log_bracketing_small_grid():
    p = GaussianBoundParams(n=1, K=2, d=1, d1=1, B=1, epsilon=0.5)
    assert gaussian_log_bracketing(p, "multi") == pytest.approx(2 * math.log(9), abs=1e-12)
    assert gaussian_log_bracketing(p, "multi") == pytest.approx(4.3944, abs=1e-4)


def test_gaussian_fully_shared_exponent_ignores_k():
    a = GaussianBoundParams(n=50, K=2, d=4, d1=0, B=2)
    b = GaussianBoundParams(n=50, K=9, d=4, d1=0, B=2)
    assert gaussian_log_bracketing(a, "multi") == gaussian_log_bracketing(b, "multi")
    assert gaussian_log_bracketing(a, "multi") == pytest.approx(4 * math.log(2 * 5 * 2 * 50 + 1))


def test_gaussian_bound_matches_oracle():
    multi = gaussian_bound(WORKED_EXAMPLE, "multi").tv_bound
    single = gaussian_bound(WORKED_EXAMPLE, "single").tv_bound
    assert multi == pytest.approx(_oracle_gaussian_bound(30), abs=1e-6)
    assert single == pytest.approx(_oracle_gaussian_bound(50), abs=1e-6)
    assert round(multi, 3) == 2.436
    assert round(single, 3) == 3.141


def test_gaussian_bound_ratio_example():
    ratio = gaussian_bound(WORKED_EXAMPLE, "multi").tv_bound / gaussian_bound(WORKED_EXAMPLE, "single").tv_bound
    # the quoted 0.7756 is truncated; the value is 0.77568
    assert ratio == pytest.approx(0.7756, abs=1e-4)
    assert ratio == pytest.approx(math.sqrt(30 / 50), abs=2e-3)


def _ratio_gap(n: int) -> float:
    p = GaussianBoundParams(n=n, K=5, d=10, d1=5, B=5, delta=0.1)
    ratio = gaussian_bound(p, "multi").tv_bound / gaussian_bound(p, "single").tv_bound
    return abs(ratio - advantage_ratio(5, 0.5))


@pytest.mark.xfail(strict=True, reason="log(1/delta) term decays only like 1/log n; gap at n=1e9 is ~5e-4")
def test_ratio_consistency_at_one_billion():
    assert _ratio_gap(10**9) < 1e-6


def test_ratio_converges_to_advantage_ratio():
    gaps = [_ratio_gap(10**k) for k in (3, 6, 9, 12, 15)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 5e-4


def test_arm_exponent_example():
    p = ArmBoundParams(n=100, K=5, D=10, M=2, de=64, L=3, W=16, S=1000, B=1)
    assert arm_exponent(p, "multi") == 2098


@pytest.mark.parametrize("K", [1, 2, 7])
def test_arm_exponent_linear_in_k(K):
    p = ArmBoundParams(n=100, K=K, D=10, M=3, de=8, L=3, W=16, S=500, B=1)
    q = ArmBoundParams(n=100, K=K + 1, D=10, M=3, de=8, L=3, W=16, S=500, B=1)
    assert arm_exponent(q, "multi") - arm_exponent(p, "multi") == 8
    assert arm_exponent(q, "single") - arm_exponent(p, "single") == 500 + 10 + (10 + 3 + 1) * 8


def test_single_source_exponents_coincide():
    a = ArmBoundParams(n=100, K=1, D=10, M=2, de=64, L=3, W=16, S=1000, B=1)
    assert arm_exponent(a, "multi") == arm_exponent(a, "single") == 1000 + 10 + 13 * 64
    e = EbmBoundParams(n=100, K=1, de=50, L=2, W=8, S=100, B=1)
    assert ebm_exponent(e, "multi") == ebm_exponent(e, "single") == 150


def test_ebm_exponent_example():
    e = EbmBoundParams(n=100, K=4, de=50, L=2, W=8, S=100, B=1)
    assert ebm_exponent(e, "multi") == 300
    assert ebm_exponent(e, "single") == 600


def test_mlp_log_covering_single_layer():
    assert mlp_log_covering(2.0, 1, 1, 1, 1.0) == pytest.approx(math.log(3), abs=1e-15)


def test_mlp_log_covering_monotone_and_linear():
    vals = [mlp_log_covering(eps, 3, 16, 100, 2.0) for eps in (1e-4, 1e-2, 1.0, 10.0)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert mlp_log_covering(0.1, 3, 16, 300, 2.0) == pytest.approx(3 * mlp_log_covering(0.1, 3, 16, 100, 2.0))


def test_mlp_lipschitz_examples():
    assert mlp_lipschitz_const(2, 3, 2) == 36
    assert mlp_lipschitz_const(1, 1, 1) == 1
    assert mlp_lipschitz_const(3, 4, 1.5) <= mlp_lipschitz_const(3, 4, 2.0) <= mlp_lipschitz_const(3, 5, 2.0)
    assert mlp_lipschitz_const(3, 4, 2.0) <= mlp_lipschitz_const(4, 4, 2.0)


def test_beta_sim_examples():
    assert beta_sim("gaussian", {"d": 10, "d1": 5}) == 0.5
    assert beta_sim("ebm", {"S": 100, "de": 50}) == pytest.approx(2 / 3)
    arm = beta_sim("arm", {"S": 1000, "D": 10, "M": 2, "K": 5, "de": 64})
    assert arm == pytest.approx(1778 / 2162)
    assert round(arm, 4) == 0.8224


def test_advantage_ratio_examples():
    assert advantage_ratio(1, 0.7) == 1.0
    assert advantage_ratio(5, 1.0) == pytest.approx(0.44721, abs=1e-5)
    assert advantage_ratio(5, 0.5) == pytest.approx(0.77460, abs=1e-5)


def test_invalid_params():
    with pytest.raises(ValueError):
        GaussianBoundParams(n=10, K=2, d=3, d1=4, B=1)
    with pytest.raises(ValueError):
        GaussianBoundParams(n=10, K=2, d=3, d1=1, B=1, delta=0.6)
    with pytest.raises(ValueError):
        ArmBoundParams(n=10, K=2, D=3, M=1, de=2, L=1, W=1, S=1, B=1)
    with pytest.raises(ValueError):
        bounds.gaussian_exponent(2, 3, 1, "joint")


# -- properties ------------------------------------------------------------------------

sizes = st.integers(1, 200)
b_vals = st.floats(0.05, 20.0)
deltas = st.floats(0.001, 0.5)
eps_vals = st.floats(1e-6, 1.0)


@st.composite
def gaussian_params(draw):
    d = draw(st.integers(1, 60))
    return GaussianBoundParams(n=draw(st.integers(1, 10**7)), K=draw(st.integers(1, 30)), d=d,
                               d1=draw(st.integers(0, d)), B=draw(b_vals), delta=draw(deltas),
                               epsilon=draw(eps_vals))


@st.composite
def arm_params(draw):
    return ArmBoundParams(n=draw(st.integers(1, 10**7)), K=draw(st.integers(1, 30)), D=draw(sizes),
                          M=draw(st.integers(2, 100)), de=draw(sizes), L=draw(st.integers(1, 10)), W=draw(sizes),
                          S=draw(st.integers(1, 10**6)), B=draw(b_vals), delta=draw(deltas), epsilon=draw(eps_vals))


@st.composite
def ebm_params(draw):
    return EbmBoundParams(n=draw(st.integers(1, 10**7)), K=draw(st.integers(1, 30)), de=draw(sizes),
                          L=draw(st.integers(1, 10)), W=draw(sizes), S=draw(st.integers(1, 10**6)),
                          B=draw(b_vals), delta=draw(deltas), epsilon=draw(eps_vals))


PARAM_STRATEGIES = {"gaussian": gaussian_params(), "arm": arm_params(), "ebm": ebm_params()}


@pytest.mark.parametrize("instantiation", bounds.INSTANTIATIONS)
def test_multi_never_exceeds_single(instantiation):
    f = bounds.LOG_BRACKETING_FUNCS[instantiation]

    @settings(max_examples=1000, deadline=None)
    @given(PARAM_STRATEGIES[instantiation])
    def check(p):
        multi, single = f(p, "multi"), f(p, "single")
        assert multi <= single
        if p.K == 1 or (instantiation == "gaussian" and p.d1 == p.d):
            assert multi == pytest.approx(single, rel=1e-12)

    check()


FIELDS = {"gaussian": ("K", "d", "B"), "arm": ("K", "D", "M", "de", "L", "W", "S", "B"),
          "ebm": ("K", "de", "L", "W", "S", "B")}


@pytest.mark.parametrize("instantiation", bounds.INSTANTIATIONS)
def test_log_bracketing_monotone(instantiation):
    from dataclasses import replace
    f = bounds.LOG_BRACKETING_FUNCS[instantiation]

    @settings(max_examples=200, deadline=None)
    @given(PARAM_STRATEGIES[instantiation], st.sampled_from(["multi", "single"]))
    def check(p, mode):
        base = f(p, mode)
        for name in FIELDS[instantiation]:
            bumped = replace(p, **{name: getattr(p, name) + 1})
            assert f(bumped, mode) >= base * (1 - 1e-12)
        if instantiation == "gaussian" and p.d1 < p.d:
            assert f(replace(p, d1=p.d1 + 1), mode) >= base * (1 - 1e-12)
        assert f(replace(p, epsilon=p.eps / 2), mode) >= base

    check()


def test_no_overflow_at_extreme_sizes():
    a = ArmBoundParams(n=10**12, K=50, D=1000, M=50000, de=4096, L=100, W=10**5, S=10**9, B=5.0)
    e = EbmBoundParams(n=10**12, K=50, de=4096, L=100, W=10**5, S=10**9, B=5.0)
    g = GaussianBoundParams(n=10**12, K=50, d=10**6, d1=10**5, B=50.0)
    for value in (bounds.arm_bound(a, "single"), bounds.ebm_bound(e, "single"), gaussian_bound(g, "single")):
        assert math.isfinite(value.log_bracketing) and math.isfinite(value.tv_bound)
    assert math.isfinite(mlp_log_covering(1e-12, 100, 10**5, 10**9, 5.0))


def test_bound_value_nonnegative_and_default_epsilon():
    p = GaussianBoundParams(n=1000, K=3, d=4, d1=2, B=3, epsilon=0.5)
    v = gaussian_bound(p, "multi")
    # the bound always uses eps = 1/n regardless of the requested epsilon
    assert v.log_bracketing == gaussian_log_bracketing(GaussianBoundParams(n=1000, K=3, d=4, d1=2, B=3), "multi")
    assert v.log_bracketing >= 0 and v.tv_bound >= 0


def test_scaling_rate_order():
    p = {"n": 400, "K": 5, "d": 10, "d1": 5}
    assert bounds.scaling_rate("gaussian", "multi", p) == pytest.approx(math.sqrt(30 / 400))
    assert bounds.scaling_rate("gaussian", "single", p) == pytest.approx(math.sqrt(50 / 400))
