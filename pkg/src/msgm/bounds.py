"""Closed-form error bounds, bracketing and covering numbers.

Every count is returned as a natural log; raw counts overflow for any
realistic network.  ``mode`` is ``"multi"`` (shared parameters pooled across
sources) or ``"single"`` (one independent model per source).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

INSTANTIATIONS = ("gaussian", "arm", "ebm")
STRATEGIES = ("multi", "single")


def _check_mode(mode: str):
    if mode not in STRATEGIES:
        raise ValueError(f"mode must be 'multi' or 'single', got {mode!r}")


def _check_delta(delta: float):
    if not 0.0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 1/2], got {delta}")


def _check_epsilon(eps: float):
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")


@dataclass(frozen=True)
class GaussianBoundParams:
    n: int
    K: int
    d: int
    d1: int
    B: float
    delta: float = 0.1
    epsilon: float | None = None  # None means 1/n

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.d < 1:
            raise ValueError("n, K and d must be positive")
        if not 0 <= self.d1 <= self.d:
            raise ValueError(f"d1={self.d1} outside [0, d={self.d}]")
        if not self.B > 0:
            raise ValueError("B must be positive")
        _check_delta(self.delta)
        _check_epsilon(self.eps)

    @property
    def eps(self) -> float:
        return 1.0 / self.n if self.epsilon is None else self.epsilon


@dataclass(frozen=True)
class ArmBoundParams:
    n: int
    K: int
    D: int
    M: int
    de: int
    L: int
    W: int
    S: int
    B: float
    delta: float = 0.1
    epsilon: float | None = None

    def __post_init__(self):
        for name in ("n", "K", "D", "de", "L", "W", "S"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not self.B > 0:
            raise ValueError("B must be positive")
        _check_delta(self.delta)
        _check_epsilon(self.eps)

    @property
    def eps(self) -> float:
        return 1.0 / self.n if self.epsilon is None else self.epsilon


@dataclass(frozen=True)
class EbmBoundParams:
    n: int
    K: int
    de: int
    L: int
    W: int
    S: int
    B: float
    delta: float = 0.1
    epsilon: float | None = None

    def __post_init__(self):
        for name in ("n", "K", "de", "L", "W", "S"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.B > 0:
            raise ValueError("B must be positive")
        _check_delta(self.delta)
        _check_epsilon(self.eps)

    @property
    def eps(self) -> float:
        return 1.0 / self.n if self.epsilon is None else self.epsilon


@dataclass(frozen=True)
class BoundValue:
    log_bracketing: float
    tv_bound: float

    def as_dict(self) -> dict:
        return {"log_bracketing": self.log_bracketing, "tv_bound": self.tv_bound}


def generic_mle_bound(log_N: float, n: int, delta: float) -> float:
    """High-probability average TV bound ``3 sqrt((log N + log(1/delta)) / n)``."""
    _check_delta(delta)
    if log_N < 0 or n < 1:
        raise ValueError("log_N must be nonnegative and n positive")
    return 3.0 * math.sqrt((log_N + math.log(1.0 / delta)) / n)


# -- Gaussian -----------------------------------------------------------------

def gaussian_exponent(K: int, d: int, d1: int, mode: str) -> int:
    _check_mode(mode)
    return (K - 1) * d1 + d if mode == "multi" else K * d


def gaussian_log_bracketing(p: GaussianBoundParams, mode: str) -> float:
    """``exponent * log(2 (1+d) B / eps + 1)`` from the grid bracket over means."""
    per_coord = math.log(2.0 * (1 + p.d) * p.B / p.eps + 1.0)
    return gaussian_exponent(p.K, p.d, p.d1, mode) * per_coord


def gaussian_bound(p: GaussianBoundParams, mode: str) -> BoundValue:
    p = replace(p, epsilon=None)
    log_n = gaussian_log_bracketing(p, mode)
    return BoundValue(log_n, generic_mle_bound(log_n, p.n, p.delta))


# -- MLP building blocks ----------------------------------------------------------

def _log_bvee(B: float) -> float:
    return math.log(max(B, 1.0))


def mlp_lipschitz_const(L: int, W: int, B: float) -> float:
    """Input Lipschitz constant ``(B W)^L`` of a ReLU MLP in sup-norm."""
    if L < 1 or W < 1 or not B > 0:
        raise ValueError("L, W must be >= 1 and B > 0")
    return float(B) ** L * float(W) ** L


def mlp_log_covering(eps: float, L: int, W: int, S: int, B: float) -> float:
    """Log sup-norm covering number of the MLP class at accuracy ``eps``.

    Grid step ``delta = eps / (L (B v 1)^(L-1) (W+1)^L)`` on every nonzero
    parameter gives ``(2B/delta + 1)^S`` networks.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if L < 1 or W < 1 or S < 1 or not B > 0:
        raise ValueError("invalid MLP class sizes")
    log_two_b_over_delta = (math.log(2.0 * B) + math.log(L) + (L - 1) * _log_bvee(B)
                            + L * math.log(W + 1) - math.log(eps))
    return S * float(np.logaddexp(log_two_b_over_delta, 0.0))


# -- autoregressive ---------------------------------------------------------------

def arm_exponent(p: ArmBoundParams, mode: str) -> int:
    _check_mode(mode)
    if mode == "multi":
        return p.S + p.D + (p.D + p.M + p.K) * p.de
    return p.K * (p.S + p.D + (p.D + p.M + 1) * p.de)


def arm_log_bracketing(p: ArmBoundParams, mode: str) -> float:
    """Logit-space cover at ``eps / (8 e D)`` pushed through the softmax chain."""
    log_base = (math.log(24.0) + 1.0 + math.log(p.D) + math.log(p.L + 3)
                + (p.L + 2) * _log_bvee(p.B) + p.L * math.log(p.W + 1) - math.log(p.eps))
    return arm_exponent(p, mode) * log_base


def arm_bound(p: ArmBoundParams, mode: str) -> BoundValue:
    p = replace(p, epsilon=None)
    log_n = arm_log_bracketing(p, mode)
    return BoundValue(log_n, generic_mle_bound(log_n, p.n, p.delta))


# -- energy-based -------------------------------------------------------------------

def ebm_exponent(p: EbmBoundParams, mode: str) -> int:
    _check_mode(mode)
    return p.S + p.K * p.de if mode == "multi" else p.K * (p.S + p.de)


def ebm_log_bracketing(p: EbmBoundParams, mode: str) -> float:
    """Energy cover at ``eps / (4e)``; the shifted-energy bracket inherits its size."""
    log_base = (math.log(12.0) + 1.0 + math.log(p.L + 1) + (p.L + 1) * _log_bvee(p.B)
                + p.L * math.log(p.W + 1) - math.log(p.eps))
    return ebm_exponent(p, mode) * log_base


def ebm_bound(p: EbmBoundParams, mode: str) -> BoundValue:
    p = replace(p, epsilon=None)
    log_n = ebm_log_bracketing(p, mode)
    return BoundValue(log_n, generic_mle_bound(log_n, p.n, p.delta))


# -- similarity and advantage ---------------------------------------------------------

def _get(params, name):
    return params[name] if isinstance(params, dict) else getattr(params, name)


def beta_sim(instantiation: str, params) -> float:
    """Fraction of shared parameters for the given model family."""
    if instantiation == "gaussian":
        d, d1 = _get(params, "d"), _get(params, "d1")
        if d <= 0:
            raise ValueError("d must be positive")
        return (d - d1) / d
    if instantiation == "arm":
        S, D, M, K, de = (_get(params, k) for k in ("S", "D", "M", "K", "de"))
        shared = S + D + (D + M) * de
        total = S + D + (D + M + K) * de + de
        if total <= 0:
            raise ValueError("empty parameter count")
        return shared / total
    if instantiation == "ebm":
        S, de = _get(params, "S"), _get(params, "de")
        if S + de <= 0:
            raise ValueError("S + de must be positive")
        return S / (S + de)
    raise ValueError(f"unknown instantiation {instantiation!r}")


def advantage_ratio(K: int, beta: float) -> float:
    """Multi/single bound ratio ``sqrt(1 - (K-1)/K * beta)``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return math.sqrt(1.0 - (K - 1) / K * beta)


def scaling_rate(instantiation: str, mode: str, params) -> float:
    """Constant-free order of the error, ``sqrt(complexity / n)``."""
    _check_mode(mode)
    n = _get(params, "n")
    if instantiation == "gaussian":
        size = gaussian_exponent(_get(params, "K"), _get(params, "d"), _get(params, "d1"), mode)
    elif instantiation == "arm":
        size = _get(params, "L") * arm_exponent(params, mode)
    elif instantiation == "ebm":
        size = _get(params, "L") * ebm_exponent(params, mode)
    else:
        raise ValueError(f"unknown instantiation {instantiation!r}")
    return math.sqrt(size / n)


PARAM_TYPES = {"gaussian": GaussianBoundParams, "arm": ArmBoundParams, "ebm": EbmBoundParams}
BOUND_FUNCS = {"gaussian": gaussian_bound, "arm": arm_bound, "ebm": ebm_bound}
LOG_BRACKETING_FUNCS = {"gaussian": gaussian_log_bracketing, "arm": arm_log_bracketing,
                        "ebm": ebm_log_bracketing}
