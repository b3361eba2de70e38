"""Conditional unit-covariance Gaussians with source-specific and shared mean blocks.

Source ``k`` has mean ``(phi_k, psi)``: the first ``d1`` coordinates belong to
the source, the remaining ``d - d1`` are shared.  Multi-source fitting pools
all data for the shared block; single-source fitting estimates each source's
full mean from its own samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import LabeledDataset, RngStream, SourceWeights, as_weight_vector, check_label, sample_labels

MODES = ("truth", "multi_estimate", "single_estimate")


@dataclass(frozen=True)
class GaussianFamily:
    d: int
    d1: int
    K: int
    phi: np.ndarray  # (K, d1)
    psi: np.ndarray  # (d - d1,) when shared, (K, d - d1) for single-source estimates
    mode: str = "truth"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.d1 <= self.d or self.d < 1 or self.K < 1:
            raise ValueError(f"invalid dimensions d={self.d}, d1={self.d1}, K={self.K}")
        phi = np.asarray(self.phi, dtype=np.float64).reshape(self.K, self.d1)
        psi = np.asarray(self.psi, dtype=np.float64)
        shared = self.d - self.d1
        if self.mode == "single_estimate":
            psi = psi.reshape(self.K, shared)
        else:
            psi = psi.reshape(shared)
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    def mean_of(self, k: int) -> np.ndarray:
        k = check_label(k, self.K)
        tail = self.psi[k - 1] if self.psi.ndim == 2 else self.psi
        return np.concatenate([self.phi[k - 1], tail])

    def means(self) -> np.ndarray:
        """All source means as a ``(K, d)`` array, row ``k-1`` for source ``k``."""
        tail = self.psi if self.psi.ndim == 2 else np.broadcast_to(self.psi, (self.K, self.d - self.d1))
        return np.hstack([self.phi, tail])


def sim_d1(d: int, beta_sim: float) -> int:
    if not 0.0 <= beta_sim <= 1.0:
        raise ValueError(f"beta_sim must lie in [0, 1], got {beta_sim}")
    # guard against 0.7 * 10 = 7.000000000000001 style float noise
    return d - int(math.floor(beta_sim * d + 1e-9))


def make_sim_family(K: int, d: int, beta_sim: float) -> GaussianFamily:
    """Ground truth with ``phi_k = k * ones(d1)`` and ``psi = 0``."""
    if K < 1 or d < 1:
        raise ValueError("K and d must be positive")
    d1 = sim_d1(d, beta_sim)
    phi = np.arange(1, K + 1, dtype=np.float64)[:, None] * np.ones((K, d1))
    return GaussianFamily(d, d1, K, phi, np.zeros(d - d1), "truth")


def sample_dataset(fam: GaussianFamily, w: SourceWeights, n: int, rng: RngStream) -> LabeledDataset:
    if fam.mode != "truth":
        raise ValueError("can only sample from a ground-truth family")
    if n == 0:
        return LabeledDataset(np.empty((0, fam.d)), np.empty(0, np.int64), fam.K)
    gen = rng.generator()
    y = sample_labels(w, n, gen)
    x = fam.means()[y - 1] + gen.standard_normal((n, fam.d))
    return LabeledDataset(x, y, fam.K)


def _per_source_means(ds: LabeledDataset, cols: slice) -> np.ndarray:
    counts = ds.counts
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"source {empty[0] + 1} has no samples; its estimate is undefined")
    x = np.asarray(ds.x, dtype=np.float64)[:, cols]
    sums = np.zeros((ds.K, x.shape[1]))
    np.add.at(sums, ds.y - 1, x)
    return sums / counts[:, None]


def fit_multi(ds: LabeledDataset, d1: int) -> GaussianFamily:
    """Per-source means on the first ``d1`` coordinates, pooled mean on the rest."""
    d = ds.x.shape[1]
    phi = _per_source_means(ds, slice(0, d1))
    psi = np.asarray(ds.x, dtype=np.float64)[:, d1:].mean(axis=0)
    return GaussianFamily(d, d1, ds.K, phi, psi, "multi_estimate")


def fit_single(ds: LabeledDataset, d1: int) -> GaussianFamily:
    """Every coordinate estimated from the source's own samples."""
    d = ds.x.shape[1]
    full = _per_source_means(ds, slice(0, d))
    return GaussianFamily(d, d1, ds.K, full[:, :d1], full[:, d1:], "single_estimate")


def conditional_loglik(fam: GaussianFamily, ds: LabeledDataset) -> float:
    """Sum over samples of ``log p(x_i | y_i)``."""
    x = np.asarray(ds.x, dtype=np.float64)
    resid = x - fam.means()[ds.y - 1]
    return float(-0.5 * np.sum(resid**2) - 0.5 * len(ds) * fam.d * math.log(2 * math.pi))


def tv_exact_pair(mu_a, mu_b) -> float:
    """TV distance between ``N(mu_a, I)`` and ``N(mu_b, I)``: ``2 Phi(|a-b|/2) - 1``."""
    a = np.asarray(mu_a, dtype=np.float64)
    b = np.asarray(mu_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mean length mismatch: {a.shape} vs {b.shape}")
    half = float(np.linalg.norm(a - b)) / 2.0
    # 2*Phi(t) - 1 == 1 - 2*Phi(-t), which keeps precision near 1
    return float(1.0 - 2.0 * ndtr(-half))


def _check_compatible(est: GaussianFamily, truth: GaussianFamily):
    if (est.K, est.d) != (truth.K, truth.d):
        raise ValueError(f"shape mismatch: estimate (K={est.K}, d={est.d}) vs truth (K={truth.K}, d={truth.d})")


def avg_tv_exact(est: GaussianFamily, truth: GaussianFamily, w) -> float:
    _check_compatible(est, truth)
    weights = as_weight_vector(w, truth.K)
    me, mt = est.means(), truth.means()
    return float(sum(weights[k] * tv_exact_pair(me[k], mt[k]) for k in range(truth.K)))


def tv_monte_carlo(est: GaussianFamily, truth: GaussianFamily, w: SourceWeights, n_test: int,
                   rng: RngStream, return_stderr: bool = False):
    """Importance-ratio estimate of the average TV error from ``n_test`` truth samples.

    Averages ``|p_est(x|y) / p_true(x|y) - 1| / 2`` over ``(x, y)`` drawn from the
    truth.  With ``return_stderr`` also returns the standard error of that mean.
    """
    _check_compatible(est, truth)
    if n_test < 1:
        raise ValueError("n_test must be at least 1")
    gen = rng.generator()
    y = sample_labels(w, n_test, gen)
    mu_true = truth.means()[y - 1]
    x = mu_true + gen.standard_normal((n_test, truth.d))
    mu_est = est.means()[y - 1]
    log_ratio = 0.5 * (np.sum((x - mu_true) ** 2, axis=1) - np.sum((x - mu_est) ** 2, axis=1))
    terms = 0.5 * np.abs(np.expm1(log_ratio))
    value = float(terms.mean())
    if not return_stderr:
        return value
    se = float(terms.std(ddof=1) / math.sqrt(n_test)) if n_test > 1 else float("inf")
    return value, se
