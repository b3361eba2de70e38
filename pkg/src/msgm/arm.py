"""Conditional autoregressive model over token sequences in ``{0..M-1}^D``.

Pipeline per position ``d``: look up the source row of ``V_Y`` and the token
rows of ``V_X`` for ``x_1..x_{D-1}``, encode each row to a scalar with a
per-position affine map and a sigmoid, zero every scalar from position
``d+1`` on, run the MLP and take a softmax over the ``M`` symbols.

Tokens are 0-based; source labels are 1-based.  Gradients are derived by
hand (no autodiff) and checked against finite differences in the tests.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledDataset, RngStream, SourceWeights, as_weight_vector, sample_labels

log = logging.getLogger(__name__)

MAX_SUPPORT = 2**21
_CHUNK = 1 << 15


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class ArmConfig:
    M: int
    D: int
    K: int
    de: int
    L: int
    W: int

    def __post_init__(self):
        if self.M < 2 or self.D < 1 or self.K < 1 or self.de < 1 or self.L < 1 or self.W < 1:
            raise ValueError(f"invalid ARM configuration {self}")

    @property
    def widths(self) -> list[int]:
        return [self.D] + [self.W] * (self.L - 1) + [self.M]

    @property
    def support_size(self) -> int:
        return self.M**self.D


@dataclass(frozen=True)
class ArmParams:
    V_Y: np.ndarray  # (K, de)
    V_X: np.ndarray  # (M, de)
    A0: np.ndarray   # (D, de)
    b0: np.ndarray   # (D,)
    layers: tuple    # ((A, b), ...) with A of shape (out, in)

    @property
    def config(self) -> ArmConfig:
        K, de = self.V_Y.shape
        return ArmConfig(M=self.V_X.shape[0], D=self.A0.shape[0], K=K, de=de,
                         L=len(self.layers), W=max([1] + [a.shape[0] for a, _ in self.layers[:-1]]))

    def arrays(self) -> list[np.ndarray]:
        out = [self.V_Y, self.V_X, self.A0, self.b0]
        for a, b in self.layers:
            out += [a, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "ArmParams":
        arrays = list(arrays)
        rest = arrays[4:]
        return cls(*arrays[:4], tuple((rest[i], rest[i + 1]) for i in range(0, len(rest), 2)))

    def mlp_param_count(self) -> int:
        return int(sum(a.size + b.size for a, b in self.layers))

    def copy(self) -> "ArmParams":
        return ArmParams.from_arrays([a.copy() for a in self.arrays()])


def init_params(cfg: ArmConfig, rng: RngStream) -> ArmParams:
    """Embeddings uniform on [0, 1]; affine weights uniform on ±1/sqrt(fan_in)."""
    gen = rng.generator()
    V_Y = gen.uniform(0.0, 1.0, (cfg.K, cfg.de))
    V_X = gen.uniform(0.0, 1.0, (cfg.M, cfg.de))
    s0 = 1.0 / math.sqrt(cfg.de)
    A0 = gen.uniform(-s0, s0, (cfg.D, cfg.de))
    b0 = gen.uniform(-s0, s0, cfg.D)
    widths = cfg.widths
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        s = 1.0 / math.sqrt(fan_in)
        layers.append((gen.uniform(-s, s, (fan_out, fan_in)), gen.uniform(-s, s, fan_out)))
    return ArmParams(V_Y, V_X, A0, b0, tuple(layers))


def zero_mlp(params: ArmParams) -> ArmParams:
    return ArmParams(params.V_Y, params.V_X, params.A0, params.b0,
                     tuple((np.zeros_like(a), np.zeros_like(b)) for a, b in params.layers))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _causal_mask(D: int) -> np.ndarray:
    # row p (position p+1) sees encoded slots 0..p
    return np.tril(np.ones((D, D)))


def _check_inputs(params: ArmParams, X: np.ndarray, Y: np.ndarray):
    cfg = params.config
    if X.ndim != 2 or X.shape[1] != cfg.D:
        raise ValueError(f"expected token sequences of length {cfg.D}")
    if X.size and (X.min() < 0 or X.max() >= cfg.M):
        raise ValueError(f"tokens must lie in 0..{cfg.M - 1}")
    if Y.size and (Y.min() < 1 or Y.max() > cfg.K):
        raise ValueError(f"source labels must lie in 1..{cfg.K}")


def _forward(params: ArmParams, X: np.ndarray, Y: np.ndarray):
    n, D = X.shape
    E = np.empty((n, D, params.V_Y.shape[1]))
    E[:, 0] = params.V_Y[Y - 1]
    E[:, 1:] = params.V_X[X[:, : D - 1]]
    v = _sigmoid(np.einsum("nje,je->nj", E, params.A0) + params.b0)
    mask = _causal_mask(D)
    h = (v[:, None, :] * mask[None]).reshape(n * D, D)
    inputs, pre = [h], []
    for i, (a, b) in enumerate(params.layers):
        z = h @ a.T + b
        pre.append(z)
        if i < len(params.layers) - 1:
            h = np.maximum(z, 0.0)
            inputs.append(h)
    logp = _log_softmax(pre[-1]).reshape(n, D, -1)
    return logp, (E, v, mask, inputs, pre)


def position_log_probs(params: ArmParams, X, Y) -> np.ndarray:
    """``(n, D, M)`` log conditional probabilities of every symbol at every position."""
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    Y = np.atleast_1d(np.asarray(Y, dtype=np.int64))
    _check_inputs(params, X, Y)
    return _forward(params, X, Y)[0]


def forward_position(params: ArmParams, x, y: int, pos: int) -> np.ndarray:
    """Distribution of token ``pos`` (1-based) given the earlier tokens and source ``y``."""
    D = params.A0.shape[0]
    if not 1 <= pos <= D:
        raise ValueError(f"position {pos} outside [1, {D}]")
    return np.exp(position_log_probs(params, [x], [y])[0, pos - 1])


def log_prob(params: ArmParams, X, Y) -> np.ndarray | float:
    """Sequence log-likelihood ``sum_d log p(x_d | x_<d, y)``; scalar for one sequence."""
    X_arr = np.asarray(X, dtype=np.int64)
    single = X_arr.ndim == 1
    X_arr = np.atleast_2d(X_arr)
    Y_arr = np.broadcast_to(np.asarray(Y, dtype=np.int64), (X_arr.shape[0],))
    lp = position_log_probs(params, X_arr, Y_arr)
    out = np.take_along_axis(lp, X_arr[:, :, None], axis=2)[..., 0].sum(axis=1)
    return float(out[0]) if single else out


def mean_nll(params: ArmParams, X, Y) -> float:
    X = np.asarray(X, dtype=np.int64)
    total = 0.0
    for s in range(0, X.shape[0], _CHUNK):
        total -= float(np.sum(log_prob(params, X[s:s + _CHUNK], np.asarray(Y)[s:s + _CHUNK])))
    return total / X.shape[0]


def nll_and_grad(params: ArmParams, X, Y) -> tuple[float, ArmParams]:
    """Mean negative log-likelihood over the batch and its gradient."""
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    _check_inputs(params, X, Y)
    n, D = X.shape
    logp, (E, v, mask, inputs, pre) = _forward(params, X, Y)
    picked = np.take_along_axis(logp, X[:, :, None], axis=2)[..., 0]
    loss = -float(picked.sum()) / n

    g = np.exp(logp)
    np.put_along_axis(g, X[:, :, None], np.take_along_axis(g, X[:, :, None], axis=2) - 1.0, axis=2)
    g = g.reshape(n * D, -1) / n
    layer_grads = []
    for i in range(len(params.layers) - 1, -1, -1):
        a, _ = params.layers[i]
        layer_grads.append((g.T @ inputs[i], g.sum(axis=0)))
        g = g @ a
        if i > 0:
            g = g * (pre[i - 1] > 0)
    layer_grads.reverse()

    dv = np.sum(g.reshape(n, D, D) * mask[None], axis=1)
    dz = dv * v * (1.0 - v)
    dA0 = np.einsum("nj,nje->je", dz, E)
    db0 = dz.sum(axis=0)
    dE = dz[:, :, None] * params.A0[None]
    dV_Y = np.zeros_like(params.V_Y)
    np.add.at(dV_Y, Y - 1, dE[:, 0])
    dV_X = np.zeros_like(params.V_X)
    np.add.at(dV_X, X[:, : D - 1].ravel(), dE[:, 1:].reshape(-1, dE.shape[2]))
    return loss, ArmParams(dV_Y, dV_X, dA0, db0, tuple(layer_grads))


def grad_nll(params: ArmParams, X, Y) -> ArmParams:
    return nll_and_grad(params, X, Y)[1]


def gradient_check(params: ArmParams, X, Y, step: float = 1e-5, floor: float = 1e-7) -> float:
    """Max relative error of :func:`grad_nll` against central finite differences.

    Relative error is ``|fd - g| / max(|fd|, |g|, floor)``; the floor keeps
    coordinates whose true gradient is zero from dividing round-off by zero.
    """
    analytic = grad_nll(params, X, Y).arrays()
    arrays = params.arrays()
    worst = 0.0
    for i, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            bumped = [x.copy() for x in arrays]
            bumped[i][idx] += step
            up = mean_nll(ArmParams.from_arrays(bumped), X, Y)
            bumped[i][idx] -= 2 * step
            down = mean_nll(ArmParams.from_arrays(bumped), X, Y)
            fd = (up - down) / (2 * step)
            g = analytic[i][idx]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), floor))
    return worst


def train(init: ArmParams, ds: LabeledDataset, lr: float, batch_size: int, iters: int,
          rng: RngStream) -> ArmParams:
    """Plain minibatch gradient descent on the mean NLL.

    Batches are drawn with replacement from ``rng``.  A non-finite loss raises
    :class:`TrainingDiverged`.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = np.asarray(ds.x, dtype=np.int64)
    Y = ds.y
    gen = rng.generator()
    arrays = [a.copy() for a in init.arrays()]
    if lr == 0 or iters == 0:
        return ArmParams.from_arrays(arrays)
    start = mean_nll(init, X, Y)
    for it in range(iters):
        idx = gen.integers(0, len(ds), size=min(batch_size, len(ds)))
        loss, grad = nll_and_grad(ArmParams.from_arrays(arrays), X[idx], Y[idx])
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at iteration {it} (lr={lr}, batch={batch_size})")
        for a, g in zip(arrays, grad.arrays()):
            a -= lr * g
    out = ArmParams.from_arrays(arrays)
    end = mean_nll(out, X, Y)
    if not math.isfinite(end):
        raise TrainingDiverged(f"non-finite final training loss (lr={lr}, batch={batch_size})")
    if end > start:
        log.warning("training NLL rose from %.4f to %.4f", start, end)
    log.debug("training NLL %.4f -> %.4f over %d iterations", start, end, iters)
    return out


# -- exact evaluation over the finite support ---------------------------------------

def all_sequences(M: int, D: int) -> np.ndarray:
    """Every sequence in lexicographic order; row ``i`` spells ``i`` in base ``M``."""
    if M**D > MAX_SUPPORT:
        raise ValueError(f"support {M}^{D} exceeds the enumeration guard {MAX_SUPPORT}")
    idx = np.arange(M**D)
    powers = M ** np.arange(D - 1, -1, -1)
    return (idx[:, None] // powers) % M


def sequence_index(X, M: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    powers = M ** np.arange(X.shape[1] - 1, -1, -1)
    return X @ powers


def enumerate_distribution(params: ArmParams, y: int) -> np.ndarray:
    """Probability of every sequence under source ``y``, in :func:`all_sequences` order."""
    cfg = params.config
    seqs = all_sequences(cfg.M, cfg.D)
    out = np.empty(seqs.shape[0])
    for s in range(0, seqs.shape[0], _CHUNK):
        chunk = seqs[s:s + _CHUNK]
        out[s:s + _CHUNK] = np.exp(log_prob(params, chunk, np.full(chunk.shape[0], y)))
    return out


@dataclass(frozen=True)
class CategoricalTable:
    probabilities: np.ndarray
    M: int
    D: int

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.shape != (self.M**self.D,):
            raise ValueError("table size must be M^D")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("table must be a probability vector")
        object.__setattr__(self, "probabilities", p)


def make_truth_tables(K: int, M: int, D: int, concentration: float, rng: RngStream) -> list[CategoricalTable]:
    """``K`` independent symmetric-Dirichlet tables over ``[M]^D``."""
    if M**D > MAX_SUPPORT:
        raise ValueError(f"support {M}^{D} exceeds the enumeration guard {MAX_SUPPORT}")
    if not concentration > 0:
        raise ValueError("concentration must be positive")
    gen = rng.generator()
    tables = []
    for _ in range(K):
        p = gen.dirichlet(np.full(M**D, float(concentration)))
        tables.append(CategoricalTable(p / p.sum(), M, D))
    return tables


def sample_sequences(truths: list[CategoricalTable], w: SourceWeights, n: int, rng: RngStream) -> LabeledDataset:
    """Draw labels from ``w`` and then each sequence from its source's table."""
    K = len(truths)
    M, D = truths[0].M, truths[0].D
    gen = rng.generator()
    y = sample_labels(w, n, gen)
    idx = np.empty(n, dtype=np.int64)
    for k in range(1, K + 1):
        where = np.flatnonzero(y == k)
        if where.size:
            idx[where] = gen.choice(M**D, size=where.size, p=truths[k - 1].probabilities)
    powers = M ** np.arange(D - 1, -1, -1)
    return LabeledDataset((idx[:, None] // powers) % M, y, K)


def source_distribution(model, k: int) -> np.ndarray:
    """Enumerated ``p(. | k)`` from one shared model or from a list of per-source models."""
    if isinstance(model, ArmParams):
        return enumerate_distribution(model, k)
    sub = model[k - 1]
    return enumerate_distribution(sub, 1 if sub.config.K == 1 else k)


def exact_avg_tv(model, truths: list[CategoricalTable], w) -> float:
    """Source-weighted TV distance between the model's conditionals and the truth tables."""
    weights = as_weight_vector(w, len(truths))
    total = 0.0
    for k, table in enumerate(truths, start=1):
        p_hat = source_distribution(model, k)
        if p_hat.shape != table.probabilities.shape:
            raise ValueError("model and truth supports differ")
        total += weights[k - 1] * 0.5 * float(np.abs(p_hat - table.probabilities).sum())
    return total
