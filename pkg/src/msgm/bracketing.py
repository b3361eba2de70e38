"""Explicit upper-bracket constructions and numerical checks of their properties.

Three families are covered: the grid bracket for conditional Gaussians, the
constant-function toy bracket and the shifted-energy bracket in one dimension.
``mlp_lemma_check`` falsifies the sup-norm/Lipschitz inequalities on random
ReLU networks that the neural covering numbers are built from.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import trapezoid

from . import bounds
from .core import RngStream
from .gaussian import GaussianFamily

ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class BracketReport:
    dominance_violations: int
    exact_l1_gap: float
    epsilon: float
    log_cardinality: float | None = None
    n_probes: int = 0
    estimated: bool = False

    @property
    def valid(self) -> bool:
        return self.dominance_violations == 0 and self.exact_l1_gap <= self.epsilon

    def as_dict(self) -> dict:
        return asdict(self)


# -- Gaussian grid bracket ----------------------------------------------------------

@dataclass(frozen=True)
class GaussianBracketElement:
    grid_means: np.ndarray  # (K, d) snapped means, row k-1 for source k
    d1: int
    B: float
    eta: float
    c1: float
    c2: float
    epsilon: float

    @property
    def d(self) -> int:
        return self.grid_means.shape[1]

    def log_density(self, x: np.ndarray, y: int) -> np.ndarray:
        """``log p'(x, y)`` for the rows of ``x``; defined only for ``y`` in ``[K]``."""
        K = self.grid_means.shape[0]
        if not 1 <= y <= K:
            raise ValueError(f"bracket undefined for label {y} outside [1, {K}]")
        sq = np.sum((np.atleast_2d(x) - self.grid_means[y - 1]) ** 2, axis=1)
        return -0.5 * self.d * math.log(2 * math.pi) - 0.5 * self.c1 * sq + self.c2


def bracket_constants(eps: float, d: int) -> tuple[float, float, float]:
    """Grid width and exponent constants ``(eta, c1, c2)`` for accuracy ``eps``."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    eta = eps / (1 + d)
    return eta, 1.0 - eta, d * (1.0 - eta) * eta / 2.0


def _grid_index_range(B: float, eta: float) -> tuple[int, int]:
    # tolerance absorbs B/eta landing a rounding error below an integer
    hi = math.floor(B / eta * (1 + 1e-12))
    return -hi, hi


def snap_to_grid(values, B: float, eta: float) -> np.ndarray:
    """Floor each coordinate onto ``[-B, B] ∩ eta Z``.

    A coordinate within ``eta`` of ``-B`` whose floor would leave the box goes to
    the lowest grid point instead; it is still within ``eta`` of the target.
    """
    lo, _ = _grid_index_range(B, eta)
    j = np.floor(np.asarray(values, dtype=np.float64) / eta)
    return np.maximum(j, lo) * eta


def gaussian_bracket_cover(target, d1: int | None = None, B: float | None = None,
                           eps: float = 1.0) -> GaussianBracketElement:
    """Bracket element covering ``target`` (a family or a ``(K, d)`` mean array)."""
    if isinstance(target, GaussianFamily):
        means = target.means()
        d1 = target.d1 if d1 is None else d1
    else:
        means = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if B is None:
        raise ValueError("box bound B is required")
    if np.any(np.abs(means) > B):
        raise ValueError(f"target means leave the box [-{B}, {B}]")
    eta, c1, c2 = bracket_constants(eps, means.shape[1])
    return GaussianBracketElement(snap_to_grid(means, B, eta), d1 or 0, float(B), eta, c1, c2, float(eps))


def _risky_points(elem: GaussianBracketElement, mu: np.ndarray, snapped: np.ndarray) -> np.ndarray:
    # minimiser of log p' - log p sits at (mu - c1*snapped) / (1 - c1)
    worst = (mu - elem.c1 * snapped) / (1.0 - elem.c1)
    return np.vstack([mu, snapped, 0.5 * (mu + snapped), worst])


def gaussian_bracket_verify(elem: GaussianBracketElement, target: GaussianFamily, n_probe: int,
                            rng: RngStream) -> BracketReport:
    """Check ``p'(x, y) >= p(x | y)`` at probes and report the exact L1 gap.

    Probes are drawn from each source's target density plus analytically risky
    points.  The gap is the mass excess ``c1^(-d/2) e^(c2) - 1``.
    """
    gen = rng.generator()
    means = target.means()
    d = target.d
    eps = elem.epsilon
    violations = 0
    total = 0
    per_source = max(1, n_probe // target.K)
    for k in range(1, target.K + 1):
        mu = means[k - 1]
        probes = np.vstack([mu + gen.standard_normal((per_source, d)),
                            _risky_points(elem, mu, elem.grid_means[k - 1])])
        log_target = -0.5 * d * math.log(2 * math.pi) - 0.5 * np.sum((probes - mu) ** 2, axis=1)
        # compare exponents directly; both densities share the normaliser
        margin = elem.log_density(probes, k) - log_target
        violations += int(np.count_nonzero(margin < 0))
        total += probes.shape[0]
    gap = math.exp(elem.c2 - 0.5 * d * math.log(elem.c1)) - 1.0
    mode = "single" if target.mode == "single_estimate" else "multi"
    log_card = gaussian_bracket_count(target.K, d, target.d1, elem.B, eps, mode)[0]
    return BracketReport(violations, gap, eps, log_card, total)


def grid_points(B: float, eta: float) -> np.ndarray:
    lo, hi = _grid_index_range(B, eta)
    return np.arange(lo, hi + 1) * eta


def gaussian_bracket_count(K: int, d: int, d1: int, B: float, eps: float,
                           mode: str = "multi") -> tuple[float, bool]:
    """Log of the number of grid bracket elements and whether it is estimated.

    The element set is a product of per-coordinate grids, so the count is exact
    up to ``ENUMERATION_LIMIT`` elements; beyond that the closed-form bound is
    returned with ``estimated=True``.
    """
    if mode not in bounds.STRATEGIES:
        raise ValueError(f"unknown mode {mode!r}")
    eta, _, _ = bracket_constants(eps, d)
    free = K * d1 + (d - d1) if mode == "multi" else K * d
    per_coord = grid_points(B, eta).size
    log_count = free * math.log(per_coord)
    if log_count > math.log(ENUMERATION_LIMIT):
        p = bounds.GaussianBoundParams(n=1, K=K, d=d, d1=d1, B=B, epsilon=eps)
        return bounds.gaussian_log_bracketing(p, mode), True
    return log_count, False


def enumerate_gaussian_bracket(K: int, d: int, d1: int, B: float, eps: float, mode: str = "multi"):
    """Yield every element's free coordinates; only for small instances."""
    eta, _, _ = bracket_constants(eps, d)
    free = K * d1 + (d - d1) if mode == "multi" else K * d
    grid = grid_points(B, eta)
    if grid.size**free > ENUMERATION_LIMIT:
        raise ValueError("bracket too large to enumerate")
    return itertools.product(grid, repeat=free)


# -- constant functions -----------------------------------------------------------------

def constant_function_bracket(eps: float) -> np.ndarray:
    """Levels ``k * eps`` for ``k = 1..ceil(1/eps)`` bracketing constants in ``[0, 1]``."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    count = math.ceil(1.0 / eps - 1e-12)
    return np.arange(1, count + 1) * eps


def constant_bracket_verify(eps: float, n_probe: int, rng: RngStream) -> BracketReport:
    levels = constant_function_bracket(eps)
    c = np.concatenate([rng.generator().uniform(0.0, 1.0, n_probe), [0.0, 1.0]])
    idx = np.searchsorted(levels, c - 1e-12)
    covered = idx < levels.size
    chosen = levels[np.minimum(idx, levels.size - 1)]
    bad = (~covered) | (chosen < c - 1e-12)
    gap = float(np.max(np.where(covered, chosen - c, np.inf)))
    return BracketReport(int(bad.sum()), gap, eps, math.log(levels.size), c.size)


# -- energy-based, one dimension ----------------------------------------------------

@dataclass(frozen=True)
class EnergyGrid1D:
    nodes: np.ndarray
    u_values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        u = np.asarray(self.u_values, dtype=np.float64)
        if nodes.size < 3:
            raise ValueError("quadrature needs at least 3 nodes")
        if nodes.shape != u.shape or not np.all(np.isfinite(u)):
            raise ValueError("energies must be finite and match the nodes")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "u_values", u)

    @classmethod
    def uniform(cls, u_func, n_nodes: int = 4097) -> "EnergyGrid1D":
        nodes = np.linspace(0.0, 1.0, n_nodes)
        return cls(nodes, u_func(nodes))


def random_piecewise_linear_energy(gen: np.random.Generator, n_nodes: int = 4097, n_knots: int | None = None,
                                   low: float = -3.0, high: float = 3.0) -> EnergyGrid1D:
    n_knots = int(gen.integers(2, 12)) if n_knots is None else n_knots
    knots = np.linspace(0.0, 1.0, n_knots)
    vals = gen.uniform(low, high, n_knots)
    return EnergyGrid1D.uniform(lambda x: np.interp(x, knots, vals), n_nodes)


def ebm_gap_bound(eps_u: float) -> float:
    return 3.0 * eps_u * math.exp(4.0 * eps_u) + eps_u * math.exp(eps_u)


def _log_trapz(log_f: np.ndarray, x: np.ndarray) -> float:
    shift = float(log_f.max())
    return shift + math.log(trapezoid(np.exp(log_f - shift), x))


def ebm_bracket_from_energies(u: EnergyGrid1D, u_prime: np.ndarray, eps_u: float) -> BracketReport:
    """Compare ``p ∝ e^-u`` with ``p' = e^(-u' + 2 eps_u) / ∫ e^-u'`` on the grid."""
    x = u.nodes
    u_prime = np.asarray(u_prime, dtype=np.float64)
    if np.max(np.abs(u_prime - u.u_values)) > eps_u * (1 + 1e-12):
        raise ValueError("perturbed energy leaves the eps_u sup-norm ball")
    log_p = -u.u_values - _log_trapz(-u.u_values, x)
    log_p_prime = -u_prime + 2.0 * eps_u - _log_trapz(-u_prime, x)
    # tolerance is float round-off in the log-normalisers only
    violations = int(np.count_nonzero(log_p_prime - log_p < -1e-12))
    gap = float(trapezoid(np.abs(np.exp(log_p_prime) - np.exp(log_p)), x))
    return BracketReport(violations, gap, ebm_gap_bound(eps_u), None, x.size)


def ebm_bracket_verify_1d(u: EnergyGrid1D, eps_u: float, rng: RngStream) -> BracketReport:
    """Perturb ``u`` by at most ``eps_u`` in sup-norm and check the shifted bracket.

    ``epsilon`` on the report is the guaranteed gap ``3 eps e^(4 eps) + eps e^eps``.
    """
    if not eps_u > 0:
        raise ValueError("eps_u must be positive")
    gen = rng.generator()
    knots = np.linspace(0.0, 1.0, int(gen.integers(2, 20)))
    wiggle = np.interp(u.nodes, knots, gen.uniform(-1.0, 1.0, knots.size))
    return ebm_bracket_from_energies(u, u.u_values + eps_u * wiggle, eps_u)


# -- MLP lemmas ------------------------------------------------------------------

LEMMA_KINDS = ("input_lipschitz", "param_lipschitz", "output_supnorm")


def random_mlp(gen: np.random.Generator, L: int, W: int, B: float, extreme: float = 0.3):
    """Dense ReLU MLP with widths in ``[1, W]`` and entries in ``[-B, B]``.

    A fraction ``extreme`` of entries sit at ``±B``; those networks come closest
    to the worst-case constants.
    """
    widths = gen.integers(1, W + 1, size=L + 1)
    layers = []
    for l in range(L):
        shape_a = (int(widths[l + 1]), int(widths[l]))
        a = gen.uniform(-B, B, shape_a)
        b = gen.uniform(-B, B, shape_a[0])
        mask_a = gen.random(shape_a) < extreme
        a[mask_a] = B * gen.choice([-1.0, 1.0], size=int(mask_a.sum()))
        mask_b = gen.random(shape_a[0]) < extreme
        b[mask_b] = B * gen.choice([-1.0, 1.0], size=int(mask_b.sum()))
        layers.append((a, b))
    return layers


def mlp_layer_outputs(layers, x: np.ndarray) -> list[np.ndarray]:
    """Pre-activation output of every layer: ``f_1 = A1 x + b1``, ``f_l = A_l relu(f_{l-1}) + b_l``."""
    outs = []
    h = x
    for i, (a, b) in enumerate(layers):
        h = a @ (h if i == 0 else np.maximum(h, 0.0)) + b
        outs.append(h)
    return outs


def _perturb(gen, layers, B: float, delta: float):
    out = []
    for a, b in layers:
        a2 = np.clip(a + gen.uniform(-delta, delta, a.shape), -B, B)
        b2 = np.clip(b + gen.uniform(-delta, delta, b.shape), -B, B)
        out.append((a2, b2))
    return out


def mlp_lemma_ratio(kind: str, layers, B: float, W: int, gen: np.random.Generator,
                    delta: float | None = None) -> float:
    """Largest observed / bound ratio for one network on one random input."""
    L = len(layers)
    w0 = layers[0][0].shape[1]
    x = gen.random(w0)
    bvee = max(B, 1.0)
    if kind == "output_supnorm":
        outs = mlp_layer_outputs(layers, x)
        return max(np.max(np.abs(f)) / (bvee**l * (W + 1) ** l) for l, f in enumerate(outs, start=1))
    if kind == "input_lipschitz":
        x2 = gen.random(w0) if gen.random() < 0.5 else np.clip(x + gen.uniform(-1e-3, 1e-3, w0), 0, 1)
        dx = np.max(np.abs(x - x2))
        if dx == 0:
            return 0.0
        df = np.max(np.abs(mlp_layer_outputs(layers, x)[-1] - mlp_layer_outputs(layers, x2)[-1]))
        return df / (bounds.mlp_lipschitz_const(L, W, B) * dx)
    if kind == "param_lipschitz":
        if delta is None:
            delta = float(10.0 ** gen.uniform(-4, 0)) * B
        other = _perturb(gen, layers, B, delta)
        dist = max(max(np.max(np.abs(a - a2)), np.max(np.abs(b - b2)))
                   for (a, b), (a2, b2) in zip(layers, other))
        outs, outs2 = mlp_layer_outputs(layers, x), mlp_layer_outputs(other, x)
        if dist == 0:
            return max(float(np.max(np.abs(f - g))) for f, g in zip(outs, outs2))
        return max(np.max(np.abs(f - g)) / (l * bvee ** (l - 1) * (W + 1) ** l * dist)
                   for l, (f, g) in enumerate(zip(outs, outs2), start=1))
    raise ValueError(f"unknown lemma kind {kind!r}")


def mlp_lemma_check(kind: str, L: int, W: int, B: float, trials: int, rng: RngStream,
                    random_sizes: bool = False) -> float:
    """Maximum observed/bound ratio over ``trials`` random networks.

    With ``random_sizes`` each trial draws its own ``L' <= L``, ``W' <= W`` and
    ``B' in (0, B]``.
    """
    if kind not in LEMMA_KINDS:
        raise ValueError(f"unknown lemma kind {kind!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    gen = rng.generator()
    worst = 0.0
    for _ in range(trials):
        if random_sizes:
            l_, w_ = int(gen.integers(1, L + 1)), int(gen.integers(1, W + 1))
            b_ = float(gen.uniform(0.05, B))
        else:
            l_, w_, b_ = L, W, B
        layers = random_mlp(gen, l_, w_, b_)
        worst = max(worst, float(mlp_lemma_ratio(kind, layers, b_, w_, gen)))
    return worst
