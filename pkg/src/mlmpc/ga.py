"""Real-coded genetic algorithm over bounded input sequences.

A chromosome is an ``(H, d_u)`` array of inputs; every gene of channel ``j``
lives in ``[lower[j], upper[j]]``.  Fitness functions take a whole population
``(P, H, d_u)`` and return ``P`` costs (lower is better); use
:func:`elementwise` to lift a per-chromosome function.

Each generation keeps the best ``elite`` chromosomes and fills the rest of
the population by tournament selection, uniform crossover and clipped
Gaussian mutation.  The operators are also exposed one chromosome at a time
for testing.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OptimizerError

log = logging.getLogger(__name__)

__all__ = [
    "GaConfig",
    "GaResult",
    "ga_run",
    "tournament_select",
    "crossover",
    "mutate",
    "brute_force_best",
    "elementwise",
]


@dataclass(frozen=True)
class GaConfig:
    lower: tuple
    upper: tuple
    population: int = 64
    generations: int = 100
    elite: int = 2
    tournament: int = 3
    crossover: float = 0.9
    mutation: float = 0.15
    mutation_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper) or not lower:
            raise ConfigError(f"bounds need matching non-empty lower/upper, got {lower} / {upper}")
        for lo, hi in zip(lower, upper):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"bounds need finite lo <= hi, got ({lo}, {hi})")
        if self.population < 2:
            raise ConfigError(f"population must be >= 2, got {self.population}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        if not 0 <= self.elite < self.population:
            raise ConfigError(f"elite count must lie in [0, population), got {self.elite}")
        if self.tournament < 1:
            raise ConfigError(f"tournament size must be >= 1, got {self.tournament}")
        for name in ("crossover", "mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} probability must lie in [0, 1], got {getattr(self, name)}")
        if self.mutation_scale < 0:
            raise ConfigError(f"mutation scale must be >= 0, got {self.mutation_scale}")

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)


@dataclass
class GaResult:
    best: np.ndarray
    cost: float
    history: list = field(default_factory=list)
    n_infeasible: int = 0


def elementwise(fn):
    """Turn a chromosome -> cost function into a population fitness."""

    def fitness(population):
        return np.array([fn(c) for c in population], dtype=float)

    return fitness


# --------------------------------------------------------------------------- operators


def _tournaments(costs, k, n_winners, rng):
    draws = rng.integers(0, len(costs), size=(n_winners, k))
    # argmin keeps the first of equal draws
    return draws[np.arange(n_winners), np.argmin(costs[draws], axis=1)]


def _crossovers(a, b, p, rng):
    do = rng.random(len(a)) < p
    pick_b = rng.random(a.shape) < 0.5
    pick_b &= do.reshape((-1,) + (1,) * (a.ndim - 1))
    return np.where(pick_b, b, a)


def _mutations(children, lo, hi, prob, scale, rng):
    hit = rng.random(children.shape) < prob
    noise = rng.normal(0.0, 1.0, size=children.shape) * (scale * (hi - lo))
    return np.clip(children + np.where(hit, noise, 0.0), lo, hi)


def tournament_select(costs, k, rng):
    """Index of the cheapest of ``k`` uniform draws (with replacement)."""
    costs = np.asarray(costs, dtype=float)
    if len(costs) == 0 or k < 1:
        raise ValueError("tournament needs a non-empty population and k >= 1")
    return int(_tournaments(costs, k, 1, rng)[0])


def crossover(a, b, p, rng):
    """Uniform crossover: with probability ``p`` every gene comes from ``a`` or ``b``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"parents differ in shape: {a.shape} vs {b.shape}")
    return _crossovers(a[None], b[None], p, rng)[0]


def mutate(c, cfg, rng):
    """Gaussian perturbation of each gene with probability ``cfg.mutation``, clipped to the bounds."""
    c = np.asarray(c, dtype=float)
    return _mutations(c[None], cfg.lo, cfg.hi, cfg.mutation, cfg.mutation_scale, rng)[0]


# --------------------------------------------------------------------------- search


def _evaluate(fitness, population):
    costs = np.asarray(fitness(population), dtype=float).reshape(len(population))
    bad = ~np.isfinite(costs)
    if np.any(bad):
        costs = np.where(bad, np.inf, costs)
    return costs, int(bad.sum())


def ga_run(fitness, cfg, horizon, initial=None, trace_path=None):
    """Minimise ``fitness`` over ``(horizon, d_u)`` input sequences.

    ``initial`` optionally seeds the first population (it is clipped to the
    bounds).  Returns the best chromosome seen, its cost, and the best cost
    after every generation, which never increases.
    """
    lo, hi = cfg.lo, cfg.hi
    shape = (horizon, len(lo))
    rng = np.random.default_rng(cfg.seed)
    if initial is None:
        pop = rng.uniform(lo, hi, size=(cfg.population,) + shape)
    else:
        pop = np.clip(np.asarray(initial, dtype=float).reshape((cfg.population,) + shape), lo, hi)
    costs, n_bad = _evaluate(fitness, pop)
    history = []
    best, best_cost = None, math.inf
    n_children = cfg.population - cfg.elite
    for gen in range(cfg.generations):
        if not np.any(np.isfinite(costs)):
            raise OptimizerError(f"every chromosome of generation {gen} has a non-finite cost")
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best, best_cost = pop[order[0]].copy(), float(costs[order[0]])
        history.append(best_cost)
        if gen == cfg.generations - 1:
            break
        a = pop[_tournaments(costs, cfg.tournament, n_children, rng)]
        b = pop[_tournaments(costs, cfg.tournament, n_children, rng)]
        children = _mutations(_crossovers(a, b, cfg.crossover, rng), lo, hi, cfg.mutation, cfg.mutation_scale, rng)
        child_costs, bad = _evaluate(fitness, children)
        n_bad += bad
        elites = order[: cfg.elite]
        pop = np.concatenate([pop[elites], children])
        costs = np.concatenate([costs[elites], child_costs])
    if n_bad:
        log.debug("GA assigned +inf to %d non-finite fitness values", n_bad)
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["generation", "best_cost"])
            writer.writerows((g, format(c, ".17g")) for g, c in enumerate(history))
    return GaResult(best, best_cost, history, n_bad)


def brute_force_best(fitness, lower, upper, horizon, points, budget=1_000_000, batch=4096):
    """Exhaustive search over a uniform grid (endpoints included) of every gene.

    Returns ``(best, cost)``; ties go to the first grid point in
    lexicographic order.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    n_genes = horizon * len(lower)
    total = points**n_genes
    if total > budget:
        raise ValueError(f"grid of {points}^{n_genes} = {total} points exceeds the budget of {budget}")
    axes = [np.linspace(lower[j], upper[j], points) for _ in range(horizon) for j in range(len(lower))]
    best, best_cost = None, math.inf
    grid = itertools.product(*axes)
    while True:
        chunk = list(itertools.islice(grid, batch))
        if not chunk:
            break
        pop = np.array(chunk).reshape(len(chunk), horizon, len(lower))
        costs, _ = _evaluate(fitness, pop)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best, best_cost = pop[i].copy(), float(costs[i])
    if best is None:
        raise OptimizerError("every grid point has a non-finite cost")
    return best, best_cost
