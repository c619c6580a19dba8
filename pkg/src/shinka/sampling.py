"""Parent-selection strategies over an island subpopulation.

All functions are pure: they take fitness/offspring data plus an explicit
RNG and emit probability vectors or a drawn program id. Strategies:

* ``power_law``   — rank-based, p_i proportional to rank^-alpha (rank 1 = best)
* ``weighted``    — sigmoid performance around the island median, damped by
                    offspring count
* ``uniform``     — equal probability
* ``hill_climb``  — always the island best
* ``best_of_n``   — always the island's initial seed program
"""

import math
import statistics
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

STRATEGY_KINDS = ("power_law", "weighted", "uniform", "hill_climb", "best_of_n")


class SamplingError(ValueError):
    """Raised for invalid inputs (NaN fitness, negative counts, bad kind)."""


@dataclass
class SelectionStrategy:
    kind: str = "weighted"
    alpha: float = 1.0  # power-law exponent; 0 degenerates to uniform
    selection_lambda: float = 10.0  # sigmoid pressure

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise SamplingError(
                f"unknown strategy kind {self.kind!r}; expected one of {STRATEGY_KINDS}")


def _sigmoid(x: float) -> float:
    # Overflow-safe logistic.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _average_ranks(fitnesses: Sequence[float]) -> List[float]:
    """Rank positions with 1 = best; exact ties share their mean position."""
    order = sorted(range(len(fitnesses)), key=lambda i: -fitnesses[i])
    ranks = [0.0] * len(fitnesses)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and fitnesses[order[end + 1]] == fitnesses[order[pos]]:
            end += 1
        mean_rank = (pos + 1 + end + 1) / 2.0
        for j in range(pos, end + 1):
            ranks[order[j]] = mean_rank
        pos = end + 1
    return ranks


def power_law_probs(fitnesses: Sequence[float], alpha: float) -> List[float]:
    """Selection probabilities proportional to rank^-alpha, rank 1 = best."""
    if not fitnesses:
        raise SamplingError("fitness list must be nonempty")
    for f in fitnesses:
        if math.isnan(f):
            raise SamplingError("NaN fitness")
    if alpha < 0:
        raise SamplingError("alpha must be >= 0")
    if alpha == 0:
        return [1.0 / len(fitnesses)] * len(fitnesses)
    ranks = _average_ranks(fitnesses)
    weights = [r ** -alpha for r in ranks]
    total = sum(weights)
    return [w / total for w in weights]


def weighted_probs(fitnesses: Sequence[float], offspring_counts: Sequence[int],
                   selection_lambda: float) -> List[float]:
    """Performance-times-novelty weights, normalized.

    Performance is a sigmoid of the fitness gap to the island median (even
    lists use the mean of the two central values); novelty is 1/(1+N) where
    N is the offspring count.
    """
    if not fitnesses:
        raise SamplingError("fitness list must be nonempty")
    if len(fitnesses) != len(offspring_counts):
        raise SamplingError("fitnesses and offspring_counts must align")
    if selection_lambda <= 0:
        raise SamplingError("selection_lambda must be > 0")
    for f in fitnesses:
        if math.isnan(f):
            raise SamplingError("NaN fitness")
    for n in offspring_counts:
        if n < 0:
            raise SamplingError(f"negative offspring count {n}")
    median = statistics.median(fitnesses)
    weights = [
        _sigmoid(selection_lambda * (f - median)) * (1.0 / (1.0 + n))
        for f, n in zip(fitnesses, offspring_counts)
    ]
    total = sum(weights)
    if total <= 0.0:
        # Every sigmoid underflowed; fall back to uniform rather than divide by 0.
        return [1.0 / len(weights)] * len(weights)
    return [w / total for w in weights]


def _draw(ids: Sequence[str], probs: Sequence[float], rng) -> str:
    u = rng.random()
    acc = 0.0
    for rid, p in zip(ids, probs):
        acc += p
        if u < acc:
            return rid
    return ids[-1]  # guard against cumulative rounding


def select_parent(island, records: Dict[str, "object"], strategy: SelectionStrategy,
                  rng, seed_id: Optional[str] = None) -> str:
    """Draw one member id from the island per the strategy.

    ``island`` is an IslandView (members in canonical best-first order);
    ``records`` maps ids to ProgramRecord-like objects with ``fitness`` and
    ``offspring_count``. ``seed_id`` names the island's initial program for
    the best_of_n baseline.
    """
    members = island.members
    if not members:
        raise SamplingError(f"island {island.island_id} is empty")
    kind = strategy.kind

    if kind == "hill_climb":
        return island.best_id
    if kind == "best_of_n":
        if seed_id is not None and seed_id in set(members):
            return seed_id
        for rid in members:
            if getattr(records[rid], "patch_type", None) == "init":
                return rid
        # Seed evicted: fall back to the earliest surviving member.
        return min(members, key=lambda rid: (records[rid].created_at, rid))
    if kind == "uniform":
        probs = [1.0 / len(members)] * len(members)
    elif kind == "power_law":
        probs = power_law_probs([records[rid].fitness for rid in members],
                                strategy.alpha)
    elif kind == "weighted":
        probs = weighted_probs([records[rid].fitness for rid in members],
                               [records[rid].offspring_count for rid in members],
                               strategy.selection_lambda)
    else:
        raise SamplingError(f"unknown strategy kind {kind!r}")
    return _draw(members, probs, rng)
