"""UCB1-style adaptive allocation over the model ensemble.

Rewards are improvements over a baseline (the better of parent and initial
program), passed through exp(max(gap, 0)) - 1 so that bold jumps dominate
safe micro-steps. Each arm tracks the arithmetic mean of its raw transformed
rewards; means are normalized against global streaming statistics when read,
keeping scores scale-free across domains and exactly symmetric for arms fed
identical reward streams regardless of interleaving.
"""

import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional

EPSILON = 1e-8  # floor for the running standard deviation


class BanditError(ValueError):
    """Unknown arm or invalid input."""


def transform_reward(fitness: float, parent_fitness: float,
                     initial_fitness: float) -> float:
    """exp(max(fitness - baseline, 0)) - 1 with baseline = max(parent, initial)."""
    for value in (fitness, parent_fitness, initial_fitness):
        if not math.isfinite(value):
            raise BanditError(f"non-finite fitness input {value!r}")
    baseline = max(parent_fitness, initial_fitness)
    return math.exp(max(fitness - baseline, 0.0)) - 1.0


@dataclass
class ArmState:
    visits: int = 0  # n_m, incremented per update
    raw_mean: float = 0.0  # mean of this arm's raw transformed rewards
    draws: int = 0  # times chosen; drives the warmup round-robin


@dataclass
class BanditState:
    """Per-arm reward means plus global streaming statistics (Welford)."""

    arm_names: List[str]
    exploration_coefficient: float = 1.0
    arms: Dict[str, ArmState] = field(default_factory=dict)
    total_updates: int = 0
    reward_mean: float = 0.0
    reward_m2: float = 0.0

    def __post_init__(self):
        if not self.arm_names:
            raise BanditError("at least one arm required")
        for name in self.arm_names:
            self.arms.setdefault(name, ArmState())

    # -- updates -------------------------------------------------------------

    def _push_stat(self, value: float) -> None:
        self.total_updates += 1
        delta = value - self.reward_mean
        self.reward_mean += delta / self.total_updates
        self.reward_m2 += delta * (value - self.reward_mean)

    def reward_std(self) -> float:
        if self.total_updates == 0:
            return 0.0
        return math.sqrt(self.reward_m2 / self.total_updates)

    def update(self, arm: str, transformed_reward: float) -> None:
        if arm not in self.arms:
            raise BanditError(f"unknown arm {arm!r}")
        self._push_stat(transformed_reward)
        state = self.arms[arm]
        state.visits += 1
        state.raw_mean += (transformed_reward - state.raw_mean) / state.visits

    def normalized_mean(self, arm: str) -> float:
        """The arm's mean reward on the normalized scale.

        Equals the arithmetic mean of the arm's rewards after subtracting the
        running mean and dividing by the (floored) running std; exactly zero
        after the first-ever update since the arm mean coincides with the
        global mean.
        """
        state = self.arms[arm]
        if state.visits == 0:
            return 0.0
        return (state.raw_mean - self.reward_mean) / max(self.reward_std(),
                                                         EPSILON)

    # -- selection -------------------------------------------------------------

    def ucb_scores(self) -> Dict[str, Optional[float]]:
        scores: Dict[str, Optional[float]] = {}
        for name in self.arm_names:
            state = self.arms[name]
            if state.visits == 0:
                scores[name] = None
            else:
                bonus = self.exploration_coefficient * math.sqrt(
                    math.log(max(self.total_updates, 1)) / state.visits)
                scores[name] = self.normalized_mean(name) + bonus
        return scores

    def choose(self, rng: random.Random) -> str:
        """Pick an arm: round-robin over never-drawn arms first, then UCB1
        argmax with uniform random tie-breaking."""
        undrawn = [name for name in self.arm_names if self.arms[name].draws == 0]
        if undrawn:
            choice = undrawn[0]
        else:
            unvisited = [name for name in self.arm_names
                         if self.arms[name].visits == 0]
            if unvisited:
                choice = unvisited[0]
            else:
                scores = self.ucb_scores()
                best = max(score for score in scores.values())
                tied = [name for name in self.arm_names if scores[name] == best]
                choice = tied[0] if len(tied) == 1 else tied[rng.randrange(len(tied))]
        self.arms[choice].draws += 1
        return choice

    # -- persistence -------------------------------------------------------------

    def snapshot(self) -> Dict:
        return {
            "arm_names": list(self.arm_names),
            "exploration_coefficient": self.exploration_coefficient,
            "total_updates": self.total_updates,
            "reward_mean": self.reward_mean,
            "reward_m2": self.reward_m2,
            "arms": {name: {"visits": a.visits, "raw_mean": a.raw_mean,
                            "draws": a.draws}
                     for name, a in self.arms.items()},
        }

    @classmethod
    def from_snapshot(cls, data: Dict) -> "BanditState":
        state = cls(arm_names=list(data["arm_names"]),
                    exploration_coefficient=data["exploration_coefficient"])
        state.total_updates = data["total_updates"]
        state.reward_mean = data["reward_mean"]
        state.reward_m2 = data["reward_m2"]
        for name, arm in data["arms"].items():
            state.arms[name] = ArmState(visits=arm["visits"],
                                        raw_mean=arm["raw_mean"],
                                        draws=arm["draws"])
        return state

    def selection_shares(self) -> Dict[str, float]:
        total = sum(self.arms[name].draws for name in self.arm_names)
        if total == 0:
            return {name: 0.0 for name in self.arm_names}
        return {name: self.arms[name].draws / total for name in self.arm_names}
