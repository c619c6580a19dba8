import math
import random

import pytest

from shinka.bandit import BanditError, BanditState, transform_reward


def test_transform_zero_when_no_improvement():
    assert transform_reward(1.0, 2.0, 0.0) == 0.0
    assert transform_reward(2.0, 2.0, 0.0) == 0.0
    assert transform_reward(-5.0, -1.0, -2.0) == 0.0


def test_transform_ln2_gap_is_exactly_one():
    baseline = 3.0
    assert transform_reward(baseline + math.log(2.0), baseline, 0.0) == \
        pytest.approx(1.0, abs=1e-12)


def test_transform_unit_gap_is_e_minus_one():
    assert transform_reward(1.0, 0.0, 0.0) == pytest.approx(math.e - 1.0,
                                                            abs=1e-12)
    assert transform_reward(1.0, 0.0, 0.0) == pytest.approx(1.71828, abs=1e-5)


def test_transform_baseline_is_max_of_parent_and_initial():
    # Initial better than parent: improvement over the parent alone earns 0.
    assert transform_reward(1.5, 1.0, 2.0) == 0.0
    assert transform_reward(2.5, 1.0, 2.0) == pytest.approx(math.exp(0.5) - 1.0)


def test_transform_rejects_non_finite():
    with pytest.raises(BanditError):
        transform_reward(float("nan"), 0.0, 0.0)
    with pytest.raises(BanditError):
        transform_reward(1.0, float("inf"), 0.0)


def test_transform_monotone_in_fitness():
    values = [transform_reward(f, 1.0, 0.5) for f in [0.0, 0.5, 1.0, 1.5, 2.0]]
    assert values == sorted(values)


def test_first_update_normalizes_to_zero():
    state = BanditState(arm_names=["a"])
    state.update("a", 5.0)
    assert state.normalized_mean("a") == 0.0
    assert state.arms["a"].visits == 1
    assert state.total_updates == 1


def test_unknown_arm_errors():
    state = BanditState(arm_names=["a"])
    with pytest.raises(BanditError):
        state.update("b", 1.0)


def test_identical_streams_give_equal_means():
    state = BanditState(arm_names=["a", "b"])
    stream = [0.0, 1.0, 0.5, 2.0, 0.0, 1.5]
    for value in stream:
        state.update("a", value)
        state.update("b", value)
    assert state.arms["a"].visits == state.arms["b"].visits
    assert state.normalized_mean("a") == state.normalized_mean("b")


def test_scripted_streams_separate_means():
    state = BanditState(arm_names=["a", "b"])
    for _ in range(100):
        state.update("a", 1.0)
        state.update("b", 0.0)
    assert state.normalized_mean("a") > state.normalized_mean("b")


def test_total_updates_equals_sum_of_visits():
    state = BanditState(arm_names=["a", "b", "c"])
    rng = random.Random(5)
    for _ in range(60):
        state.update(rng.choice("abc"), rng.random())
    assert state.total_updates == sum(a.visits for a in state.arms.values())


def test_warmup_visits_every_arm_once():
    state = BanditState(arm_names=["a", "b", "c"])
    rng = random.Random(0)
    first_three = [state.choose(rng) for _ in range(3)]
    assert first_three == ["a", "b", "c"]


def test_warmup_round_robin_holds_even_without_updates():
    # Never selects a drawn arm again while another arm is still undrawn.
    state = BanditState(arm_names=["a", "b", "c", "d"])
    rng = random.Random(0)
    assert [state.choose(rng) for _ in range(4)] == ["a", "b", "c", "d"]


def test_zero_coefficient_is_pure_argmax_after_warmup():
    state = BanditState(arm_names=["a", "b"], exploration_coefficient=0.0)
    rng = random.Random(0)
    state.choose(rng), state.choose(rng)
    for _ in range(30):
        state.update("a", 1.0)
        state.update("b", 0.0)
    assert all(state.choose(rng) == "a" for _ in range(20))


def test_ties_break_uniformly_at_random():
    rng = random.Random(123)
    tally = {"a": 0, "b": 0}
    for _ in range(2000):
        state = BanditState(arm_names=["a", "b"], exploration_coefficient=0.0)
        state.choose(rng), state.choose(rng)
        state.update("a", 1.0)
        state.update("b", 1.0)
        tally[state.choose(rng)] += 1
    assert tally["a"] / 2000 == pytest.approx(0.5, abs=0.05)


def test_choose_argmax_sequence_invariant_to_fitness_shift():
    # Shifting every fitness input by a constant leaves the transformed
    # rewards, and therefore the whole selection sequence, unchanged.
    def run(shift):
        state = BanditState(arm_names=["a", "b"], exploration_coefficient=1.0)
        rng = random.Random(77)
        fitness_rng = random.Random(99)
        sequence = []
        for _ in range(100):
            arm = state.choose(rng)
            sequence.append(arm)
            parent = fitness_rng.uniform(0, 1) + shift
            initial = shift
            gain = fitness_rng.uniform(0, 0.5) if arm == "a" else 0.0
            reward = transform_reward(parent + gain, parent, initial)
            state.update(arm, reward)
        return sequence

    assert run(0.0) == run(1234.5)


def test_snapshot_round_trip():
    state = BanditState(arm_names=["a", "b"], exploration_coefficient=0.7)
    rng = random.Random(1)
    for _ in range(25):
        arm = state.choose(rng)
        state.update(arm, rng.random())
    clone = BanditState.from_snapshot(state.snapshot())
    assert clone.snapshot() == state.snapshot()
    # Continued use stays consistent.
    assert clone.total_updates == state.total_updates


def test_selection_shares_sum_to_one_after_draws():
    state = BanditState(arm_names=["a", "b"])
    rng = random.Random(2)
    for _ in range(10):
        state.update(state.choose(rng), 0.0)
    shares = state.selection_shares()
    assert sum(shares.values()) == pytest.approx(1.0)
