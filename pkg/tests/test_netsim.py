import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbrl.netsim import (
    ACTION_EVENTS,
    Action,
    InvalidConfig,
    LinkConfig,
    LinkEnv,
    LinkState,
    Observation,
    reset,
    step_dynamics,
)

I, D, K = Action.IncreaseRate, Action.DecreaseRate, Action.KeepRate


def test_action_ids_and_names():
    assert [int(a) for a in (I, D, K)] == [0, 1, 2]
    assert ACTION_EVENTS == ("IncreaseRate", "DecreaseRate", "KeepRate")


def test_reset_midpoint():
    state, obs = reset(LinkConfig(capacity=10, base_latency=4, min_rate=1, max_rate=19))
    assert state == LinkState(10.0, 0.0, 0)
    assert obs == Observation(1.0, 1.0, 0.0)


def test_reset_clips_throughput_ratio():
    _, obs = reset(LinkConfig())
    assert LinkConfig().start_rate == 15.5
    assert obs.throughput_ratio == 1.0


def test_reset_with_explicit_initial_rate():
    state, obs = reset(LinkConfig(initial_rate=2.5))
    assert state.rate == 2.5 and obs.throughput_ratio == 0.25


def test_zero_queue_capacity_drops_excess_immediately():
    cfg = LinkConfig(queue_capacity=0, initial_rate=10)
    state, _ = reset(cfg)
    nxt, obs, _, _ = step_dynamics(state, I, cfg)
    assert nxt.queue == 0
    assert obs.loss_rate == pytest.approx(0.5 / 10.5)
    assert obs.latency_ratio == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"capacity": 0},
        {"capacity": -1},
        {"base_latency": 0},
        {"queue_capacity": -1},
        {"delta_rate": 0},
        {"delta_rate": 1},
        {"min_rate": 0},
        {"min_rate": 5, "max_rate": 5},
        {"episode_length": 0},
        {"reward_weights": (1, -1, 1)},
        {"reward_weights": (1, 1)},
        {"initial_rate": 50},
        {"loss_jitter": 1.0},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        LinkConfig(**kwargs)


def test_balanced_flow_keep():
    cfg = LinkConfig()
    nxt, obs, reward, done = step_dynamics(LinkState(10.0, 0.0, 0), K, cfg)
    assert nxt == LinkState(10.0, 0.0, 1)
    assert obs == Observation(1.0, 1.0, 0.0)
    assert reward == cfg.reward_weights[0]
    assert not done


def test_increase_fills_queue():
    cfg = LinkConfig(capacity=10, queue_capacity=5, delta_rate=0.5)
    nxt, obs, reward, _ = step_dynamics(LinkState(10.0, 0.0, 0), I, cfg)
    assert nxt.rate == 15 and nxt.queue == 5
    assert obs.throughput_ratio == 1.5 and obs.loss_rate == 0
    latency = cfg.base_latency + 0.5
    assert obs.latency_ratio == latency / cfg.base_latency
    assert reward == pytest.approx(10 * 1.5 - 0.5 / 4)


def test_overflow_arithmetic():
    cfg = LinkConfig(capacity=10, queue_capacity=5, delta_rate=0.5, max_rate=30)
    # rate 40/3 * 1.5 = 20 after the increase
    nxt, obs, reward, _ = step_dynamics(LinkState(40 / 3, 5.0, 0), I, cfg)
    assert nxt.rate == pytest.approx(20)
    assert nxt.queue == 5
    assert obs.throughput_ratio == pytest.approx(1.0)  # delivered 10
    assert obs.loss_rate == pytest.approx(0.5)  # dropped 10 of 20
    assert reward == pytest.approx(10 * 1.0 - 1 * 0.5 / 4 - 5 * 0.5)


def test_rate_is_clamped():
    cfg = LinkConfig()
    assert step_dynamics(LinkState(29.9), I, cfg)[0].rate == 30
    assert step_dynamics(LinkState(1.02), D, cfg)[0].rate == 1


def test_done_at_episode_length():
    cfg = LinkConfig(episode_length=3)
    env = LinkEnv(cfg)
    env.reset()
    assert [env.step(K)[2] for _ in range(3)] == [False, False, True]


def test_single_step_rewards_from_capacity():
    # From rate == capacity with an empty queue a single Increase pays
    # slightly more than Keep: the extra throughput outweighs one step of
    # queueing delay. Decrease gives up throughput.
    cfg = LinkConfig()
    rewards = {a: step_dynamics(LinkState(10.0), a, cfg)[2] for a in Action}
    assert rewards[K] == 10.0
    assert rewards[I] == pytest.approx(10.4875, abs=1e-12)
    assert rewards[D] == pytest.approx(9.5, abs=1e-12)


def run_constant(action, cfg, steps=400):
    state = LinkState(cfg.capacity)
    total = 0.0
    for _ in range(steps):
        state, _, r, _ = step_dynamics(state, action, cfg)
        total += r
    return total


def test_keep_at_capacity_is_best_constant_policy():
    cfg = LinkConfig()
    totals = {a: run_constant(a, cfg) for a in Action}
    assert max(totals, key=totals.get) == K
    assert totals[K] == pytest.approx(4000.0)


def test_link_env_matches_pure_functions():
    cfg = LinkConfig(initial_rate=3.0)
    env = LinkEnv(cfg)
    state, obs = reset(cfg)
    assert env.reset() == obs
    rng = random.Random(1)
    for _ in range(50):
        a = rng.randrange(3)
        state, obs, r, done = step_dynamics(state, a, cfg)
        assert env.step(a) == (obs, r, done)


def test_unknown_action():
    with pytest.raises(ValueError):
        step_dynamics(LinkState(5.0), 7, LinkConfig())


# properties

configs = st.builds(
    LinkConfig,
    capacity=st.floats(0.5, 50),
    base_latency=st.floats(0.5, 20),
    queue_capacity=st.floats(0, 50),
    delta_rate=st.floats(0.01, 0.9),
    min_rate=st.just(0.5),
    max_rate=st.floats(1, 100),
)


@st.composite
def states(draw, cfg):
    return LinkState(draw(st.floats(cfg.min_rate, cfg.max_rate)), draw(st.floats(0, cfg.queue_capacity)), 0)


def delivered_dropped(state, action, cfg):
    nxt, obs, _, _ = step_dynamics(state, action, cfg)
    return nxt, obs.throughput_ratio * cfg.capacity, obs.loss_rate * nxt.rate


@settings(max_examples=300, deadline=None)
@given(st.data(), configs, st.sampled_from(list(Action)))
def test_conservation_and_bounds(data, cfg, action):
    state = data.draw(states(cfg))
    nxt, delivered, dropped = delivered_dropped(state, action, cfg)
    assert delivered + dropped == pytest.approx(nxt.rate, rel=1e-9, abs=1e-9)
    assert cfg.min_rate <= nxt.rate <= cfg.max_rate
    assert 0 <= nxt.queue <= cfg.queue_capacity
    assert dropped >= 0
    _, obs, r, _ = step_dynamics(state, action, cfg)
    assert all(math.isfinite(v) for v in (*obs, r))
    assert obs.latency_ratio >= 1 and 0 <= obs.loss_rate <= 1


@settings(max_examples=300, deadline=None)
@given(st.data(), configs)
def test_monotone_congestion(data, cfg):
    state = data.draw(states(cfg))
    lat = {a: step_dynamics(state, a, cfg)[1].latency_ratio for a in Action}
    assert lat[I] >= lat[K] >= lat[D]


@settings(max_examples=300, deadline=None)
@given(st.data(), configs)
def test_no_loss_without_overflow(data, cfg):
    state = data.draw(states(cfg))
    nxt, obs, _, _ = step_dynamics(state, K, cfg)
    if state.queue + nxt.rate - cfg.capacity <= cfg.queue_capacity:
        assert obs.loss_rate == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(list(Action)), max_size=60), st.integers(0, 100))
def test_determinism(actions, seed):
    def trajectory():
        env = LinkEnv(LinkConfig(seed=seed, initial_rate=4.0))
        return [env.reset()] + [env.step(a) for a in actions]

    assert trajectory() == trajectory()


def test_loss_jitter_is_seeded():
    def trajectory(seed):
        env = LinkEnv(LinkConfig(seed=seed, loss_jitter=0.1, initial_rate=5.0))
        env.reset()
        return [env.step(K) for _ in range(20)]

    assert trajectory(3) == trajectory(3)
    assert trajectory(3) != trajectory(4)
    for obs, _, _ in trajectory(3):
        assert 0 < obs.loss_rate <= 0.1 + 1e-12
