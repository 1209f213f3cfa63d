"""Fluid single-sender bottleneck link.

One sender pushes ``rate`` packets per step into a FIFO queue that drains at
``capacity`` packets per step. The agent nudges the rate up or down by a
relative step, or keeps it. Observations summarize throughput, latency and
loss of the last step.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple


class InvalidConfig(ValueError):
    pass


class Action(IntEnum):
    IncreaseRate = 0
    DecreaseRate = 1
    KeepRate = 2


ACTION_EVENTS = tuple(a.name for a in Action)


@dataclass(frozen=True)
class LinkConfig:
    capacity: float = 10.0
    base_latency: float = 4.0
    queue_capacity: float = 20.0
    delta_rate: float = 0.05
    min_rate: float = 1.0
    max_rate: float = 30.0
    episode_length: int = 400
    reward_weights: tuple[float, float, float] = (10.0, 1.0, 5.0)
    seed: int = 0
    # None starts every episode at the midpoint of [min_rate, max_rate]
    initial_rate: float | None = None
    # extra random loss: up to this fraction of admitted packets; 0 disables it
    loss_jitter: float = 0.0

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise InvalidConfig(f"capacity must be > 0, got {self.capacity}")
        if not self.base_latency > 0:
            raise InvalidConfig(f"base_latency must be > 0, got {self.base_latency}")
        if not self.queue_capacity >= 0:
            raise InvalidConfig(f"queue_capacity must be >= 0, got {self.queue_capacity}")
        if not 0 < self.delta_rate < 1:
            raise InvalidConfig(f"delta_rate must lie in (0, 1), got {self.delta_rate}")
        if not 0 < self.min_rate < self.max_rate:
            raise InvalidConfig(f"need 0 < min_rate < max_rate, got {self.min_rate}, {self.max_rate}")
        if not (isinstance(self.episode_length, int) and self.episode_length > 0):
            raise InvalidConfig(f"episode_length must be a positive integer, got {self.episode_length}")
        if len(self.reward_weights) != 3 or any(not w >= 0 for w in self.reward_weights):
            raise InvalidConfig(f"reward_weights must be three non-negative numbers, got {self.reward_weights}")
        if not 0 <= self.loss_jitter < 1:
            raise InvalidConfig(f"loss_jitter must lie in [0, 1), got {self.loss_jitter}")
        if self.initial_rate is not None and not self.min_rate <= self.initial_rate <= self.max_rate:
            raise InvalidConfig(
                f"initial_rate must lie in [{self.min_rate}, {self.max_rate}], got {self.initial_rate}"
            )
        object.__setattr__(self, "reward_weights", tuple(float(w) for w in self.reward_weights))

    @property
    def start_rate(self) -> float:
        if self.initial_rate is not None:
            return self.initial_rate
        return (self.min_rate + self.max_rate) / 2


@dataclass(frozen=True)
class LinkState:
    rate: float
    queue: float = 0.0
    step: int = 0


class Observation(NamedTuple):
    throughput_ratio: float
    latency_ratio: float
    loss_rate: float


def reset(cfg: LinkConfig) -> tuple[LinkState, Observation]:
    rate = cfg.start_rate
    obs = Observation(min(rate / cfg.capacity, 1.0), 1.0, 0.0)
    return LinkState(rate, 0.0, 0), obs


def step_dynamics(
    state: LinkState,
    action: Action | int,
    cfg: LinkConfig,
    rng: random.Random | None = None,
) -> tuple[LinkState, Observation, float, bool]:
    """Advance the link by one step; returns (state, observation, reward, done)."""
    rate = state.rate
    if action == Action.IncreaseRate:
        rate = rate * (1 + cfg.delta_rate)
    elif action == Action.DecreaseRate:
        rate = rate * (1 - cfg.delta_rate)
    elif action != Action.KeepRate:
        raise ValueError(f"unknown action {action!r}")
    rate = min(max(rate, cfg.min_rate), cfg.max_rate)

    cap = cfg.capacity
    qcap = cfg.queue_capacity
    inflow = rate
    jitter = 0.0
    if cfg.loss_jitter > 0 and rng is not None:
        jitter = rate * cfg.loss_jitter * rng.random()
        inflow = rate - jitter
    raw = state.queue + inflow - cap
    dropped = max(0.0, raw - qcap) + jitter
    queue = min(max(raw, 0.0), qcap)
    delivered = rate - dropped
    latency = cfg.base_latency + queue / cap

    w_t, w_l, w_p = cfg.reward_weights
    reward = (
        w_t * (delivered / cap)
        - w_l * (latency - cfg.base_latency) / cfg.base_latency
        - w_p * (dropped / rate)
    )
    obs = Observation(delivered / cap, latency / cfg.base_latency, dropped / rate)
    nxt = LinkState(rate, queue, state.step + 1)
    return nxt, obs, reward, nxt.step == cfg.episode_length


class LinkEnv:
    """Stateful wrapper around :func:`reset` / :func:`step_dynamics`."""

    action_events = ACTION_EVENTS
    n_actions = len(Action)

    def __init__(self, cfg: LinkConfig | None = None):
        self.cfg = cfg or LinkConfig()
        self._rng = random.Random(self.cfg.seed)
        self.state, self.observation = reset(self.cfg)

    def reset(self) -> Observation:
        self.state, self.observation = reset(self.cfg)
        return self.observation

    def step(self, action: int) -> tuple[Observation, float, bool]:
        self.state, self.observation, reward, done = step_dynamics(self.state, action, self.cfg, self._rng)
        return self.observation, reward, done
