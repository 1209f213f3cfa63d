"""Reward shaping driven by a scenario-based model.

The agent's actions map one-to-one onto model events. Each environment step
is mirrored into the model; when the action is blocked in the model's
pre-step state the environment's candidate reward ``r`` is replaced by
``alpha * r - delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .engine import Event, Execution, FirstEnabled, SelectionPolicy


class Steppable(Protocol):
    def reset(self) -> Any: ...

    def step(self, action: int) -> tuple[Any, float, bool]: ...


class UnknownAction(KeyError):
    pass


class ActionMap:
    """Bijection between 0-based action ids and event names."""

    def __init__(self, events: Sequence[str]):
        evs = tuple(Event(e) for e in events)
        if len(set(evs)) != len(evs):
            raise ValueError(f"action events must be distinct, got {list(evs)}")
        if not evs:
            raise ValueError("an ActionMap needs at least one action")
        self._events = evs
        self._ids = {e: i for i, e in enumerate(evs)}

    @classmethod
    def from_mapping(cls, pairs: Mapping[int, str]) -> ActionMap:
        ids = sorted(pairs)
        if ids != list(range(len(ids))):
            raise ValueError(f"action ids must be 0..n-1, got {ids}")
        return cls([pairs[i] for i in ids])

    def __len__(self) -> int:
        return len(self._events)

    def event(self, action: int) -> Event:
        if not isinstance(action, int) or not 0 <= action < len(self._events):
            raise UnknownAction(action)
        return self._events[action]

    def action(self, event: str) -> int:
        try:
            return self._ids[event]
        except KeyError:
            raise UnknownAction(event) from None

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events


@dataclass(frozen=True)
class PenaltyConfig:
    alpha: float = 0.0
    delta: float = 4.5

    def __post_init__(self) -> None:
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [-1, 1], got {self.alpha}")
        if not self.delta >= 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


def shape_reward(candidate: float, blocked: bool, cfg: PenaltyConfig) -> float:
    if blocked:
        return cfg.alpha * candidate - cfg.delta
    return candidate


@dataclass(frozen=True)
class ShapedStepResult:
    observation: Any
    reward: float
    done: bool
    blocked: bool
    candidate_reward: float


def shaped_step(
    env: Steppable,
    execution: Execution,
    action: int,
    action_map: ActionMap,
    cfg: PenaltyConfig,
    policy: SelectionPolicy | None = None,
    max_steps: int | None = None,
) -> ShapedStepResult:
    """One environment step with the model in the loop.

    ``execution`` must be quiescent. It is advanced on the action's event
    (blocked or not) and then run through a super step, so it is quiescent
    again on return.
    """
    event = action_map.event(action)
    obs, candidate, done = env.step(action)
    blocked = execution.handle_agent_action(event)
    reward = shape_reward(candidate, blocked, cfg)
    execution.super_step(policy, max_steps)
    return ShapedStepResult(obs, reward, done, blocked, candidate)


class ShapedEnv:
    """Environment wrapper that keeps a scenario model in lockstep with the agent.

    ``reset`` resets both the environment and the model and runs the model's
    opening super step. ``step`` returns a :class:`ShapedStepResult`.
    """

    def __init__(
        self,
        env: Steppable,
        programs: Iterable = (),
        action_map: ActionMap | None = None,
        penalty: PenaltyConfig | None = None,
        policy: SelectionPolicy | None = None,
        seed: int = 0,
        max_steps: int | None = None,
    ):
        self.env = env
        self.execution = Execution(programs, seed=seed)
        if action_map is None:
            action_map = ActionMap(getattr(env, "action_events"))
        self.action_map = action_map
        self.penalty = penalty or PenaltyConfig()
        self.policy = policy or FirstEnabled()
        self.max_steps = max_steps

    def reset(self) -> Any:
        obs = self.env.reset()
        self.execution.reset()
        self.execution.super_step(self.policy, self.max_steps)
        return obs

    def step(self, action: int) -> ShapedStepResult:
        return shaped_step(
            self.env, self.execution, action, self.action_map, self.penalty, self.policy, self.max_steps
        )
