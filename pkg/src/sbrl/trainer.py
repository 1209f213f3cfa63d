"""Tabular Q-learning with optional scenario-driven reward shaping."""

from __future__ import annotations

import csv
import io
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .engine import ScenarioProgram, SelectionPolicy
from .netsim import Action
from .shaping import ActionMap, PenaltyConfig, ShapedEnv, Steppable

CSV_HEADER = ["episode", "total_reward", "total_candidate_reward", "violations", "blocked", "steps"]


def fmt(x: float) -> str:
    """Fixed six-decimal formatting used in every CSV this package writes."""
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    out = f"{x:.6f}"
    return "0.000000" if out == "-0.000000" else out


@dataclass(frozen=True)
class Discretizer:
    """Maps an observation onto a single integer cell via per-component bin edges.

    A component value ``v`` falls in bin ``i`` where ``i`` is the number of
    edges ``<= v``; so ``n`` edges give ``n + 1`` bins.

    The agent's state is the observation cell combined with its own last
    ``action_history`` actions (see :meth:`state`).
    """

    throughput_edges: tuple[float, ...] = (0.25, 0.5, 0.75, 0.9, 0.97, 1.03, 1.1)
    latency_edges: tuple[float, ...] = (1.0 + 1e-9, 1.02, 1.05, 1.1, 1.2, 1.3, 1.45)
    loss_edges: tuple[float, ...] = (1e-9, 0.05, 0.2)
    action_history: int = 2
    n_actions: int = len(Action)

    def __post_init__(self) -> None:
        if self.action_history < 0:
            raise ValueError(f"action_history must be >= 0, got {self.action_history}")
        for name in ("throughput_edges", "latency_edges", "loss_edges"):
            edges = tuple(float(e) for e in getattr(self, name))
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{name} must be strictly increasing, got {edges}")
            object.__setattr__(self, name, edges)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.throughput_edges) + 1, len(self.latency_edges) + 1, len(self.loss_edges) + 1)

    @property
    def n_cells(self) -> int:
        a, b, c = self.shape
        return a * b * c

    @property
    def history_states(self) -> int:
        return (self.n_actions + 1) ** self.action_history

    @property
    def n_states(self) -> int:
        return self.n_cells * self.history_states

    def push(self, history: int, action: int) -> int:
        """Shift ``action`` into an encoded history (0 encodes "no action yet")."""
        return (history * (self.n_actions + 1) + action + 1) % self.history_states

    def state(self, obs: Sequence[float], history: int = 0) -> int:
        return self.cell(obs) * self.history_states + history

    def cell(self, obs: Sequence[float]) -> int:
        _, nb, nc = self.shape
        i = bisect_right(self.throughput_edges, obs[0])
        j = bisect_right(self.latency_edges, obs[1])
        k = bisect_right(self.loss_edges, obs[2])
        return (i * nb + j) * nc + k


SINGLE_CELL = Discretizer((), (), (), action_history=0)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``decay_episodes`` episodes.

    With ``decay_episodes=None`` the decay spans ``decay_fraction`` of training.
    """

    start: float = 1.0
    end: float = 0.05
    decay_episodes: int | None = None
    decay_fraction: float = 0.5

    def value(self, episode: int, total_episodes: int) -> float:
        span = self.decay_episodes
        if span is None:
            span = max(1, int(round(self.decay_fraction * total_episodes)))
        if episode >= span:
            return self.end
        return self.start + (self.end - self.start) * episode / span


class QTable:
    """Action values per discretized cell; unvisited entries read as zero."""

    def __init__(
        self,
        n_cells: int,
        n_actions: int = len(Action),
        learning_rate: float = 0.1,
        gamma: float = 0.95,
        epsilon: EpsilonSchedule = EpsilonSchedule(),
    ):
        if not 0 < learning_rate <= 1:
            raise ValueError(f"learning_rate must lie in (0, 1], got {learning_rate}")
        if not 0 <= gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        self.n_actions = n_actions
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.epsilon = epsilon
        self.rows: list[list[float]] = [[0.0] * n_actions for _ in range(n_cells)]

    @property
    def values(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)

    @values.setter
    def values(self, arr: Any) -> None:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (len(self.rows), self.n_actions):
            raise ValueError(f"expected shape {(len(self.rows), self.n_actions)}, got {arr.shape}")
        self.rows = arr.tolist()

    def greedy(self, cell: int) -> int:
        """Highest-valued action; ties go to the lowest action id."""
        row = self.rows[cell]
        best = 0
        for a in range(1, len(row)):
            if row[a] > row[best]:
                best = a
        return best

    def update(self, cell: int, action: int, reward: float, next_cell: int) -> None:
        row = self.rows[cell]
        target = reward + self.gamma * max(self.rows[next_cell])
        row[action] += self.learning_rate * (target - row[action])

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fp:
            np.save(fp, self.values)

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> QTable:
        arr = np.load(path)
        q = cls(arr.shape[0], arr.shape[1], **kwargs)
        q.values = arr
        return q


@dataclass
class EpisodeRecord:
    index: int
    total_reward: float
    total_candidate_reward: float
    violation_count: int
    blocked_count: int
    steps: int
    actions: list[int] = field(default_factory=list, repr=False, compare=False)


@dataclass
class TrainLog:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for e in self.episodes:
            writer.writerow(
                [e.index, fmt(e.total_reward), fmt(e.total_candidate_reward), e.violation_count, e.blocked_count, e.steps]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            fp.write(self.to_csv())

    def candidate_rewards(self) -> list[float]:
        return [e.total_candidate_reward for e in self.episodes]

    def tail(self, window: int) -> list[EpisodeRecord]:
        return self.episodes[-window:] if window > 0 else []

    def violation_frequency(self, window: int) -> float:
        """Violations per step over the last ``window`` episodes."""
        tail = self.tail(window)
        steps = sum(e.steps for e in tail)
        return sum(e.violation_count for e in tail) / steps if steps else 0.0

    def mean_candidate_reward(self, window: int) -> float:
        tail = self.tail(window)
        return sum(e.total_candidate_reward for e in tail) / len(tail) if tail else 0.0


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    scale = 1.0
    for r in rewards:
        total += scale * r
        scale *= gamma
    return total


def count_violations(actions: Iterable[int], k: int, target: int = Action.IncreaseRate) -> int:
    """Number of steps that are at depth >= k of a run of ``target`` actions."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    run = 0
    count = 0
    for a in actions:
        run = run + 1 if a == target else 0
        if run >= k:
            count += 1
    return count


def convergence_episode(log: TrainLog | Sequence[float], window: int, threshold: float) -> int | None:
    """First episode whose trailing ``window``-episode mean candidate reward reaches ``threshold``.

    Returns None when that never happens.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = log.candidate_rewards() if isinstance(log, TrainLog) else list(log)
    running = 0.0
    for i, v in enumerate(values):
        running += v
        if i >= window:
            running -= values[i - window]
        if i >= window - 1 and running / window >= threshold:
            return i
    return None


@dataclass(frozen=True)
class Shaping:
    """Everything needed to put a scenario model in the training loop."""

    programs: tuple[ScenarioProgram, ...]
    action_map: ActionMap | None = None
    penalty: PenaltyConfig = PenaltyConfig()
    policy: SelectionPolicy | None = None

    def wrap(self, env: Steppable, seed: int) -> ShapedEnv:
        return ShapedEnv(env, self.programs, self.action_map, self.penalty, self.policy, seed=seed)


def _run(
    env: Steppable,
    q: QTable,
    discretizer: Discretizer,
    episodes: int,
    seed: int,
    shaping: Shaping | None,
    violation_k: int,
    learn: bool,
    keep_actions: bool,
) -> TrainLog:
    rng = random.Random(seed)
    shaped = shaping.wrap(env, seed) if shaping is not None else None
    n_actions = q.n_actions
    if discretizer.n_states != len(q.rows):
        raise ValueError(f"Q-table has {len(q.rows)} rows but the discretizer yields {discretizer.n_states} states")
    state_of = discretizer.state
    push = discretizer.push
    greedy = q.greedy
    update = q.update
    log = TrainLog(seed=seed)

    for ep in range(episodes):
        eps = q.epsilon.value(ep, episodes) if learn else 0.0
        obs = shaped.reset() if shaped is not None else env.reset()
        history = 0
        cell = state_of(obs, history)
        total = total_cand = 0.0
        blocked_count = steps = 0
        actions: list[int] = []
        done = False
        while not done:
            if eps > 0.0 and rng.random() < eps:
                action = rng.randrange(n_actions)
            else:
                action = greedy(cell)
            if shaped is not None:
                res = shaped.step(action)
                obs, reward, done, cand = res.observation, res.reward, res.done, res.candidate_reward
                if res.blocked:
                    blocked_count += 1
            else:
                obs, reward, done = env.step(action)
                cand = reward
            history = push(history, action)
            next_cell = state_of(obs, history)
            if learn:
                update(cell, action, reward, next_cell)
            cell = next_cell
            total += reward
            total_cand += cand
            steps += 1
            actions.append(action)
        log.episodes.append(
            EpisodeRecord(
                ep,
                total,
                total_cand,
                count_violations(actions, violation_k),
                blocked_count,
                steps,
                actions if keep_actions else [],
            )
        )
    return log


def train(
    env: Steppable,
    q: QTable,
    episodes: int,
    seed: int = 0,
    discretizer: Discretizer = Discretizer(),
    shaping: Shaping | None = None,
    violation_k: int = 3,
    keep_actions: bool = False,
) -> tuple[QTable, TrainLog]:
    """Epsilon-greedy Q-learning on the shaped reward (or the raw reward without ``shaping``).

    ``q`` is updated in place and returned together with the per-episode log.
    """
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    log = _run(env, q, discretizer, episodes, seed, shaping, violation_k, True, keep_actions)
    return q, log


def evaluate_greedy(
    q: QTable,
    env: Steppable,
    episodes: int,
    seed: int = 0,
    discretizer: Discretizer = Discretizer(),
    shaping: Shaping | None = None,
    violation_k: int = 3,
    keep_actions: bool = False,
) -> TrainLog:
    """Run the greedy policy without learning."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    return _run(env, q, discretizer, episodes, seed, shaping, violation_k, False, keep_actions)
