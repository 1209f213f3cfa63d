"""Scenario-based execution engine.

Scenarios are explicit transition systems. At every synchronization point a
scenario declares the events it requests, waits for and blocks; an event is
enabled when at least one live scenario requests it and no live scenario
blocks it. The engine supports the classic run-to-completion loop as well as
super steps, where the model runs until quiescent and then waits for an
externally injected (agent) event.
"""

from __future__ import annotations

import csv
import os
import random
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import IO, Iterable, Mapping, Sequence

DEFAULT_MAX_STEPS = 10_000
MAX_STEPS_ENV_VAR = "SBRL_MAX_STEPS"


def default_max_steps() -> int:
    """Step budget for engine loops, overridable through ``SBRL_MAX_STEPS``."""
    raw = os.environ.get(MAX_STEPS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_STEPS
    value = int(raw)
    if value <= 0:
        raise ValueError(f"{MAX_STEPS_ENV_VAR} must be positive, got {raw!r}")
    return value


class EngineError(Exception):
    pass


class InvalidProgram(EngineError, ValueError):
    pass


class MissingTransition(EngineError):
    def __init__(self, scenario: str, state: str, event: str):
        super().__init__(
            f"scenario {scenario!r} listens for {event!r} in state {state!r} "
            "but has no transition for it"
        )
        self.scenario = scenario
        self.state = state
        self.event = event


class StepBudgetExceeded(EngineError):
    """Raised when a loop hits its step budget while events are still enabled."""

    def __init__(self, max_steps: int, events: list[Event]):
        super().__init__(f"step budget of {max_steps} exhausted with events still enabled")
        self.max_steps = max_steps
        self.events = events


class Event(str):
    """A named event. Equality and hashing are by name."""

    __slots__ = ()

    def __new__(cls, name: str) -> Event:
        if isinstance(name, Event):
            return name
        if not isinstance(name, str) or not name:
            raise ValueError(f"event name must be a non-empty string, got {name!r}")
        return super().__new__(cls, name)

    @property
    def name(self) -> str:
        return str.__str__(self)

    def __repr__(self) -> str:
        return f"Event({str.__str__(self)!r})"


@dataclass(frozen=True)
class EventSet:
    """Either an explicit collection of events, every event, or no event.

    Use the :meth:`of`, :meth:`all` and :meth:`none` constructors.
    """

    events: tuple[Event, ...] = ()
    universal: bool = False
    _members: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.universal and self.events:
            raise ValueError("a universal EventSet cannot list explicit events")
        members = frozenset(self.events)
        if len(members) != len(self.events):
            raise ValueError(f"duplicate events in {list(self.events)}")
        object.__setattr__(self, "_members", members)

    @classmethod
    def of(cls, *names: str | Iterable[str]) -> EventSet:
        flat: list[Event] = []
        for item in names:
            if isinstance(item, str):
                flat.append(Event(item))
            else:
                flat.extend(Event(n) for n in item)
        return cls(tuple(flat))

    @classmethod
    def all(cls) -> EventSet:
        return cls((), universal=True)

    @classmethod
    def none(cls) -> EventSet:
        return cls(())

    @property
    def is_empty(self) -> bool:
        return not self.universal and not self.events

    def __contains__(self, event: object) -> bool:
        return self.universal or event in self._members

    def __bool__(self) -> bool:
        return not self.is_empty

    def __len__(self) -> int:
        if self.universal:
            raise TypeError("the universal EventSet has no finite length")
        return len(self.events)

    def __iter__(self):
        if self.universal:
            raise TypeError("the universal EventSet cannot be enumerated")
        return iter(self.events)

    def __repr__(self) -> str:
        if self.universal:
            return "EventSet.all()"
        if not self.events:
            return "EventSet.none()"
        return "EventSet.of(" + ", ".join(repr(e.name) for e in self.events) + ")"


ALL = EventSet.all()
NONE = EventSet.none()


@dataclass(frozen=True)
class SyncDeclaration:
    requested: tuple[Event, ...] = ()
    waited_for: EventSet = NONE
    blocked: EventSet = NONE

    def __post_init__(self) -> None:
        req = tuple(Event(e) for e in self.requested)
        if len(set(req)) != len(req):
            raise ValueError(f"duplicate requested events in {list(req)}")
        object.__setattr__(self, "requested", req)

    @property
    def is_terminal(self) -> bool:
        return not self.requested and self.waited_for.is_empty

    def listens(self, event: str) -> bool:
        """True when triggering ``event`` wakes a scenario at this declaration."""
        return event in self.requested or event in self.waited_for


def sync(
    request: Iterable[str] = (),
    wait: EventSet | Iterable[str] = (),
    block: EventSet | Iterable[str] = (),
) -> SyncDeclaration:
    """Shorthand for building a :class:`SyncDeclaration` from plain names."""
    if not isinstance(wait, EventSet):
        wait = EventSet.of(wait)
    if not isinstance(block, EventSet):
        block = EventSet.of(block)
    return SyncDeclaration(tuple(request), wait, block)


@dataclass(frozen=True)
class ScenarioProgram:
    """A scenario as a finite transition system over synchronization points.

    ``transitions`` maps ``(state, event name)`` to the next state. A transition
    must exist for exactly the events a state requests or waits for. States
    that wait for every event (``EventSet.all()``) only need transitions for
    the events that move them; every other event is an implicit self-loop.
    """

    name: str
    states: tuple[str, ...]
    initial: str
    declarations: Mapping[str, SyncDeclaration]
    transitions: Mapping[tuple[str, str], str]

    def __post_init__(self) -> None:
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "declarations", MappingProxyType(dict(self.declarations)))
        object.__setattr__(
            self,
            "transitions",
            MappingProxyType({(s, Event(e)): t for (s, e), t in self.transitions.items()}),
        )
        self._validate()

    def _validate(self) -> None:
        known = set(self.states)
        if not self.name:
            raise InvalidProgram("scenario name must be non-empty")
        if len(known) != len(self.states):
            raise InvalidProgram(f"{self.name}: duplicate state ids")
        if self.initial not in known:
            raise InvalidProgram(f"{self.name}: initial state {self.initial!r} is not a state")
        for s in self.declarations:
            if s not in known:
                raise InvalidProgram(f"{self.name}: declaration for unknown state {s!r}")
        for (s, e), target in self.transitions.items():
            if s not in known:
                raise InvalidProgram(f"{self.name}: transition from unknown state {s!r}")
            if target not in known:
                raise InvalidProgram(f"{self.name}: transition to unknown state {target!r}")
            if not self.declaration(s).listens(e):
                raise InvalidProgram(
                    f"{self.name}: transition on {e!r} from {s!r}, which neither requests nor waits for it"
                )
        for s in self.states:
            decl = self.declaration(s)
            listened = list(decl.requested)
            if not decl.waited_for.universal:
                listened.extend(decl.waited_for.events)
            for e in listened:
                if (s, e) not in self.transitions:
                    raise InvalidProgram(f"{self.name}: state {s!r} listens for {e!r} but has no transition")

    def declaration(self, state: str) -> SyncDeclaration:
        return self.declarations.get(state, _TERMINAL)

    def next_state(self, state: str, event: str) -> str | None:
        """Successor of ``state`` on ``event``; None when the state does not listen."""
        decl = self.declaration(state)
        if not decl.listens(event):
            return None
        target = self.transitions.get((state, event))
        if target is None:
            if decl.waited_for.universal:
                return state
            raise MissingTransition(self.name, state, event)
        return target

    def alphabet(self) -> list[Event]:
        """Every event explicitly mentioned by the program, in first-seen order."""
        seen: dict[Event, None] = {}
        for s in self.states:
            decl = self.declaration(s)
            for e in decl.requested:
                seen.setdefault(e, None)
            for es in (decl.waited_for, decl.blocked):
                if not es.universal:
                    for e in es.events:
                        seen.setdefault(e, None)
        for (_, e) in self.transitions:
            seen.setdefault(e, None)
        return list(seen)


_TERMINAL = SyncDeclaration()


class SelectionPolicy:
    """Chooses one event from a non-empty, canonically ordered enabled list."""

    name = "policy"

    def choose(self, enabled: Sequence[Event], rng: random.Random) -> Event:
        raise NotImplementedError


class FirstEnabled(SelectionPolicy):
    name = "first"

    def choose(self, enabled, rng):
        return enabled[0]


class SeededRandom(SelectionPolicy):
    name = "random"

    def choose(self, enabled, rng):
        if len(enabled) == 1:
            return enabled[0]
        return enabled[rng.randrange(len(enabled))]


class Priority(SelectionPolicy):
    """Highest priority wins; unknown events rank at ``default``; ties keep canonical order."""

    name = "priority"

    def __init__(self, priorities: Mapping[str, int] | None = None, default: int = 0):
        self.priorities = dict(priorities or {})
        self.default = default

    def choose(self, enabled, rng):
        best = enabled[0]
        best_p = self.priorities.get(best, self.default)
        for e in enabled[1:]:
            p = self.priorities.get(e, self.default)
            if p > best_p:
                best, best_p = e, p
        return best


POLICIES = {"first": FirstEnabled, "random": SeededRandom, "priority": Priority}


@dataclass(frozen=True)
class TraceRecord:
    step: int
    event: Event
    source: str
    enabled_count: int | None


class Execution:
    """A running composition of scenarios.

    Scenario registration order is the canonical order used for tie-breaking
    everywhere. Triggered events are appended to :attr:`trace`; the parallel
    :attr:`records` list says which policy (or ``"external"``) produced each.
    """

    def __init__(self, programs: Iterable[ScenarioProgram] = (), seed: int = 0):
        self.programs: tuple[ScenarioProgram, ...] = tuple(programs)
        self.seed = seed
        self.reset()

    def reset(self) -> None:
        """Return every scenario to its initial state and start a fresh trace."""
        self.states: list[str] = [p.initial for p in self.programs]
        self.alive: list[bool] = [not p.declaration(p.initial).is_terminal for p in self.programs]
        self.trace: list[Event] = []
        self.records: list[TraceRecord] = []
        self._rng: random.Random | None = None

    @property
    def rng(self) -> random.Random:
        """Selection RNG, seeded from :attr:`seed` on first use."""
        if self._rng is None:
            self._rng = random.Random(self.seed)
        return self._rng

    def copy(self) -> Execution:
        other = Execution.__new__(Execution)
        other.programs = self.programs
        other.seed = self.seed
        other.states = list(self.states)
        other.alive = list(self.alive)
        other.trace = list(self.trace)
        other.records = list(self.records)
        other._rng = None
        if self._rng is not None:
            other._rng = random.Random()
            other._rng.setstate(self._rng.getstate())
        return other

    def snapshot(self) -> tuple:
        """Hashable view of the scenario states, for comparisons in tests and tools."""
        return tuple(zip(self.states, self.alive))

    def live_declarations(self) -> list[SyncDeclaration]:
        return [
            p.declaration(s)
            for p, s, up in zip(self.programs, self.states, self.alive)
            if up
        ]

    def enabled_events(self) -> list[Event]:
        """Requested-and-unblocked events in canonical order (no duplicates)."""
        decls = self.live_declarations()
        blocked = [d.blocked for d in decls if not d.blocked.is_empty]
        out: list[Event] = []
        for d in decls:
            for e in d.requested:
                if e in out:
                    continue
                if any(e in b for b in blocked):
                    continue
                out.append(e)
        return out

    def is_blocked(self, event: str) -> bool:
        for p, s, up in zip(self.programs, self.states, self.alive):
            if up and event in p.declaration(s).blocked:
                return True
        return False

    def select_event(self, policy: SelectionPolicy | None = None) -> Event | None:
        """Pick the next event per ``policy``; None means quiescent."""
        enabled = self.enabled_events()
        if not enabled:
            return None
        return (policy or FirstEnabled()).choose(enabled, self.rng)

    def advance(self, event: str, *, source: str = "external", enabled_count: int | None = None) -> None:
        """Trigger ``event``: wake every live scenario that requests or waits for it.

        The event does not have to be enabled; agent actions advance the model
        even when blocked.
        """
        event = Event(event)
        self.trace.append(event)
        self.records.append(TraceRecord(len(self.trace) - 1, event, source, enabled_count))
        for i, p in enumerate(self.programs):
            if not self.alive[i]:
                continue
            nxt = p.next_state(self.states[i], event)
            if nxt is None:
                continue
            self.states[i] = nxt
            if p.declaration(nxt).is_terminal:
                self.alive[i] = False

    def run_to_completion(
        self, policy: SelectionPolicy | None = None, max_steps: int | None = None
    ) -> list[Event]:
        """Select and trigger events until quiescent; returns the events triggered."""
        policy = policy or FirstEnabled()
        if max_steps is None:
            max_steps = default_max_steps()
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        fired: list[Event] = []
        for _ in range(max_steps):
            enabled = self.enabled_events()
            if not enabled:
                return fired
            event = policy.choose(enabled, self.rng)
            self.advance(event, source=policy.name, enabled_count=len(enabled))
            fired.append(event)
        if self.enabled_events():
            raise StepBudgetExceeded(max_steps, fired)
        return fired

    def super_step(
        self, policy: SelectionPolicy | None = None, max_steps: int | None = None
    ) -> list[Event]:
        """Run internal events until quiescent, leaving the model ready for an agent action."""
        return self.run_to_completion(policy, max_steps)

    def handle_agent_action(self, action: str) -> bool:
        """Report whether ``action`` is blocked in the current state, then advance on it."""
        blocked = self.is_blocked(action)
        self.advance(action, source="agent")
        return blocked


def write_trace(events: Iterable[str], fp: IO[str]) -> None:
    for e in events:
        fp.write(f"{e}\n")


def write_trace_csv(records: Iterable[TraceRecord], fp: IO[str]) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["step", "event", "policy", "enabled_count"])
    for r in records:
        writer.writerow([r.step, r.event, r.source, "" if r.enabled_count is None else r.enabled_count])
