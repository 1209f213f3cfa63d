"""Textual scenario format (``.sbs``) and builtin scenario factories.

A file holds one or more scenarios::

    # comments start with '#'
    scenario Stability
    state hot_turn initial
      wait AddHot
      block AddCold
      on AddHot -> cold_turn
    state cold_turn
      wait AddCold
      block AddHot
      on AddCold -> hot_turn

Directives inside a state: ``request``, ``wait`` and ``block`` take a comma
separated list of event names (``wait`` and ``block`` also accept ``*``), and
``on <event> -> <state>`` declares one transition.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .engine import ALL, EventSet, ScenarioProgram, SyncDeclaration

IDENT = r"[A-Za-z_][A-Za-z0-9_.]*"
_IDENT_RE = re.compile(rf"^{IDENT}$")
_ON_RE = re.compile(r"^on\s+(?P<event>\S+)\s*->\s*(?P<target>\S+)\s*$")


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: Severity = Severity.ERROR

    def format(self, origin: str = "<inline>") -> str:
        return f"{origin}:{self.line}:{self.column}: {self.severity.value}: {self.message}"


@dataclass(frozen=True)
class ScenarioSource:
    text: str
    origin: str = "<inline>"

    @classmethod
    def from_file(cls, path: str | Path) -> ScenarioSource:
        p = Path(path)
        return cls(p.read_text(encoding="utf-8"), str(p))


class ParseError(ValueError):
    def __init__(self, diagnostics: Sequence[ParseDiagnostic], origin: str = "<inline>"):
        self.diagnostics = list(diagnostics)
        self.origin = origin
        super().__init__("\n".join(d.format(origin) for d in self.errors))

    @property
    def errors(self) -> list[ParseDiagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.ERROR]


@dataclass
class _Names:
    """A parsed event list with the column of every item."""

    items: list[tuple[str, int]] = field(default_factory=list)
    wildcard: bool = False
    wildcard_col: int = 0


@dataclass
class _StateDraft:
    name: str
    line: int
    col: int
    initial: bool
    request: _Names = field(default_factory=_Names)
    wait: _Names = field(default_factory=_Names)
    block: _Names = field(default_factory=_Names)
    # (event, event col, target, target col, line)
    transitions: list[tuple[str, int, str, int, int]] = field(default_factory=list)
    directive_pos: dict[str, tuple[int, int]] = field(default_factory=dict)


@dataclass
class _ScenarioDraft:
    name: str
    line: int
    col: int
    states: list[_StateDraft] = field(default_factory=list)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.diags: list[ParseDiagnostic] = []
        self.scenarios: list[_ScenarioDraft] = []

    def error(self, line: int, col: int, msg: str) -> None:
        self.diags.append(ParseDiagnostic(line, max(col, 1), msg))

    def warn(self, line: int, col: int, msg: str) -> None:
        self.diags.append(ParseDiagnostic(line, max(col, 1), msg, Severity.WARNING))

    def parse(self) -> list[ScenarioProgram]:
        text = self.text.lstrip("﻿")
        lines = text.replace("\r\n", "\n").split("\n")
        for lineno, raw in enumerate(lines, start=1):
            self._line(lineno, raw)
        if not self.scenarios and not any(d.severity is Severity.ERROR for d in self.diags):
            self.error(1, 1, "no scenario declared")
        programs = [self._build(s) for s in self.scenarios]
        if any(d.severity is Severity.ERROR for d in self.diags):
            return []
        return [p for p in programs if p is not None]

    def _line(self, lineno: int, raw: str) -> None:
        body = raw.split("#", 1)[0].rstrip()
        stripped = body.lstrip()
        if not stripped:
            return
        col = len(body) - len(stripped) + 1
        keyword = stripped.split(None, 1)[0]
        rest = stripped[len(keyword):]
        rest_col = col + len(keyword)

        if keyword == "scenario":
            self._scenario(lineno, col, rest, rest_col)
        elif keyword == "state":
            self._state(lineno, col, rest, rest_col)
        elif keyword in ("request", "wait", "block"):
            self._directive(lineno, col, keyword, rest, rest_col)
        elif keyword == "on":
            self._transition(lineno, col, stripped)
        else:
            self.error(lineno, col, f"unknown directive {keyword!r}")

    def _scenario(self, lineno: int, col: int, rest: str, rest_col: int) -> None:
        words = rest.split()
        if len(words) != 1:
            self.error(lineno, col, "expected 'scenario <name>'")
            return
        name = words[0]
        ncol = rest_col + rest.index(name)
        if not _IDENT_RE.match(name):
            self.error(lineno, ncol, f"invalid scenario name {name!r}")
            return
        if any(s.name == name for s in self.scenarios):
            self.error(lineno, ncol, f"duplicate scenario name {name!r}")
        self.scenarios.append(_ScenarioDraft(name, lineno, col))

    def _state(self, lineno: int, col: int, rest: str, rest_col: int) -> None:
        if not self.scenarios:
            self.error(lineno, col, "'state' before any 'scenario' declaration")
            return
        words = rest.split()
        if not words or len(words) > 2 or (len(words) == 2 and words[1] != "initial"):
            self.error(lineno, col, "expected 'state <id> [initial]'")
            return
        name = words[0]
        ncol = rest_col + rest.index(name)
        if not _IDENT_RE.match(name):
            self.error(lineno, ncol, f"invalid state id {name!r}")
            return
        scen = self.scenarios[-1]
        if any(s.name == name for s in scen.states):
            self.error(lineno, ncol, f"duplicate state id {name!r}")
            return
        scen.states.append(_StateDraft(name, lineno, ncol, initial=len(words) == 2))

    def _current_state(self, lineno: int, col: int, keyword: str) -> _StateDraft | None:
        if not self.scenarios or not self.scenarios[-1].states:
            self.error(lineno, col, f"'{keyword}' outside of a state")
            return None
        return self.scenarios[-1].states[-1]

    def _directive(self, lineno: int, col: int, keyword: str, rest: str, rest_col: int) -> None:
        state = self._current_state(lineno, col, keyword)
        if state is None:
            return
        names: _Names = getattr(state, keyword)
        state.directive_pos.setdefault(keyword, (lineno, col))
        if not rest.strip():
            self.error(lineno, col, f"'{keyword}' needs at least one event")
            return
        if rest.strip() == "*":
            if keyword == "request":
                self.error(lineno, rest_col + rest.index("*"), "'request *' is not allowed")
                return
            names.wildcard = True
            names.wildcard_col = rest_col + rest.index("*")
            return
        offset = 0
        for piece in rest.split(","):
            item = piece.strip()
            icol = rest_col + offset + (piece.index(item) if item else 0)
            offset += len(piece) + 1
            if not item:
                self.error(lineno, icol, f"empty event name in '{keyword}' list")
                continue
            if not _IDENT_RE.match(item):
                self.error(lineno, icol, f"invalid event name {item!r}")
                continue
            if any(n == item for n, _ in names.items):
                self.error(lineno, icol, f"event {item!r} listed twice in '{keyword}'")
                continue
            names.items.append((item, icol))

    def _transition(self, lineno: int, col: int, stripped: str) -> None:
        state = self._current_state(lineno, col, "on")
        if state is None:
            return
        m = _ON_RE.match(stripped)
        if not m:
            self.error(lineno, col, "expected 'on <event> -> <state>'")
            return
        event, target = m.group("event"), m.group("target")
        ecol = col + m.start("event")
        tcol = col + m.start("target")
        if not _IDENT_RE.match(event):
            self.error(lineno, ecol, f"invalid event name {event!r}")
            return
        if not _IDENT_RE.match(target):
            self.error(lineno, tcol, f"invalid state id {target!r}")
            return
        if any(t[0] == event for t in state.transitions):
            self.error(lineno, ecol, f"duplicate transition on {event!r} from state {state.name!r}")
            return
        state.transitions.append((event, ecol, target, tcol, lineno))

    def _build(self, scen: _ScenarioDraft) -> ScenarioProgram | None:
        if not scen.states:
            self.error(scen.line, scen.col, f"scenario {scen.name!r} declares no states")
            return None
        initials = [s for s in scen.states if s.initial]
        if not initials:
            self.error(scen.line, scen.col, f"scenario {scen.name!r} has no initial state")
        for extra in initials[1:]:
            self.error(extra.line, extra.col, f"second initial state {extra.name!r} in scenario {scen.name!r}")

        known = {s.name for s in scen.states}
        ok = True
        for st in scen.states:
            listened = {n for n, _ in st.request.items} | {n for n, _ in st.wait.items}
            for event, ecol, target, tcol, line in st.transitions:
                if event not in listened and not st.wait.wildcard:
                    self.error(line, ecol, f"transition on {event!r}, which state {st.name!r} neither requests nor waits for")
                    ok = False
                if target not in known:
                    self.error(line, tcol, f"unknown target state {target!r}")
                    ok = False
            have = {t[0] for t in st.transitions}
            for kind in ("request", "wait"):
                for n, ncol in getattr(st, kind).items:
                    if n not in have:
                        line = st.directive_pos[kind][0]
                        self.error(line, ncol, f"state {st.name!r} {kind}s {n!r} but has no 'on {n} -> ...' transition")
                        ok = False
        if not ok or len(initials) != 1:
            return None

        self._reachability(scen, initials[0].name)
        decls = {}
        transitions = {}
        for st in scen.states:
            decls[st.name] = SyncDeclaration(
                tuple(n for n, _ in st.request.items),
                ALL if st.wait.wildcard else EventSet.of(n for n, _ in st.wait.items),
                ALL if st.block.wildcard else EventSet.of(n for n, _ in st.block.items),
            )
            for event, _, target, _, _ in st.transitions:
                transitions[(st.name, event)] = target
        return ScenarioProgram(
            scen.name, tuple(s.name for s in scen.states), initials[0].name, decls, transitions
        )

    def _reachability(self, scen: _ScenarioDraft, initial: str) -> None:
        edges = {s.name: [t[2] for t in s.transitions] for s in scen.states}
        seen = {initial}
        todo = [initial]
        while todo:
            for nxt in edges[todo.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        for st in scen.states:
            if st.name not in seen:
                self.warn(st.line, st.col, f"state {st.name!r} is unreachable from {initial!r}")


def parse_scenarios(src: ScenarioSource | str) -> list[ScenarioProgram]:
    """Parse every scenario in ``src``; raises :class:`ParseError` on any error."""
    if isinstance(src, str):
        src = ScenarioSource(src)
    parser = _Parser(src.text)
    programs = parser.parse()
    if any(d.severity is Severity.ERROR for d in parser.diags):
        raise ParseError(parser.diags, src.origin)
    return programs


def parse_scenario(src: ScenarioSource | str) -> ScenarioProgram:
    """Parse a source that holds exactly one scenario."""
    if isinstance(src, str):
        src = ScenarioSource(src)
    programs = parse_scenarios(src)
    if len(programs) != 1:
        raise ParseError([ParseDiagnostic(1, 1, f"expected exactly one scenario, found {len(programs)}")], src.origin)
    return programs[0]


def check(src: ScenarioSource | str) -> list[ParseDiagnostic]:
    """All diagnostics for ``src`` (errors and warnings) without raising."""
    if isinstance(src, str):
        src = ScenarioSource(src)
    parser = _Parser(src.text)
    parser.parse()
    return parser.diags


def load_models(paths: Iterable[str | Path]) -> list[ScenarioProgram]:
    programs: list[ScenarioProgram] = []
    for path in paths:
        programs.extend(parse_scenarios(ScenarioSource.from_file(path)))
    return programs


def _event_list(es: EventSet) -> str:
    return "*" if es.universal else ", ".join(es.events)


def render(program: ScenarioProgram) -> str:
    """Pretty-print ``program`` in the ``.sbs`` format."""
    out = [f"scenario {program.name}"]
    by_state: dict[str, list[tuple[str, str]]] = {s: [] for s in program.states}
    for (s, e), t in program.transitions.items():
        by_state[s].append((e, t))
    for s in program.states:
        decl = program.declaration(s)
        out.append(f"state {s}" + (" initial" if s == program.initial else ""))
        if decl.requested:
            out.append("  request " + ", ".join(decl.requested))
        if decl.waited_for:
            out.append("  wait " + _event_list(decl.waited_for))
        if decl.blocked:
            out.append("  block " + _event_list(decl.blocked))
        for e, t in by_state[s]:
            out.append(f"  on {e} -> {t}")
    return "\n".join(out) + "\n"


class InvalidK(ValueError):
    pass


def avoid_k_in_a_row(
    event_name: str = "IncreaseRate",
    k: int = 3,
    reset_events: Sequence[str] = ("DecreaseRate", "KeepRate"),
) -> ScenarioProgram:
    """Monitor that blocks ``event_name`` once it occurred k-1 times in a row.

    States ``count0`` .. ``count{k-1}`` track the current run length (capped at
    k-1); any reset event returns to ``count0``. The scenario only waits and
    blocks, it never requests.
    """
    if not isinstance(k, int) or k < 2:
        raise InvalidK(f"k must be an integer >= 2, got {k!r}")
    if event_name in reset_events:
        raise ValueError(f"{event_name!r} cannot also be a reset event")
    states = tuple(f"count{i}" for i in range(k))
    watched = EventSet.of(event_name, *reset_events)
    decls = {}
    transitions = {}
    for i, s in enumerate(states):
        blocked = EventSet.of(event_name) if i == k - 1 else EventSet.none()
        decls[s] = SyncDeclaration((), watched, blocked)
        transitions[(s, event_name)] = states[min(i + 1, k - 1)]
        for r in reset_events:
            transitions[(s, r)] = states[0]
    return ScenarioProgram(f"avoid_{k}_{event_name}", states, states[0], decls, transitions)


def _adder(name: str, event: str) -> ScenarioProgram:
    states = ("idle", "add1", "add2", "add3")
    decls = {"idle": SyncDeclaration((), EventSet.of("WaterLow"))}
    transitions = {("idle", "WaterLow"): "add1"}
    for i, s in enumerate(states[1:], start=1):
        decls[s] = SyncDeclaration((event,))
        transitions[(s, event)] = states[(i + 1) % 4]
    return ScenarioProgram(name, states, "idle", decls, transitions)


def water_tap_model() -> list[ScenarioProgram]:
    """The hot/cold water-tap model: AddHotWater, AddColdWater and Stability."""
    stability = ScenarioProgram(
        "Stability",
        ("hot_turn", "cold_turn"),
        "hot_turn",
        {
            "hot_turn": SyncDeclaration((), EventSet.of("AddHot"), EventSet.of("AddCold")),
            "cold_turn": SyncDeclaration((), EventSet.of("AddCold"), EventSet.of("AddHot")),
        },
        {("hot_turn", "AddHot"): "cold_turn", ("cold_turn", "AddCold"): "hot_turn"},
    )
    return [_adder("AddHotWater", "AddHot"), _adder("AddColdWater", "AddCold"), stability]


def request_once(event: str, name: str | None = None) -> ScenarioProgram:
    """Driver scenario that requests ``event`` a single time and then terminates."""
    return ScenarioProgram(
        name or f"request_{event}",
        ("pending", "done"),
        "pending",
        {"pending": SyncDeclaration((event,))},
        {("pending", event): "done"},
    )
