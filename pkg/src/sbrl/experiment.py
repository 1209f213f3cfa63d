"""Experiment configuration and the baseline-vs-shaped training harness.

Configuration files are flat ``key = value`` text with dotted section
prefixes, for example::

    # comments start with '#'
    link.capacity = 10
    penalty.delta = 4.5
    scenario.kind = avoid_k
    training.seeds = 0, 1, 2, 3, 4

Every key has a default (see :func:`dump_config`); unknown keys are errors.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .dsl import avoid_k_in_a_row, load_models
from .engine import POLICIES, ScenarioProgram, SelectionPolicy
from .netsim import Action, InvalidConfig, LinkConfig, LinkEnv
from .shaping import PenaltyConfig
from .trainer import (
    Discretizer,
    EpsilonSchedule,
    QTable,
    Shaping,
    TrainLog,
    convergence_episode,
    evaluate_greedy,
    fmt,
    train,
)

log = logging.getLogger(__name__)

MODES = ("baseline", "shaped")


@dataclass(frozen=True)
class LinkSection:
    capacity: float = 10.0
    base_latency: float = 4.0
    queue_capacity: float = 20.0
    delta_rate: float = 0.05
    min_rate: float = 1.0
    max_rate: float = 30.0
    # episodes start below capacity so the sender has to ramp up
    initial_rate: float = 1.0
    episode_length: int = 400
    reward_weights: tuple[float, ...] = (10.0, 1.0, 5.0)
    seed: int = 0
    loss_jitter: float = 0.0


@dataclass(frozen=True)
class PenaltySection:
    alpha: float = 0.0
    delta: float = 4.5


@dataclass(frozen=True)
class ScenarioSection:
    kind: str = "avoid_k"
    path: str = ""
    event: str = "IncreaseRate"
    k: int = 3
    reset_events: tuple[str, ...] = ("DecreaseRate", "KeepRate")
    policy: str = "first"


@dataclass(frozen=True)
class TrainingSection:
    episodes: int = 2000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    learning_rate: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    throughput_edges: tuple[float, ...] = Discretizer.throughput_edges
    latency_edges: tuple[float, ...] = Discretizer.latency_edges
    loss_edges: tuple[float, ...] = Discretizer.loss_edges
    action_history: int = 2
    window: int = 20
    convergence_fraction: float = 0.9
    eval_episodes: int = 10


@dataclass(frozen=True)
class CompareSection:
    min_reduction: float = 10.0
    min_retention: float = 0.7
    min_later_fraction: float = 0.8


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    link: LinkSection = LinkSection()
    penalty: PenaltySection = PenaltySection()
    scenario: ScenarioSection = ScenarioSection()
    training: TrainingSection = TrainingSection()
    compare: CompareSection = CompareSection()
    output: OutputSection = OutputSection()

    def replace(self, **dotted: Any) -> ExperimentConfig:
        """Copy with ``section__field=value`` overrides (``training__episodes=10``)."""
        sections: dict[str, dict[str, Any]] = {}
        for key, value in dotted.items():
            sec, _, name = key.partition("__")
            sections.setdefault(sec, {})[name] = value
        changes = {sec: dataclasses.replace(getattr(self, sec), **vals) for sec, vals in sections.items()}
        return dataclasses.replace(self, **changes)

    def link_config(self) -> LinkConfig:
        link = self.link
        return LinkConfig(
            capacity=link.capacity,
            base_latency=link.base_latency,
            queue_capacity=link.queue_capacity,
            delta_rate=link.delta_rate,
            min_rate=link.min_rate,
            max_rate=link.max_rate,
            episode_length=link.episode_length,
            reward_weights=tuple(link.reward_weights),
            seed=link.seed,
            initial_rate=link.initial_rate,
            loss_jitter=link.loss_jitter,
        )

    def penalty_config(self) -> PenaltyConfig:
        return PenaltyConfig(self.penalty.alpha, self.penalty.delta)

    def discretizer(self) -> Discretizer:
        t = self.training
        return Discretizer(t.throughput_edges, t.latency_edges, t.loss_edges, t.action_history)

    def qtable(self) -> QTable:
        t = self.training
        schedule = EpsilonSchedule(t.epsilon_start, t.epsilon_end, None, t.epsilon_decay_fraction)
        return QTable(self.discretizer().n_states, len(Action), t.learning_rate, t.gamma, schedule)

    def programs(self) -> list[ScenarioProgram]:
        sc = self.scenario
        if sc.kind == "avoid_k":
            return [avoid_k_in_a_row(sc.event, sc.k, sc.reset_events)]
        if sc.kind == "dsl":
            if not sc.path:
                raise InvalidConfig("scenario.path is required when scenario.kind = dsl")
            return load_models([sc.path])
        raise InvalidConfig(f"scenario.kind must be avoid_k or dsl, got {sc.kind!r}")

    def policy(self) -> SelectionPolicy:
        try:
            return POLICIES[self.scenario.policy]()
        except KeyError:
            raise InvalidConfig(f"scenario.policy must be one of {sorted(POLICIES)}") from None


def _field_types(section_cls: type) -> dict[str, Any]:
    return typing.get_type_hints(section_cls)


def _convert(raw: str, annotation: Any, key: str) -> Any:
    origin = typing.get_origin(annotation)
    try:
        if origin is tuple:
            (item_type, *_rest) = typing.get_args(annotation)
            items = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(item_type(p) for p in items)
        if annotation is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        return raw
    except ValueError:
        raise InvalidConfig(f"{key}: cannot parse {raw!r}") from None


def config_from_pairs(pairs: Mapping[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    overrides: dict[str, Any] = {}
    section_types = _field_types(ExperimentConfig)
    for key, raw in pairs.items():
        sec, dot, name = key.partition(".")
        if not dot or sec not in section_types:
            raise InvalidConfig(f"unknown config key {key!r}")
        fields = _field_types(section_types[sec])
        if name not in fields:
            raise InvalidConfig(f"unknown config key {key!r}")
        overrides[f"{sec}__{name}"] = _convert(raw.strip(), fields[name], key)
    return cfg.replace(**overrides)


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise InvalidConfig(f"{origin}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in pairs:
            raise InvalidConfig(f"{origin}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return config_from_pairs(pairs)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key with its value, in the file format :func:`parse_config_text` reads."""
    lines = []
    for sec in dataclasses.fields(cfg):
        section = getattr(cfg, sec.name)
        for f in dataclasses.fields(section):
            lines.append(f"{sec.name}.{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def validate(cfg: ExperimentConfig) -> None:
    """Raise InvalidConfig for values the component constructors would reject."""
    try:
        cfg.link_config()
        cfg.penalty_config()
        cfg.discretizer()
        cfg.qtable()
        cfg.policy()
    except InvalidConfig:
        raise
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    t = cfg.training
    if t.episodes <= 0:
        raise InvalidConfig("training.episodes must be positive")
    if not t.seeds:
        raise InvalidConfig("training.seeds must list at least one seed")
    if len(set(t.seeds)) != len(t.seeds):
        raise InvalidConfig("training.seeds must be distinct")
    if t.window < 1:
        raise InvalidConfig("training.window must be >= 1")
    if t.eval_episodes < 1:
        raise InvalidConfig("training.eval_episodes must be >= 1")
    if cfg.scenario.k < 2:
        raise InvalidConfig("scenario.k must be >= 2")


@dataclass
class RunResult:
    mode: str
    seed: int
    log: TrainLog
    q: QTable


def run_training(cfg: ExperimentConfig, mode: str, seed: int) -> RunResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    env = LinkEnv(cfg.link_config())
    shaping = None
    if mode == "shaped":
        shaping = Shaping(tuple(cfg.programs()), None, cfg.penalty_config(), cfg.policy())
    q, tlog = train(
        env, cfg.qtable(), cfg.training.episodes, seed, cfg.discretizer(), shaping, cfg.scenario.k
    )
    tlog.config = {"mode": mode, "seed": seed}
    return RunResult(mode, seed, tlog, q)


def run_evaluation(cfg: ExperimentConfig, q: QTable, mode: str, seed: int) -> TrainLog:
    env = LinkEnv(cfg.link_config())
    shaping = None
    if mode == "shaped":
        shaping = Shaping(tuple(cfg.programs()), None, cfg.penalty_config(), cfg.policy())
    return evaluate_greedy(q, env, cfg.training.eval_episodes, seed, cfg.discretizer(), shaping, cfg.scenario.k)


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fp.write(text)


def _csv_text(rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _conv(value: int | None) -> str:
    return "NotConverged" if value is None else str(value)


@dataclass
class SeedSummary:
    seed: int
    final_mean_reward: float
    final_mean_candidate_reward: float
    final_violation_frequency: float
    convergence: int | None


def summarize(tlog: TrainLog, window: int, threshold: float) -> SeedSummary:
    tail = tlog.tail(window)
    mean_reward = sum(e.total_reward for e in tail) / len(tail) if tail else 0.0
    return SeedSummary(
        tlog.seed,
        mean_reward,
        tlog.mean_candidate_reward(window),
        tlog.violation_frequency(window),
        convergence_episode(tlog, window, threshold),
    )


def write_run(out: Path, result: RunResult) -> None:
    result.log.write_csv(out / f"{result.mode}_seed{result.seed}.csv")
    result.q.save(out / f"qtable_{result.mode}_seed{result.seed}.npy")


def write_summary(out: Path, summaries: list[SeedSummary]) -> None:
    rows = [["seed", "final_mean_reward", "final_mean_candidate_reward", "final_violation_frequency", "convergence_episode"]]
    for s in summaries:
        rows.append(
            [s.seed, fmt(s.final_mean_reward), fmt(s.final_mean_candidate_reward), fmt(s.final_violation_frequency), _conv(s.convergence)]
        )
    _write(out / "summary.csv", _csv_text(rows))


def train_mode(cfg: ExperimentConfig, mode: str, out: Path) -> list[RunResult]:
    """Train every seed in ``mode``; writes per-seed logs, Q-tables and ``summary.csv``.

    Without a baseline to compare against, convergence is measured against
    ``convergence_fraction`` of the run's own final-window mean.
    """
    out.mkdir(parents=True, exist_ok=True)
    window = cfg.training.window
    results, summaries = [], []
    for seed in cfg.training.seeds:
        log.info("training %s seed %d", mode, seed)
        res = run_training(cfg, mode, seed)
        write_run(out, res)
        threshold = cfg.training.convergence_fraction * res.log.mean_candidate_reward(window)
        summaries.append(summarize(res.log, window, threshold))
        results.append(res)
    write_summary(out, summaries)
    _write(out / "config.txt", dump_config(cfg))
    return results


@dataclass
class CompareRow:
    seed: int
    baseline: SeedSummary
    shaped: SeedSummary

    @property
    def reduction(self) -> float:
        return _ratio(self.baseline.final_violation_frequency, self.shaped.final_violation_frequency)

    @property
    def shaped_not_earlier(self) -> bool:
        b, s = self.baseline.convergence, self.shaped.convergence
        return s is not None and (b is None or s >= b)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return math.inf if num > 0 else 0.0


@dataclass
class Criterion:
    name: str
    value: str
    threshold: str
    passed: bool


@dataclass
class CompareReport:
    rows: list[CompareRow]
    criteria: list[Criterion]
    insufficient_data: bool

    @property
    def passed(self) -> bool:
        return not self.insufficient_data and all(c.passed for c in self.criteria)

    @property
    def exit_code(self) -> int:
        if self.insufficient_data:
            return 3
        return 0 if self.passed else 1

    def mean(self, attr: str, mode: str) -> float:
        vals = [getattr(getattr(r, mode), attr) for r in self.rows]
        return sum(vals) / len(vals)

    def to_csv(self) -> str:
        rows: list[list[Any]] = [[
            "seed",
            "baseline_violation_frequency",
            "shaped_violation_frequency",
            "reduction_ratio",
            "baseline_mean_candidate_reward",
            "shaped_mean_candidate_reward",
            "baseline_convergence_episode",
            "shaped_convergence_episode",
        ]]
        for r in self.rows:
            rows.append([
                r.seed,
                fmt(r.baseline.final_violation_frequency),
                fmt(r.shaped.final_violation_frequency),
                fmt(r.reduction),
                fmt(r.baseline.final_mean_candidate_reward),
                fmt(r.shaped.final_mean_candidate_reward),
                _conv(r.baseline.convergence),
                _conv(r.shaped.convergence),
            ])
        bv = self.mean("final_violation_frequency", "baseline")
        sv = self.mean("final_violation_frequency", "shaped")
        later = sum(r.shaped_not_earlier for r in self.rows)
        rows.append([
            "mean",
            fmt(bv),
            fmt(sv),
            fmt(_ratio(bv, sv)),
            fmt(self.mean("final_mean_candidate_reward", "baseline")),
            fmt(self.mean("final_mean_candidate_reward", "shaped")),
            "",
            f"shaped_not_earlier={later}/{len(self.rows)}",
        ])
        return _csv_text(rows)

    def verdict_text(self) -> str:
        lines = []
        if self.insufficient_data:
            lines.append("insufficient-data: thresholds not evaluated")
        for c in self.criteria:
            status = "PASS" if c.passed else "FAIL"
            if self.insufficient_data:
                status = "SKIP"
            lines.append(f"{status} {c.name}: {c.value} (need {c.threshold})")
        lines.append("verdict: " + ("insufficient-data" if self.insufficient_data else "pass" if self.passed else "fail"))
        return "\n".join(lines) + "\n"


def build_report(cfg: ExperimentConfig, baseline: list[RunResult], shaped: list[RunResult]) -> CompareReport:
    t = cfg.training
    c = cfg.compare
    rows = []
    for b, s in zip(baseline, shaped):
        threshold = t.convergence_fraction * b.log.mean_candidate_reward(t.window)
        rows.append(CompareRow(b.seed, summarize(b.log, t.window, threshold), summarize(s.log, t.window, threshold)))

    bv = sum(r.baseline.final_violation_frequency for r in rows) / len(rows)
    sv = sum(r.shaped.final_violation_frequency for r in rows) / len(rows)
    br = sum(r.baseline.final_mean_candidate_reward for r in rows) / len(rows)
    sr = sum(r.shaped.final_mean_candidate_reward for r in rows) / len(rows)
    later = sum(r.shaped_not_earlier for r in rows)
    need_later = math.ceil(c.min_later_fraction * len(rows) - 1e-9)
    not_converged = [r.seed for r in rows if r.shaped.convergence is None]
    criteria = [
        Criterion("baseline_violates", fmt(bv), "> 0", bv > 0),
        Criterion("violation_reduction", fmt(_ratio(bv, sv)), f">= {fmt(c.min_reduction)}", bv > 0 and sv * c.min_reduction <= bv),
        Criterion("reward_retention", fmt(sr / br if br else 0.0), f">= {fmt(c.min_retention)}", br > 0 and sr >= c.min_retention * br),
        Criterion("shaped_converges_not_earlier", f"{later}/{len(rows)}", f">= {need_later}/{len(rows)}", later >= need_later),
        Criterion(
            "shaped_converged",
            "all" if not not_converged else "NotConverged seeds " + " ".join(map(str, not_converged)),
            "all",
            not not_converged,
        ),
    ]
    insufficient = t.episodes < 2 * t.window
    return CompareReport(rows, criteria, insufficient)


def compare(cfg: ExperimentConfig, out: Path) -> CompareReport:
    out.mkdir(parents=True, exist_ok=True)
    baseline = train_mode(cfg, "baseline", out / "baseline")
    shaped = train_mode(cfg, "shaped", out / "shaped")
    report = build_report(cfg, baseline, shaped)
    _write(out / "compare.csv", report.to_csv())
    _write(out / "verdict.txt", report.verdict_text())
    _write(out / "config.txt", dump_config(cfg))
    return report
