"""Per-agent DisPeL state machine.

One :class:`AgentState` per agent. The only way agents influence each other is
through the messages returned by :func:`run_cycle` and fed back in as the
next inbox, so the same engine runs unchanged under the simulator and over TCP.

Scheduling: agents take turns in lexicographic name order. In cycle ``r`` an
agent acts on round-``r`` values from neighbours whose names sort before its
own and round-``r-1`` values from the ones after it. A neighbour entry older
than that is stale; the step still goes ahead with the stale value, but the
termination counter is held at zero until fresh information arrives.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .model import AgentConfig, ConstraintExpr, evaluate
from .protocol import (
    Kind,
    Message,
    PenaltyKind,
    ProtocolError,
    decode,
    final_msg,
    penalty_msg,
    value_msg,
)

log = logging.getLogger(__name__)


class EngineError(RuntimeError):
    pass


class Status(Enum):
    RUNNING = "RUNNING"
    SOLVED = "SOLVED"
    INTERIM = "INTERIM"


@dataclass
class PenaltyTable:
    inc: dict[int, int] = field(default_factory=dict)
    temp_active: bool = False
    temp_value: int | None = None

    def clear_temp(self) -> None:
        self.temp_active = False
        self.temp_value = None

    def reset(self) -> None:
        self.inc = {v: 0 for v in self.inc}
        self.clear_temp()


@dataclass
class NeighbourView:
    value: int
    round: int
    tc: int
    final: bool = False


@dataclass
class AgentState:
    config: AgentConfig
    current_value: int
    rng: random.Random
    round: int = 0
    penalties: PenaltyTable = field(default_factory=PenaltyTable)
    view: dict[str, NeighbourView] = field(default_factory=dict)
    tc: int = 0
    status: Status = Status.RUNNING
    skipped: int = 0

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def active_constraints(self) -> list[ConstraintExpr]:
        return [c for c in self.config.constraints if not c.ignored]

    @property
    def neighbours(self) -> list[str]:
        return sorted({c.other_var for c in self.active_constraints})

    def snapshot(self) -> tuple:
        """Comparable summary of everything that evolves, for determinism checks."""
        return (
            self.current_value,
            self.round,
            self.tc,
            self.status,
            tuple(sorted(self.penalties.inc.items())),
            self.penalties.temp_active,
            self.penalties.temp_value,
            tuple(sorted((n, v.value, v.round, v.tc, v.final) for n, v in self.view.items())),
            self.rng.getstate(),
        )


@dataclass
class StepDecision:
    new_value: int
    deadlocked: bool = False
    penalty_kind: PenaltyKind | None = None
    penalty_recipients: frozenset[str] = frozenset()


def initialize(config: AgentConfig) -> AgentState:
    rng = random.Random(config.seed)
    value = rng.choice(config.domain.values)
    return AgentState(
        config=config,
        current_value=value,
        rng=rng,
        penalties=PenaltyTable(inc={v: 0 for v in config.domain}),
    )


def _neighbour_value(state: AgentState, name: str) -> int:
    entry = state.view.get(name)
    if entry is None:
        raise EngineError(f"{state.name}: no value known for neighbour {name}")
    return entry.value


def violation_count(state: AgentState, candidate: int) -> int:
    """Number of active constraints broken if we took ``candidate`` now."""
    return sum(
        not evaluate(c, candidate, _neighbour_value(state, c.other_var))
        for c in state.active_constraints
    )


def effective_cost(state: AgentState, candidate: int) -> int:
    pen = state.penalties
    cost = violation_count(state, candidate) + pen.inc.get(candidate, 0)
    if pen.temp_active and pen.temp_value == candidate:
        cost += state.config.temp_weight
    return cost


def _best_value(state: AgentState) -> tuple[int, int]:
    """Lowest-cost value; ties go to the current value, then to domain order."""
    best_key = None
    best = state.current_value
    for index, v in enumerate(state.config.domain.values):
        key = (effective_cost(state, v), v != state.current_value, index)
        if best_key is None or key < best_key:
            best_key, best = key, v
    return best, best_key[0]


def penalty_recipients(state: AgentState, kind: PenaltyKind) -> frozenset[str]:
    lower = [n for n in state.neighbours if n > state.name]
    if kind is PenaltyKind.INC:
        return frozenset(lower)
    violated = {
        c.other_var
        for c in state.active_constraints
        if c.other_var > state.name
        and not evaluate(c, state.current_value, _neighbour_value(state, c.other_var))
    }
    return frozenset(violated)


def receive_penalty(state: AgentState, kind: PenaltyKind) -> AgentState:
    if state.status is not Status.RUNNING:
        return state
    pen = state.penalties
    if kind is PenaltyKind.INC:
        pen.inc[state.current_value] = pen.inc.get(state.current_value, 0) + state.config.inc_step
    else:
        pen.temp_active = True
        pen.temp_value = state.current_value
    return state


def improvement_step(state: AgentState) -> StepDecision:
    """Decide this cycle's value. Updates the penalty table, not the value."""
    pen = state.penalties
    current = state.current_value
    if violation_count(state, current) == 0:
        pen.reset()
        return StepDecision(current)

    best, best_cost = _best_value(state)
    if best_cost < effective_cost(state, current):
        pen.clear_temp()
        return StepDecision(best)

    # deadlock: no value beats the current one
    kind = PenaltyKind.TEMP if state.rng.random() < 0.5 else PenaltyKind.INC
    recipients = penalty_recipients(state, kind)
    receive_penalty(state, kind)
    new_value, _ = _best_value(state)
    pen.clear_temp()
    return StepDecision(new_value, True, kind, recipients)


def is_fresh(state: AgentState, neighbour: str, round_: int) -> bool:
    """Whether our view of ``neighbour`` reflects its value at cycle ``round_``."""
    entry = state.view.get(neighbour)
    if entry is None:
        return False
    if entry.final:
        return True
    expected = round_ if neighbour < state.name else round_ - 1
    return entry.round >= expected


def detection_threshold(diameter: int) -> int:
    """Counter value at which an agent may declare the whole problem solved.

    A counter of ``m`` at cycle ``r`` proves the agent was consistent in cycles
    ``r-m+1 .. r``, and each hop of neighbour evidence lags by up to one cycle.
    At ``2 * diameter + 1`` there is always one cycle in which every agent
    within ``diameter`` hops was consistent at its own step, and nothing moves
    after such a cycle.
    """
    return 2 * diameter + 1


def update_termination_counter(state: AgentState) -> int:
    """Recompute the termination counter after the step of cycle ``state.round``."""
    neighbours = state.neighbours
    if not neighbours:
        tc = detection_threshold(state.config.diameter)
    elif violation_count(state, state.current_value) > 0:
        tc = 0
    elif not all(is_fresh(state, n, state.round) for n in neighbours):
        tc = 0
    else:
        tc = 1 + min(state.tc, *(state.view[n].tc for n in neighbours))
    state.tc = tc
    if tc >= detection_threshold(state.config.diameter):
        state.status = Status.SOLVED
    return tc


def apply_message(state: AgentState, msg: Message) -> None:
    if msg.recipient != state.name or (
        msg.kind in (Kind.VALUE, Kind.FINAL, Kind.PENALTY) and msg.sender not in state.neighbours
    ):
        state.skipped += 1
        return
    entry = state.view.get(msg.sender)
    if msg.kind is Kind.VALUE:
        if entry is None or (not entry.final and msg.round >= entry.round):
            state.view[msg.sender] = NeighbourView(msg.value, msg.round, msg.tc)
    elif msg.kind is Kind.FINAL:
        tc = entry.tc if entry else 0
        if msg.final_status == Status.SOLVED.value:
            tc = max(tc, state.config.diameter)
        state.view[msg.sender] = NeighbourView(msg.value, msg.round, tc, final=True)
    elif msg.kind is Kind.PENALTY:
        receive_penalty(state, msg.penalty)
    # handshakes and registry records are not the engine's business


def run_cycle(
    state: AgentState, inbox: Iterable[Message | bytes | str]
) -> tuple[AgentState, list[Message]]:
    if state.status is not Status.RUNNING:
        raise EngineError(f"{state.name} is not running ({state.status.value})")
    if state.round >= state.config.max_iterations:
        raise EngineError(f"{state.name} already used all {state.config.max_iterations} iterations")

    for item in inbox:
        if not isinstance(item, Message):
            try:
                item = decode(item)
            except ProtocolError as exc:
                log.debug("%s: skipping malformed message: %s", state.name, exc)
                state.skipped += 1
                continue
        apply_message(state, item)

    decision = improvement_step(state)
    state.current_value = decision.new_value
    state.round += 1
    update_termination_counter(state)
    if state.status is Status.RUNNING and state.round >= state.config.max_iterations:
        state.status = Status.INTERIM

    out: list[Message] = []
    if decision.deadlocked:
        for n in sorted(decision.penalty_recipients):
            out.append(penalty_msg(state.name, n, state.round, decision.penalty_kind))
    for n in state.neighbours:
        out.append(value_msg(state.name, n, state.round, state.current_value, state.tc))
    if state.status is not Status.RUNNING:
        for n in state.neighbours:
            out.append(final_msg(state.name, n, state.round, state.current_value, state.status.value))
    return state, out


def startup_messages(state: AgentState) -> list[Message]:
    """Round-0 value announcements sent once the handshake is done."""
    return [value_msg(state.name, n, 0, state.current_value, 0) for n in state.neighbours]
