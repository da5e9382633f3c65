"""Deterministic in-process execution of a whole problem.

Agents step one at a time in name order, round after round. Every message is
encoded, optionally dropped or delayed, and decoded again on delivery, so the
simulator exercises the same wire format as the TCP deployment.

Time is counted in ticks: agent ``i`` of ``n`` steps round ``r`` at tick
``r * n + i``. A message sent at tick ``s`` with a delay of ``d`` rounds is
deliverable from tick ``s + 1 + d * n``; with no delay, later agents see it in
the same round and earlier agents in the next one.
"""

from __future__ import annotations

import hashlib
import logging
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable

from . import engine
from .engine import AgentState, Status
from .model import ComparisonOp
from .problem import ProblemSpec
from .protocol import HandshakeOutcome, HandshakeResult, Kind, Message, decode, encode, handshake_outbox, resolve_handshakes

log = logging.getLogger(__name__)


class SimError(ValueError):
    pass


def agent_seed(seed: int, name: str) -> int:
    """Stable per-agent seed derived from a run seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def compute_diameter(problem: ProblemSpec) -> int:
    """Longest shortest path between any two agents of the constraint graph."""
    names = problem.names
    adjacency: dict[str, set[str]] = {n: set() for n in names}
    for edge in problem.edges():
        a, b = tuple(edge)
        adjacency[a].add(b)
        adjacency[b].add(a)
    diameter = 0
    for source in names:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nxt in adjacency[node]:
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        if len(dist) != len(names):
            missing = sorted(set(names) - dist.keys())
            raise SimError(f"constraint graph is disconnected: {source} cannot reach {', '.join(missing)}")
        diameter = max(diameter, max(dist.values()))
    return diameter


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    drop_rate: float = 0.0
    max_delay_rounds: int = 0
    synchronous: bool = True
    absent: frozenset[str] = frozenset()
    temp_weight: int = 3
    inc_step: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_rate <= 1.0:
            raise SimError("drop_rate must be within [0, 1]")
        if self.max_delay_rounds < 0:
            raise SimError("max_delay_rounds must be non-negative")
        if self.synchronous and (self.drop_rate or self.max_delay_rounds):
            raise SimError("a synchronous run cannot drop or delay messages")
        object.__setattr__(self, "absent", frozenset(self.absent))

    @classmethod
    def faulty(cls, seed: int = 0, drop_rate: float = 0.0, max_delay_rounds: int = 0, **kw) -> "SimConfig":
        return cls(seed, drop_rate, max_delay_rounds, synchronous=False, **kw)


@dataclass
class AgentResult:
    name: str
    value: int
    status: Status
    rounds: int
    sent: int = 0
    received: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class SimOutcome:
    agents: dict[str, AgentResult]
    verdict: Status
    transcript: list[str]
    absent: list[str] = field(default_factory=list)

    @property
    def assignment(self) -> dict[str, int]:
        return {n: r.value for n, r in self.agents.items()}

    def table_row(self) -> str:
        return " ".join(f"{n}= {r.value}" for n, r in sorted(self.agents.items()))


class VirtualNetwork:
    """Per-link FIFO message store with seeded loss and delay."""

    def __init__(self, n_agents: int, sim: SimConfig, transcript: list[str]):
        self.n = n_agents
        self.sim = sim
        self.rng = random.Random(agent_seed(sim.seed, "#network"))
        self.transcript = transcript
        self._pending: dict[str, list[tuple[int, int, bytes]]] = defaultdict(list)
        self._link_due: dict[tuple[str, str], int] = {}
        self._seq = 0
        self.sent: dict[str, int] = defaultdict(int)
        self.received: dict[str, int] = defaultdict(int)

    def send(self, msg: Message, tick: int, reliable: bool = False) -> None:
        line = encode(msg)
        self.sent[msg.sender] += 1
        text = line.decode().rstrip("\n")
        if not reliable and self.sim.drop_rate and self.rng.random() < self.sim.drop_rate:
            self.transcript.append(f"t={tick} DROP {text}")
            return
        delay = 0
        if not reliable and self.sim.max_delay_rounds:
            delay = self.rng.randint(0, self.sim.max_delay_rounds)
        link = (msg.sender, msg.recipient)
        due = max(tick + 1 + delay * self.n, self._link_due.get(link, 0))
        self._link_due[link] = due
        self._seq += 1
        self._pending[msg.recipient].append((due, self._seq, line))
        self.transcript.append(f"t={tick} SEND {text} due={due}")

    def collect(self, recipient: str, tick: int) -> list[Message]:
        pending = self._pending[recipient]
        ready = sorted(p for p in pending if p[0] <= tick)
        self._pending[recipient] = [p for p in pending if p[0] > tick]
        out = []
        for _, _, line in ready:
            msg = decode(line)
            self.received[recipient] += 1
            self.transcript.append(f"t={tick} DELIVER {line.decode().rstrip()}")
            out.append(msg)
        return out


def _startup(states: dict[str, AgentState], sim: SimConfig, net: VirtualNetwork) -> dict[str, list[HandshakeResult]]:
    """Handshake plus round-0 value exchange. Startup traffic is never lost."""
    live = [n for n in sorted(states) if n not in sim.absent]
    for name in live:
        for msg in handshake_outbox(name, states[name].config.constraints):
            net.send(msg, 0, reliable=True)
    results = {}
    for name in live:
        state = states[name]
        received: dict[str, ComparisonOp] = {}
        for msg in net.collect(name, 1):
            if msg.kind is Kind.HANDSHAKE:
                received.setdefault(msg.sender, msg.op)
        results[name] = resolve_handshakes(state.config.constraints, received)
    for name in live:
        for msg in engine.startup_messages(states[name]):
            net.send(msg, 1, reliable=True)
    for name in live:
        for msg in net.collect(name, 2):
            engine.apply_message(states[name], msg)
    return results


def _warnings(results: list[HandshakeResult]) -> list[str]:
    out = []
    for r in results:
        if r.outcome is HandshakeOutcome.CONFLICT:
            out.append(f"constraint with {r.neighbour} conflicts with the neighbour's declaration; ignored")
        elif r.outcome is HandshakeOutcome.MISSING:
            out.append(f"no handshake from {r.neighbour}; constraint ignored")
    return out


def run_simulation(
    problem: ProblemSpec,
    sim: SimConfig | None = None,
    diameter: int | None = None,
    on_step: Callable[[str, dict[str, AgentState]], None] | None = None,
) -> SimOutcome:
    """Run every agent of ``problem`` to completion inside this process.

    ``on_step(name, states)`` is called after each agent step, mainly so tests
    can check invariants at every point of a run.
    """
    sim = sim or SimConfig()
    unknown = sim.absent - set(problem.names)
    if unknown:
        raise SimError(f"absent agents not in problem: {', '.join(sorted(unknown))}")
    configs = problem.agent_configs(
        seed=sim.seed, diameter=diameter, temp_weight=sim.temp_weight, inc_step=sim.inc_step
    )
    states = {c.name: engine.initialize(c) for c in configs}
    order = [c.name for c in configs]
    transcript: list[str] = []
    net = VirtualNetwork(len(order), sim, transcript)
    handshakes = _startup(states, sim, net)
    live = [n for n in order if n not in sim.absent]
    for name in live:
        s = states[name]
        transcript.append(f"INIT {name} value={s.current_value} neighbours={','.join(s.neighbours) or '-'}")

    round_ = 1
    while any(states[n].status is Status.RUNNING for n in live):
        for index, name in enumerate(order):
            state = states[name]
            if name in sim.absent or state.status is not Status.RUNNING:
                continue
            tick = round_ * len(order) + index
            inbox = net.collect(name, tick)
            _, outbox = engine.run_cycle(state, inbox)
            transcript.append(
                f"t={tick} STEP {name} round={state.round} value={state.current_value} "
                f"tc={state.tc} status={state.status.value}"
            )
            if on_step is not None:
                on_step(name, states)
            for msg in outbox:
                if msg.recipient in sim.absent:
                    continue
                net.send(msg, tick)
        round_ += 1

    results = {}
    for name in live:
        s = states[name]
        results[name] = AgentResult(
            name, s.current_value, s.status, s.round, net.sent[name], net.received[name], _warnings(handshakes[name])
        )
    verdict = Status.SOLVED if all(r.status is Status.SOLVED for r in results.values()) else Status.INTERIM
    return SimOutcome(results, verdict, transcript, sorted(sim.absent))


def run_with_faults(problem: ProblemSpec, sim: SimConfig, diameter: int | None = None, on_step=None) -> SimOutcome:
    """Same as :func:`run_simulation`, for configurations that lose or delay messages."""
    if sim.synchronous:
        raise SimError("run_with_faults needs an asynchronous SimConfig")
    return run_simulation(problem, sim, diameter, on_step)
