"""Run one agent as its own process over TCP."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from . import engine
from .engine import AgentState, Status
from .model import AgentConfig, parse_hostport
from .protocol import HandshakeOutcome, HandshakeResult, Kind, Message, handshake_round
from .transport import PeerTransport, register_and_resolve

log = logging.getLogger(__name__)

STARTUP_TIMEOUT_S = 15.0


@dataclass
class AgentRunReport:
    name: str
    value: int
    status: Status
    rounds: int
    ignored: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    timeouts: int = 0
    send_failures: int = 0

    @property
    def exit_code(self) -> int:
        return 0 if self.status is Status.SOLVED else 2

    def render(self) -> str:
        heading = "Final Solution" if self.status is Status.SOLVED else "Interim Solution"
        lines = [
            f"Agent {self.name}: {heading}",
            f"  result      {self.name}= {self.value}",
            f"  iterations  {self.rounds}",
            f"  status      {self.status.value}",
        ]
        for w in self.warnings:
            lines.append(f"  warning     {w}")
        return "\n".join(lines)

    @property
    def warnings(self) -> list[str]:
        out = [f"constraint with {n} conflicts with the neighbour's declaration; ignored" for n in self.ignored]
        out += [f"no handshake or value from {n}; constraint ignored" for n in self.missing]
        return out


def _round_ready(state: AgentState) -> bool:
    """True once every live neighbour's input for the next cycle has arrived."""
    next_round = state.round + 1
    return all(engine.is_fresh(state, n, next_round) for n in state.neighbours)


def _apply(state: AgentState, messages: list[Message]) -> None:
    for msg in messages:
        if msg.kind is Kind.HANDSHAKE:
            log.debug("%s: late handshake from %s ignored", state.name, msg.sender)
            continue
        engine.apply_message(state, msg)


def _startup(
    state: AgentState, transport: PeerTransport, deadline: float
) -> list[HandshakeResult]:
    config = state.config
    advertised = parse_hostport(config.listen_addr)[0], transport.address[1]
    endpoints = register_and_resolve(config, advertised, deadline)
    for ep in endpoints.values():
        transport.add_endpoint(ep)

    results: list[HandshakeResult] = []
    reachable = [c for c in config.constraints if c.other_var in endpoints]
    for c in config.constraints:
        if c.other_var not in endpoints:
            c.ignored = True
            results.append(HandshakeResult(c.other_var, HandshakeOutcome.MISSING))

    wanted = {c.other_var for c in reachable}

    def have_values(messages: list[Message]) -> bool:
        senders = {m.sender for m in messages if m.kind is Kind.VALUE and m.round == 0}
        return wanted <= senders

    found, leftovers = handshake_round(
        config.name,
        reachable,
        transport.send,
        transport.receive_until,
        deadline,
        extra_outbox=engine.startup_messages(state),
        also_wait_for=have_values,
    )
    results += found
    _apply(state, leftovers)

    # without an initial value the constraint cannot be evaluated at all
    for c in config.constraints:
        if not c.ignored and c.other_var not in state.view:
            c.ignored = True
            results = [
                HandshakeResult(r.neighbour, HandshakeOutcome.MISSING) if r.neighbour == c.other_var else r
                for r in results
            ]
            log.warning("%s: no initial value from %s; ignoring constraint %s", config.name, c.other_var, c)
    return results


def run_agent(config: AgentConfig, startup_timeout: float = STARTUP_TIMEOUT_S) -> AgentRunReport:
    """Register, handshake and run cycles until SOLVED or ``max_iterations``."""
    state = engine.initialize(config)
    transport = PeerTransport(config.name, config.listen_addr)
    timeouts = 0
    try:
        results = _startup(state, transport, time.monotonic() + startup_timeout)
        wait = config.timeout_ms / 1000
        while state.status is Status.RUNNING:
            deadline = time.monotonic() + wait
            while not _round_ready(state):
                if time.monotonic() >= deadline:
                    timeouts += 1
                    log.debug("%s: round %d wait timed out", config.name, state.round + 1)
                    break
                _apply(state, transport.receive_until(deadline, lambda batch: bool(batch)))
            _, outbox = engine.run_cycle(state, [])
            for msg in outbox:
                transport.send(msg)
        log.info("%s finished %s after %d rounds", config.name, state.status.value, state.round)
    finally:
        transport.close()
    return AgentRunReport(
        name=config.name,
        value=state.current_value,
        status=state.status,
        rounds=state.round,
        ignored=[r.neighbour for r in results if r.outcome is HandshakeOutcome.CONFLICT],
        missing=[r.neighbour for r in results if r.outcome is HandshakeOutcome.MISSING],
        timeouts=timeouts,
        send_failures=transport.send_failures,
    )
