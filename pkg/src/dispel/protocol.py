"""Message vocabulary, line wire format and the startup constraint handshake.

Every record travels as one UTF-8 line::

    V1|KIND|sender|recipient|round|payload\\n

with payload sub-fields joined by ``;``. The same encoder is used by the TCP
transport and by the in-process simulator.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .model import ComparisonOp, ConstraintExpr, mirror

log = logging.getLogger(__name__)

VERSION = "V1"
BROADCAST = "*"
_FORBIDDEN = ("|", ";", "\n", "\r")


class ProtocolError(ValueError):
    pass


class Kind(Enum):
    VALUE = "VALUE"
    PENALTY = "PENALTY"
    HANDSHAKE = "HANDSHAKE"
    FINAL = "FINAL"
    REG = "REG"
    LOOKUP = "LOOKUP"
    ADDR = "ADDR"
    NOTFOUND = "NOTFOUND"


# number of ';'-separated payload fields; None means free text (possibly empty)
_PAYLOAD_ARITY = {
    Kind.VALUE: 2,
    Kind.PENALTY: 1,
    Kind.HANDSHAKE: 1,
    Kind.FINAL: 2,
    Kind.REG: 2,
    Kind.LOOKUP: 1,
    Kind.ADDR: 2,
    Kind.NOTFOUND: None,
}


@dataclass(frozen=True)
class Message:
    kind: Kind
    sender: str
    recipient: str
    round: int
    payload: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for text in (self.sender, self.recipient, *self.payload):
            if any(ch in text for ch in _FORBIDDEN):
                raise ProtocolError(f"field {text!r} contains a delimiter")
        if not self.sender or not self.recipient:
            raise ProtocolError("sender and recipient must be non-empty")
        if self.round < 0:
            raise ProtocolError("round must be non-negative")
        arity = _PAYLOAD_ARITY[self.kind]
        if arity is not None and len(self.payload) != arity:
            raise ProtocolError(f"{self.kind.value} payload needs {arity} field(s), got {len(self.payload)}")
        if arity is None and len(self.payload) > 1:
            raise ProtocolError(f"{self.kind.value} payload is a single field")
        self._check_payload()

    def _check_payload(self) -> None:
        try:
            if self.kind is Kind.VALUE:
                int(self.payload[0]), int(self.payload[1])
            elif self.kind is Kind.PENALTY:
                PenaltyKind(self.payload[0])
            elif self.kind is Kind.HANDSHAKE:
                ComparisonOp[self.payload[0]]
            elif self.kind is Kind.FINAL:
                int(self.payload[0])
                if self.payload[1] not in ("SOLVED", "INTERIM"):
                    raise ValueError(self.payload[1])
            elif self.kind in (Kind.REG, Kind.ADDR):
                int(self.payload[1])
        except (ValueError, KeyError):
            raise ProtocolError(f"bad {self.kind.value} payload {';'.join(self.payload)!r}") from None

    # typed views of the payload

    @property
    def value(self) -> int:
        return int(self.payload[0])

    @property
    def tc(self) -> int:
        return int(self.payload[1])

    @property
    def penalty(self) -> "PenaltyKind":
        return PenaltyKind(self.payload[0])

    @property
    def op(self) -> ComparisonOp:
        return ComparisonOp[self.payload[0]]

    @property
    def final_status(self) -> str:
        return self.payload[1]

    @property
    def address(self) -> tuple[str, int]:
        return self.payload[0], int(self.payload[1])


class PenaltyKind(Enum):
    TEMP = "TEMP"
    INC = "INC"


def encode(msg: Message) -> bytes:
    fields = (VERSION, msg.kind.value, msg.sender, msg.recipient, str(msg.round), ";".join(msg.payload))
    return ("|".join(fields) + "\n").encode("utf-8")


def decode(line: bytes | str) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("line is not valid UTF-8") from None
    if line.endswith("\n"):
        line = line[:-1]
    if line.endswith("\r"):
        line = line[:-1]
    parts = line.split("|")
    if len(parts) != 6:
        raise ProtocolError(f"expected 6 fields, got {len(parts)}")
    version, kind, sender, recipient, round_text, payload = parts
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version!r}")
    try:
        kind_ = Kind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind!r}") from None
    try:
        round_ = int(round_text)
    except ValueError:
        raise ProtocolError(f"non-integer round {round_text!r}") from None
    if kind_ is Kind.NOTFOUND or kind_ is Kind.LOOKUP:
        fields = (payload,) if payload else ()
    else:
        fields = tuple(payload.split(";"))
    if kind_ is Kind.LOOKUP and not fields:
        raise ProtocolError("LOOKUP payload field count")
    try:
        return Message(kind_, sender, recipient, round_, fields)
    except ProtocolError as exc:
        raise ProtocolError(f"payload field count or content: {exc}") from None


# constructors used across the package

def value_msg(sender: str, recipient: str, round_: int, value: int, tc: int) -> Message:
    return Message(Kind.VALUE, sender, recipient, round_, (str(value), str(tc)))


def penalty_msg(sender: str, recipient: str, round_: int, kind: PenaltyKind) -> Message:
    return Message(Kind.PENALTY, sender, recipient, round_, (kind.value,))


def handshake_msg(sender: str, recipient: str, op: ComparisonOp) -> Message:
    return Message(Kind.HANDSHAKE, sender, recipient, 0, (op.name,))


def final_msg(sender: str, recipient: str, round_: int, value: int, status: str) -> Message:
    return Message(Kind.FINAL, sender, recipient, round_, (str(value), status))


# handshake

class HandshakeOutcome(Enum):
    CONSISTENT = "CONSISTENT"
    CONFLICT = "CONFLICT"
    MISSING = "MISSING"


@dataclass(frozen=True)
class HandshakeResult:
    neighbour: str
    outcome: HandshakeOutcome


def handshake_check(own: ConstraintExpr, received_op: ComparisonOp) -> HandshakeResult:
    """Compare our operator with the one the neighbour declared for the same pair.

    Both sides run the same mirror test, so they always reach the same verdict.
    A conflicting constraint is marked ignored.
    """
    if received_op == mirror(own.op):
        return HandshakeResult(own.other_var, HandshakeOutcome.CONSISTENT)
    own.ignored = True
    return HandshakeResult(own.other_var, HandshakeOutcome.CONFLICT)


def handshake_outbox(name: str, constraints: Iterable[ConstraintExpr]) -> list[Message]:
    return [handshake_msg(name, c.other_var, c.op) for c in constraints]


def resolve_handshakes(
    constraints: list[ConstraintExpr], received: dict[str, ComparisonOp]
) -> list[HandshakeResult]:
    """Verdict per constraint given the operators received so far.

    Neighbours that never answered are MISSING and their constraint is ignored.
    """
    results = []
    for c in constraints:
        if c.other_var in received:
            result = handshake_check(c, received[c.other_var])
            if result.outcome is HandshakeOutcome.CONFLICT:
                log.warning(
                    "constraint %s conflicts with %s's declared %s; ignoring it",
                    c, c.other_var, received[c.other_var].symbol,
                )
        else:
            c.ignored = True
            result = HandshakeResult(c.other_var, HandshakeOutcome.MISSING)
            log.warning("no handshake from %s; ignoring constraint %s", c.other_var, c)
        results.append(result)
    return results


def handshake_round(
    name: str,
    constraints: list[ConstraintExpr],
    send: Callable[[Message], object],
    receive_until: Callable[..., list[Message]],
    deadline: float,
    extra_outbox: Iterable[Message] = (),
    also_wait_for: Callable[[list[Message]], bool] | None = None,
) -> tuple[list[HandshakeResult], list[Message]]:
    """Send one HANDSHAKE per constraint and collect the peers' operators.

    ``receive_until(deadline, done)`` must return the messages that arrived
    before ``deadline``, returning early once ``done(messages)`` is true.
    ``extra_outbox`` is sent right after the handshakes; ``also_wait_for`` lets
    the caller keep waiting for additional startup messages.

    Returns the verdicts and every non-handshake message received meanwhile,
    so the caller can feed them to the engine.
    """
    for msg in handshake_outbox(name, constraints):
        send(msg)
    for msg in extra_outbox:
        send(msg)
    wanted = {c.other_var for c in constraints}
    collected: list[Message] = []

    def operators(messages: list[Message]) -> dict[str, ComparisonOp]:
        ops: dict[str, ComparisonOp] = {}
        for m in messages:
            if m.kind is Kind.HANDSHAKE and m.sender in wanted and m.recipient == name:
                ops.setdefault(m.sender, m.op)
        return ops

    def satisfied(batch: list[Message]) -> bool:
        pending = collected + batch
        ok = wanted <= operators(pending).keys()
        if also_wait_for is not None:
            ok = ok and also_wait_for(pending)
        return ok

    while not satisfied([]) and time.monotonic() < deadline:
        collected.extend(receive_until(deadline, satisfied))

    leftovers = []
    for m in collected:
        if m.kind is not Kind.HANDSHAKE:
            leftovers.append(m)
        elif m.sender not in wanted:
            log.warning("handshake from %s for a constraint not declared here", m.sender)
    return resolve_handshakes(constraints, operators(collected)), leftovers
