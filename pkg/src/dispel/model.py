"""Variables, integer domains and binary comparison constraints.

Everything here is a pure value type or a pure function. The text grammars
accepted by :func:`parse_domain` and :func:`parse_constraints` are the ones an
operator types on the command line, e.g. ``--domain "1,2,3"`` and
``--constraints "A>B,A<C"``.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ModelError(ValueError):
    """Raised for malformed domains, constraints or agent configurations."""


class ComparisonOp(Enum):
    GT = ">"
    LT = "<"
    NE = "!="
    EQ = "="
    GE = ">="
    LE = "<="

    @property
    def symbol(self) -> str:
        return self.value

    @classmethod
    def from_token(cls, token: str) -> "ComparisonOp":
        """Look up an operator by its wire token (``GT``) or its symbol (``>``)."""
        try:
            return cls[token]
        except KeyError:
            pass
        for op in cls:
            if op.value == token:
                return op
        raise ModelError(f"unknown comparison operator {token!r}")


_MIRROR = {
    ComparisonOp.GT: ComparisonOp.LT,
    ComparisonOp.LT: ComparisonOp.GT,
    ComparisonOp.GE: ComparisonOp.LE,
    ComparisonOp.LE: ComparisonOp.GE,
    ComparisonOp.EQ: ComparisonOp.EQ,
    ComparisonOp.NE: ComparisonOp.NE,
}

_PY_OPS: dict[ComparisonOp, Callable[[int, int], bool]] = {
    ComparisonOp.GT: operator.gt,
    ComparisonOp.LT: operator.lt,
    ComparisonOp.NE: operator.ne,
    ComparisonOp.EQ: operator.eq,
    ComparisonOp.GE: operator.ge,
    ComparisonOp.LE: operator.le,
}

# longest first, so ">=" is never read as ">" followed by "=a"
_SYMBOLS_LONGEST_FIRST = sorted((op.value for op in ComparisonOp), key=len, reverse=True)
_CONSTRAINT_RE = re.compile(
    r"\s*(?P<lhs>[^<>=!\s]+)\s*(?P<op>" + "|".join(re.escape(s) for s in _SYMBOLS_LONGEST_FIRST)
    + r")\s*(?P<rhs>[^<>=!\s]+)\s*\Z"
)


def mirror(op: ComparisonOp) -> ComparisonOp:
    """Operator that expresses the same relation from the other variable's side."""
    return _MIRROR[op]


@dataclass
class ConstraintExpr:
    """``self_var op other_var``, evaluated by the owner of ``self_var``."""

    self_var: str
    op: ComparisonOp
    other_var: str
    ignored: bool = False

    def __post_init__(self) -> None:
        if self.self_var == self.other_var:
            raise ModelError(f"constraint relates {self.self_var!r} to itself")

    def mirrored(self) -> "ConstraintExpr":
        return ConstraintExpr(self.other_var, mirror(self.op), self.self_var, self.ignored)

    def __str__(self) -> str:
        return f"{self.self_var}{self.op.symbol}{self.other_var}"


def evaluate(expr: ConstraintExpr, self_value: int, other_value: int) -> bool:
    return _PY_OPS[expr.op](self_value, other_value)


@dataclass(frozen=True)
class Domain:
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ModelError("domain is empty")
        if len(set(self.values)) != len(self.values):
            raise ModelError("domain contains duplicate values")

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, value: object) -> bool:
        return value in self.values

    def format(self) -> str:
        return ",".join(str(v) for v in self.values)


def parse_domain(text: str) -> Domain:
    """Parse a comma separated list of distinct integers, keeping input order."""
    if not text or not text.strip():
        raise ModelError("domain is empty")
    values = []
    seen = set()
    for raw in text.split(","):
        token = raw.strip()
        try:
            value = int(token)
        except ValueError:
            raise ModelError(f"non-integer domain value {token!r}") from None
        if value in seen:
            raise ModelError(f"duplicate domain value {value}")
        seen.add(value)
        values.append(value)
    return Domain(tuple(values))


def validate_name(name: str) -> str:
    if not NAME_RE.match(name or ""):
        raise ModelError(f"invalid variable name {name!r} (letters, digits and '_' only)")
    return name


def parse_constraint(text: str, self_name: str) -> ConstraintExpr:
    match = _CONSTRAINT_RE.match(text)
    if match is None:
        raise ModelError(f"cannot parse constraint {text.strip()!r}: unknown operator or missing operand")
    lhs, rhs = match["lhs"], match["rhs"]
    if lhs != self_name:
        raise ModelError(f"constraint {text.strip()!r} must start with {self_name!r}")
    validate_name(rhs)
    if rhs == self_name:
        raise ModelError(f"constraint {text.strip()!r} relates {self_name!r} to itself")
    return ConstraintExpr(self_name, ComparisonOp.from_token(match["op"]), rhs)


def parse_constraints(text: str, self_name: str) -> list[ConstraintExpr]:
    """Parse ``"A>B,A<C"`` into constraints owned by ``self_name``.

    An empty string means no constraints. At most one constraint may name any
    given neighbour.
    """
    if not self_name:
        raise ModelError("agent name is empty")
    if not text or not text.strip():
        return []
    constraints: list[ConstraintExpr] = []
    neighbours: set[str] = set()
    for part in text.split(","):
        expr = parse_constraint(part, self_name)
        if expr.other_var in neighbours:
            raise ModelError(f"more than one constraint between {self_name!r} and {expr.other_var!r}")
        neighbours.add(expr.other_var)
        constraints.append(expr)
    return constraints


def format_constraints(constraints: list[ConstraintExpr]) -> str:
    return ",".join(str(c) for c in constraints)


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = (text or "").strip().rpartition(":")
    if not sep:
        raise ModelError(f"address {text!r} is not host:port")
    try:
        port_no = int(port)
    except ValueError:
        raise ModelError(f"address {text!r} has a non-integer port") from None
    if not 0 <= port_no <= 65535:
        raise ModelError(f"address {text!r} has an out-of-range port")
    return host or "127.0.0.1", port_no


@dataclass
class AgentConfig:
    """Everything one agent knows when it starts."""

    name: str
    domain: Domain
    constraints: list[ConstraintExpr]
    max_iterations: int
    diameter: int
    registry_addr: str = "127.0.0.1:7000"
    listen_addr: str = "127.0.0.1:0"
    seed: int = 0
    timeout_ms: int = 500
    temp_weight: int = 3
    inc_step: int = 1

    def __post_init__(self) -> None:
        validate_name(self.name)
        for c in self.constraints:
            if c.self_var != self.name:
                raise ModelError(f"constraint {c} does not belong to agent {self.name!r}")
        others = [c.other_var for c in self.constraints]
        if len(set(others)) != len(others):
            raise ModelError(f"agent {self.name!r} has more than one constraint per neighbour")
        if self.max_iterations <= 0:
            raise ModelError("max iterations must be positive")
        if self.diameter <= 0:
            raise ModelError("diameter must be positive")
        if self.timeout_ms <= 0:
            raise ModelError("timeout must be positive")
        if self.seed < 0:
            raise ModelError("seed must be non-negative")
        if self.temp_weight <= 0:
            raise ModelError("temp weight must be positive")
        if self.inc_step <= 0:
            raise ModelError("inc step must be positive")

    @property
    def neighbours(self) -> list[str]:
        return sorted({c.other_var for c in self.constraints})

    def with_constraints(self, constraints: list[ConstraintExpr]) -> "AgentConfig":
        return replace(self, constraints=constraints)


@dataclass
class AgentSpec:
    """One agent's local problem as written in a problem file."""

    name: str
    domain: Domain
    constraints: list[ConstraintExpr] = field(default_factory=list)
