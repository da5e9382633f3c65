"""Whole-problem description used by solve mode and the oracle.

File format, one directive per line, ``#`` starts a comment::

    maxiter 100
    diameter 2
    agent A domain 1,2,3,4,5 constraints A>B,A<C
    agent B domain 2,4,6,8,10
    agent C domain 1,3,5,7,9

The ``constraints`` part is optional. A constraint written on one side only
is completed with its mirror on the other side when the problem is expanded
into per-agent configurations, since a single file has no ownership problem.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .model import (
    AgentConfig,
    AgentSpec,
    ConstraintExpr,
    ModelError,
    parse_constraints,
    parse_domain,
    validate_name,
)

_AGENT_RE = re.compile(
    r"agent\s+(?P<name>\S+)\s+domain\s+(?P<domain>.*?)(?:\s+constraints\s+(?P<constraints>.*))?\Z"
)


class ProblemError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class ProblemSpec:
    agents: list[AgentSpec]
    max_iterations: int = 100
    diameter: int | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise ProblemError(f"agent {dup!r} defined more than once")
        known = set(names)
        for agent in self.agents:
            for c in agent.constraints:
                if c.other_var not in known:
                    raise ProblemError(f"agent {agent.name!r}: constraint {c} names unknown agent {c.other_var!r}")
        if self.max_iterations <= 0:
            raise ProblemError("maxiter must be positive")
        if self.diameter is not None and self.diameter <= 0:
            raise ProblemError("diameter must be positive")

    @property
    def names(self) -> list[str]:
        return sorted(a.name for a in self.agents)

    def agent(self, name: str) -> AgentSpec:
        for a in self.agents:
            if a.name == name:
                return a
        raise KeyError(name)

    def edges(self) -> set[frozenset[str]]:
        return {frozenset((c.self_var, c.other_var)) for a in self.agents for c in a.constraints}

    def completed_constraints(self) -> dict[str, list[ConstraintExpr]]:
        """Per-agent constraint lists with one-sided constraints mirrored."""
        out = {a.name: [ConstraintExpr(c.self_var, c.op, c.other_var) for c in a.constraints] for a in self.agents}
        for agent in self.agents:
            for c in agent.constraints:
                theirs = out[c.other_var]
                if not any(t.other_var == c.self_var for t in theirs):
                    theirs.append(c.mirrored())
        for lst in out.values():
            lst.sort(key=lambda c: c.other_var)
        return out

    def agent_configs(self, seed: int = 0, diameter: int | None = None, **overrides) -> list[AgentConfig]:
        """Expand into one configuration per agent, sorted by name."""
        from .sim import agent_seed, compute_diameter

        if diameter is None:
            diameter = self.diameter
        if diameter is None:
            diameter = max(1, compute_diameter(self))
        constraints = self.completed_constraints()
        configs = []
        for name in self.names:
            spec = self.agent(name)
            configs.append(
                AgentConfig(
                    name=name,
                    domain=spec.domain,
                    constraints=constraints[name],
                    max_iterations=self.max_iterations,
                    diameter=diameter,
                    seed=agent_seed(seed, name),
                    **overrides,
                )
            )
        return configs


def parse_problem(text: str) -> ProblemSpec:
    max_iterations = 100
    diameter = None
    agents: list[AgentSpec] = []
    agent_lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword = line.split(None, 1)[0]
        try:
            if keyword in ("maxiter", "diameter"):
                parts = line.split()
                if len(parts) != 2:
                    raise ProblemError(f"expected '{keyword} <integer>'", lineno)
                try:
                    value = int(parts[1])
                except ValueError:
                    raise ProblemError(f"{keyword} value {parts[1]!r} is not an integer", lineno) from None
                if value <= 0:
                    raise ProblemError(f"{keyword} must be positive", lineno)
                if keyword == "maxiter":
                    max_iterations = value
                else:
                    diameter = value
            elif keyword == "agent":
                match = _AGENT_RE.match(line)
                if match is None:
                    raise ProblemError("expected 'agent <NAME> domain <v,...> [constraints <expr,...>]'", lineno)
                name = validate_name(match["name"])
                if name in agent_lines:
                    raise ProblemError(f"agent {name!r} already defined on line {agent_lines[name]}", lineno)
                agent_lines[name] = lineno
                domain = parse_domain(match["domain"])
                constraints = parse_constraints(match["constraints"] or "", name)
                agents.append(AgentSpec(name, domain, constraints))
            else:
                raise ProblemError(f"unknown directive {keyword!r}", lineno)
        except ModelError as exc:
            raise ProblemError(str(exc), lineno) from None
    if not agents:
        raise ProblemError("problem defines no agents")
    try:
        return ProblemSpec(agents, max_iterations, diameter)
    except ProblemError as exc:
        # attach the defining line of the offending agent when we can tell which one
        for name, lineno in agent_lines.items():
            if f"agent {name!r}" in str(exc):
                raise ProblemError(str(exc), lineno) from None
        raise


def load_problem(path: str | Path) -> ProblemSpec:
    return parse_problem(Path(path).read_text(encoding="utf-8"))


def format_problem(problem: ProblemSpec) -> str:
    lines = [f"maxiter {problem.max_iterations}"]
    if problem.diameter is not None:
        lines.append(f"diameter {problem.diameter}")
    for a in problem.agents:
        line = f"agent {a.name} domain {a.domain.format()}"
        if a.constraints:
            line += " constraints " + ",".join(str(c) for c in a.constraints)
        lines.append(line)
    return "\n".join(lines) + "\n"
