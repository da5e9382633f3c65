"""Brute-force reference solver used to check every solver result."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .model import ConstraintExpr, evaluate, mirror
from .problem import ProblemSpec

STATE_SPACE_GUARD = 10**7


class OracleError(ValueError):
    pass


@dataclass
class SolutionSet:
    assignments: list[dict[str, int]] = field(default_factory=list)
    exhausted: bool = False

    def __contains__(self, assignment: object) -> bool:
        return assignment in self.assignments

    def __len__(self) -> int:
        return len(self.assignments)


def canonical_constraints(problem: ProblemSpec) -> tuple[list[ConstraintExpr], list[tuple[str, str]]]:
    """One constraint per connected pair, owned by the lexicographically smaller name.

    A pair declared on both sides with non-mirrored operators is what the
    handshake ignores; such pairs are returned separately and not enforced.
    """
    declared: dict[tuple[str, str], ConstraintExpr] = {}
    for agent in problem.agents:
        for c in agent.constraints:
            declared[(c.self_var, c.other_var)] = c
    constraints, conflicts = [], []
    for a, b in sorted({tuple(sorted(k)) for k in declared}):
        forward, backward = declared.get((a, b)), declared.get((b, a))
        if forward and backward and backward.op != mirror(forward.op):
            conflicts.append((a, b))
            continue
        constraints.append(forward if forward else backward.mirrored())
    return constraints, conflicts


def check_assignment(problem: ProblemSpec, assignment: dict[str, int]) -> bool:
    missing = [n for n in problem.names if n not in assignment]
    if missing:
        raise OracleError(f"assignment lacks agent(s) {', '.join(missing)}")
    for name in problem.names:
        if assignment[name] not in problem.agent(name).domain:
            return False
    constraints, _ = canonical_constraints(problem)
    return all(evaluate(c, assignment[c.self_var], assignment[c.other_var]) for c in constraints)


def enumerate_solutions(problem: ProblemSpec, cap: int = 10**6) -> SolutionSet:
    names = problem.names
    domains = [problem.agent(n).domain.values for n in names]
    size = math.prod(len(d) for d in domains)
    if size > STATE_SPACE_GUARD:
        raise OracleError(f"state space of {size} assignments exceeds the {STATE_SPACE_GUARD} guard")
    constraints, _ = canonical_constraints(problem)
    index = {n: i for i, n in enumerate(names)}
    checks = [(index[c.self_var], index[c.other_var], c) for c in constraints]
    found = SolutionSet()
    for combo in itertools.product(*domains):
        if all(evaluate(c, combo[i], combo[j]) for i, j, c in checks):
            if len(found.assignments) >= cap:
                return found
            found.assignments.append(dict(zip(names, combo)))
    found.exhausted = True
    return found


def is_satisfiable(problem: ProblemSpec) -> bool:
    return bool(enumerate_solutions(problem, cap=1).assignments)
