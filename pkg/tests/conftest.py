import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from dispel.model import AgentSpec, ComparisonOp, ConstraintExpr, Domain
from dispel.problem import ProblemSpec, load_problem

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
NAMES = "ABCDEFGH"


def fixture_problem(case: int) -> ProblemSpec:
    return load_problem(FIXTURES / f"case{case}.dcsp")


@pytest.fixture
def case():
    return fixture_problem


def random_problem(rng: random.Random, max_agents: int = 5, max_domain: int = 6, max_iterations: int = 100) -> ProblemSpec:
    """Connected random problem; each pair is declared once by its smaller name."""
    n = rng.randint(2, max_agents)
    names = list(NAMES[:n])
    domains = {
        name: Domain(tuple(rng.sample(range(-2, 12), rng.randint(1, max_domain)))) for name in names
    }
    edges = []
    for i in range(1, n):
        edges.append((names[rng.randrange(i)], names[i]))
    for i in range(n):
        for j in range(i + 1, n):
            pair = (names[i], names[j])
            if pair not in edges and rng.random() < 0.3:
                edges.append(pair)
    ops = list(ComparisonOp)
    constraints: dict[str, list[ConstraintExpr]] = {name: [] for name in names}
    for a, b in sorted(edges):
        constraints[a].append(ConstraintExpr(a, rng.choice(ops), b))
    agents = [AgentSpec(name, domains[name], constraints[name]) for name in names]
    return ProblemSpec(agents, max_iterations=max_iterations)


@st.composite
def problems(draw, max_agents: int = 5, max_domain: int = 6):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_problem(random.Random(seed), max_agents, max_domain)


def agent_argv(problem: ProblemSpec, name: str, registry: str, seed: int = 0, timeout_ms: int = 500) -> list[str]:
    """``dispel agent`` arguments for one agent, declaring both sides of every constraint."""
    from dispel.model import format_constraints

    config = next(c for c in problem.agent_configs(seed=seed) if c.name == name)
    return [
        "agent", "--name", name, "--domain", config.domain.format(),
        "--constraints", format_constraints(config.constraints),
        "--max-iterations", str(config.max_iterations), "--diameter", str(config.diameter),
        "--registry", registry, "--listen", "127.0.0.1:0",
        "--seed", str(config.seed), "--timeout-ms", str(timeout_ms),
    ]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
