"""Command-line entry points: registry, agent, solve and oracle.

Exit codes: 0 solved, 2 interim result, 1 usage or startup error.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from pathlib import Path

from .engine import Status
from .model import AgentConfig, ModelError, parse_constraints, parse_domain, parse_hostport, validate_name
from .node import STARTUP_TIMEOUT_S, AgentRunReport, run_agent
from .oracle import OracleError, enumerate_solutions, check_assignment
from .problem import ProblemError, load_problem
from .sim import SimConfig, SimError, run_simulation
from .transport import TransportError, registry_serve

EXIT_SOLVED = 0
EXIT_ERROR = 1
EXIT_INTERIM = 2

__all__ = ["main", "AgentRunReport"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dispel", description="Distributed penalty-driven constraint solver.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("registry", help="run the name registry (exactly one per problem)")
    reg.add_argument("--listen", default="127.0.0.1:7000", help="HOST:PORT to bind (default %(default)s)")

    agent = sub.add_parser("agent", help="run one agent over TCP")
    agent.add_argument("--name", required=True, help="variable name")
    agent.add_argument("--domain", required=True, help="comma-separated integers")
    agent.add_argument("--constraints", default="", help="e.g. 'A>B,A!=C'; each must start with --name")
    agent.add_argument("--max-iterations", required=True, help="round limit")
    agent.add_argument("--diameter", required=True, help="farthest agent distance in the constraint graph")
    agent.add_argument("--registry", required=True, help="registry HOST:PORT")
    agent.add_argument("--listen", required=True, help="HOST:PORT this agent listens on (port 0 = any)")
    agent.add_argument("--seed", default="0")
    agent.add_argument("--timeout-ms", default="500", help="per-round wait for neighbour values")
    agent.add_argument("--temp-weight", default="3")
    agent.add_argument("--inc-step", default="1")
    agent.add_argument("--startup-timeout", default=str(STARTUP_TIMEOUT_S),
                       help="seconds to wait for neighbours to register and handshake")

    solve = sub.add_parser("solve", help="run a whole problem file in-process")
    solve.add_argument("problem", type=Path)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--drop-rate", type=float, default=0.0)
    solve.add_argument("--max-delay", type=int, default=0, help="maximum message delay in rounds")
    solve.add_argument("--diameter", type=int, default=None, help="override the file/computed diameter")
    solve.add_argument("--transcript", type=Path, default=None, help="write the event log here")

    orc = sub.add_parser("oracle", help="enumerate all solutions of a problem file")
    orc.add_argument("problem", type=Path)
    orc.add_argument("--limit", type=int, default=10, help="solutions to print")
    return parser


def _int_field(flag: str, text: str, minimum: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"{flag}: {text!r} is not an integer") from None
    if value < minimum:
        raise UsageError(f"{flag}: must be at least {minimum}, got {value}")
    return value


def _field(flag: str, fn, *args):
    try:
        return fn(*args)
    except ModelError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def agent_config_from_args(args: argparse.Namespace) -> tuple[AgentConfig, float]:
    """Validate every agent flag. Nothing touches the network here."""
    name = _field("--name", validate_name, args.name)
    domain = _field("--domain", parse_domain, args.domain)
    constraints = _field("--constraints", parse_constraints, args.constraints, name)
    _field("--registry", parse_hostport, args.registry)
    _field("--listen", parse_hostport, args.listen)
    try:
        startup = float(args.startup_timeout)
    except ValueError:
        raise UsageError(f"--startup-timeout: {args.startup_timeout!r} is not a number") from None
    if startup <= 0:
        raise UsageError("--startup-timeout: must be positive")
    config = AgentConfig(
        name=name,
        domain=domain,
        constraints=constraints,
        max_iterations=_int_field("--max-iterations", args.max_iterations, 1),
        diameter=_int_field("--diameter", args.diameter, 1),
        registry_addr=args.registry,
        listen_addr=args.listen,
        seed=_int_field("--seed", args.seed, 0),
        timeout_ms=_int_field("--timeout-ms", args.timeout_ms, 1),
        temp_weight=_int_field("--temp-weight", args.temp_weight, 1),
        inc_step=_int_field("--inc-step", args.inc_step, 1),
    )
    return config, startup


def cmd_registry(args: argparse.Namespace) -> int:
    try:
        addr = parse_hostport(args.listen)
    except ModelError as exc:
        raise UsageError(f"--listen: {exc}") from None
    try:
        server = registry_serve(addr)
    except OSError as exc:
        print(f"dispel registry: cannot bind {args.listen}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    host, port = server.address
    print(f"registry listening on {host}:{port}", flush=True)
    print("note: run exactly one registry per problem; agents using different registries cannot meet",
          file=sys.stderr)

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    print(f"registry stopped ({len(server.entries)} agent(s) were registered)", flush=True)
    return EXIT_SOLVED


def cmd_agent(args: argparse.Namespace) -> int:
    config, startup = agent_config_from_args(args)
    try:
        report = run_agent(config, startup_timeout=startup)
    except TransportError as exc:
        print(f"dispel agent {config.name}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"dispel agent {config.name}: cannot listen on {config.listen_addr}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(report.render(), flush=True)
    return report.exit_code


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        problem = load_problem(args.problem)
    except OSError as exc:
        raise UsageError(f"cannot read {args.problem}: {exc}") from None
    except ProblemError as exc:
        raise UsageError(f"{args.problem}: {exc}") from None
    try:
        if args.drop_rate or args.max_delay:
            sim = SimConfig.faulty(args.seed, args.drop_rate, args.max_delay)
        else:
            sim = SimConfig(seed=args.seed)
        outcome = run_simulation(problem, sim, diameter=args.diameter)
    except (SimError, ModelError) as exc:
        raise UsageError(str(exc)) from None

    if args.transcript is not None:
        args.transcript.write_text("\n".join(outcome.transcript) + "\n", encoding="utf-8")
    print(f"{'agent':<8}{'value':>7}{'iterations':>12}  status")
    for name, r in sorted(outcome.agents.items()):
        print(f"{name:<8}{r.value:>7}{r.rounds:>12}  {r.status.value}")
        for w in r.warnings:
            print(f"warning: {name}: {w}", file=sys.stderr)
    heading = "Final Solution" if outcome.verdict is Status.SOLVED else "Interim Solution"
    print(f"{heading}: {outcome.table_row()}")
    if outcome.verdict is Status.SOLVED:
        verified = check_assignment(problem, outcome.assignment)
        print(f"oracle check: {'valid' if verified else 'INVALID'}")
        return EXIT_SOLVED
    return EXIT_INTERIM


def cmd_oracle(args: argparse.Namespace) -> int:
    try:
        problem = load_problem(args.problem)
        solutions = enumerate_solutions(problem)
    except OSError as exc:
        raise UsageError(f"cannot read {args.problem}: {exc}") from None
    except (ProblemError, OracleError) as exc:
        raise UsageError(f"{args.problem}: {exc}") from None
    count = f"{len(solutions)}" if solutions.exhausted else f"at least {len(solutions)}"
    print(f"{'satisfiable' if solutions.assignments else 'unsatisfiable'}: {count} solution(s)")
    for a in solutions.assignments[: args.limit]:
        print("  " + " ".join(f"{n}= {v}" for n, v in a.items()))
    return EXIT_SOLVED if solutions.assignments else EXIT_INTERIM


COMMANDS = {"registry": cmd_registry, "agent": cmd_agent, "solve": cmd_solve, "oracle": cmd_oracle}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dispel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
