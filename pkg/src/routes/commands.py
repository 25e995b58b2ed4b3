import argparse
import csv
import functools
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from sympy import Rational
from tqdm import tqdm

from src.services.dp import default_threads, wfomc
from src.services.errors import (
    DecompositionError, FragmentError, InvariantError, OracleCapError, ProblemParseError, ZeroPartitionError,
)
from src.services.fol import Problem, apply_query, format_problem, parse_problem, parse_rational
from src.services.gaifman_td import decompose_for, format_nice, from_problem_decomposition, parse_pace_td
from src.services.normalize import prepare
from src.services.oracle import ground_count, lifted_no_evidence
from src.services.problems import gen_friends_smokers, gen_independent_set, gen_watts_strogatz
from src.services.seating import SeatingInstance, brute_force_seatings, encode_seating

logger = logging.getLogger(__name__)

handlers: Dict[str, Callable[[argparse.Namespace], int]] = {}


class StageTimes(BaseModel):
    normalize: float = 0.0
    cells: float = 0.0
    decompose: float = 0.0
    dp: float = 0.0
    oracle: Optional[float] = None

    @property
    def total(self) -> float:
        return self.normalize + self.cells + self.decompose + self.dp


class RunReport(BaseModel):
    model_config = ConfigDict(extra="ignore")

    answer: str
    p: int
    q: int
    classes: int
    treewidth: int
    exact_treewidth: bool
    nodes: int
    max_table: int
    times: StageTimes
    oracle: Optional[str] = None

    @field_validator("answer", "oracle", mode="before")
    @classmethod
    def validate_rational(cls, v):
        return None if v is None else str(Rational(v))

    def stats_line(self) -> str:
        kind = "exact" if self.exact_treewidth else "heuristic"
        t = self.times
        line = (f"# p={self.p} q={self.q} classes={self.classes} treewidth={self.treewidth} ({kind}) "
                f"nodes={self.nodes} max_table={self.max_table} "
                f"normalize={t.normalize:.3f}s cells={t.cells:.3f}s decompose={t.decompose:.3f}s "
                f"dp={t.dp:.3f}s total={t.total:.3f}s")
        if self.oracle is not None:
            line += f" oracle={self.oracle} ({t.oracle:.3f}s)"
        return line


class BenchRow(BaseModel):
    size: int
    treewidth: int
    p: int
    q: int
    t_decompose: float
    t_dp: float
    total: float
    clique_size: Optional[int] = None
    generator: str = "fs"
    verified: str = ""

    @field_validator("t_decompose", "t_dp", "total")
    @classmethod
    def round_seconds(cls, v):
        return round(v, 4)


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1 like parse errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def exit_codes(func: Callable[[argparse.Namespace], int]) -> Callable[[argparse.Namespace], int]:
    """Map service failures to process exit codes."""

    @functools.wraps(func)
    def wrapper(args: argparse.Namespace) -> int:
        try:
            return func(args)
        except (ProblemParseError, ValidationError, OSError, json.JSONDecodeError) as e:
            logger.error(f"Input error in {func.__name__}: {str(e)}")
            print(f"error: {str(e)}", file=sys.stderr)
            return 1
        except (FragmentError, DecompositionError, OracleCapError, ZeroPartitionError) as e:
            logger.error(f"Semantic error in {func.__name__}: {str(e)}")
            print(f"error: {str(e)}", file=sys.stderr)
            return 2
        except InvariantError as e:
            logger.error(f"Invariant failure in {func.__name__}: {str(e)}")
            print(f"error: {str(e)}", file=sys.stderr)
            return 3
        except ValueError as e:
            logger.error(f"Invalid arguments to {func.__name__}: {str(e)}")
            print(f"error: {str(e)}", file=sys.stderr)
            return 1
    return wrapper


def command(name: str):
    def register(func):
        handlers[name] = exit_codes(func)
        return handlers[name]
    return register


def read_problem(path: str) -> Problem:
    return parse_problem(Path(path).read_text())


def emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def print_answer(answer: Rational, as_float: bool) -> None:
    print(str(Rational(answer)))
    if as_float:
        print(f"~{float(answer):.12g} (approximate)")


def run_count(problem: Problem, decomposition_path: Optional[str] = None, threads: Optional[int] = None,
              oracle_check: bool = False, prune: Optional[bool] = None) -> RunReport:
    decomposition = parse_pace_td(Path(decomposition_path).read_text()) if decomposition_path else None
    result = wfomc(problem, decomposition, threads=threads, prune=prune)
    times = StageTimes(**result.times)
    oracle = None
    if oracle_check:
        t = time.time()
        oracle = ground_count(problem)
        times.oracle = time.time() - t
        if oracle != result.answer:
            raise InvariantError(f"solver answer {result.answer} differs from ground enumeration {oracle}")
        logger.info("Oracle check passed")
    return RunReport(
        answer=result.answer,
        p=result.p,
        q=result.q,
        classes=result.classes,
        treewidth=result.width,
        exact_treewidth=result.exact_width,
        nodes=result.nodes,
        max_table=result.max_table,
        times=times,
        oracle=oracle,
    )


@command("count")
def cmd_count(args: argparse.Namespace) -> int:
    problem = read_problem(args.file)
    report = run_count(problem, args.decomposition, args.threads, args.oracle_check, None if args.prune else False)
    print_answer(Rational(report.answer), args.float)
    print(report.stats_line())
    return 0


@command("oracle")
def cmd_oracle(args: argparse.Namespace) -> int:
    problem = read_problem(args.file)
    t = time.time()
    if args.lifted:
        answer = lifted_no_evidence(problem)
    else:
        answer = ground_count(problem, cap=args.cap)
    print_answer(answer, args.float)
    print(f"# {'lifted' if args.lifted else 'ground'} oracle in {time.time() - t:.3f}s")
    return 0


def mln_probability(problem: Problem, query: str, threads: Optional[int] = None) -> Rational:
    """Ratio of the conditioned count to the partition function."""
    partition = wfomc(problem, threads=threads).answer
    if partition == 0:
        raise ZeroPartitionError("the partition function is zero; the MLN has no model")
    numerator = wfomc(apply_query(problem, query), threads=threads).answer
    return Rational(numerator) / Rational(partition)


@command("mln")
def cmd_mln(args: argparse.Namespace) -> int:
    problem = read_problem(args.file)
    query = args.query if args.query is not None else problem.query
    if query is None:
        raise ProblemParseError("no query given on the command line or in the file")
    probability = mln_probability(problem, query, args.threads)
    print_answer(probability, args.float)
    return 0


@command("decompose")
def cmd_decompose(args: argparse.Namespace) -> int:
    problem = read_problem(args.file)
    user = None
    if args.decomposition:
        user = parse_pace_td(Path(args.decomposition).read_text())
    elif problem.decomposition is not None:
        user = from_problem_decomposition(problem.decomposition)
    _, nice = decompose_for(prepare(problem), user)
    emit(format_nice(nice, problem.domain.names), args.output)
    return 0


@command("encode-seating")
def cmd_encode_seating(args: argparse.Namespace) -> int:
    data = json.loads(Path(args.instance).read_text())
    if args.mode:
        data["mode"] = args.mode
    instance = SeatingInstance.model_validate(data)
    problem, multiplier = encode_seating(instance, compact=not args.literal)
    if args.check:
        encoded = wfomc(problem, threads=args.threads).answer * multiplier
        brute = brute_force_seatings(instance)
        if encoded != brute:
            raise InvariantError(f"encoded count {encoded} differs from brute force {brute}")
        print(f"# {instance.mode} arrangements: {brute}", file=sys.stderr)
    header = f"# {instance.mode} seating; multiply the count by {multiplier}\n"
    emit(header + format_problem(problem), args.output)
    return 0


@command("gen-fs")
def cmd_gen_fs(args: argparse.Namespace) -> int:
    weights = {}
    if args.smokes_weight is not None:
        weights["smokes"] = (args.smokes_weight, Rational(1))
    problem = gen_friends_smokers(args.cliques, args.clique_size, weights, with_evidence=not args.no_evidence)
    emit(format_problem(problem), args.output)
    return 0


@command("gen-ws")
def cmd_gen_ws(args: argparse.Namespace) -> int:
    problem = gen_watts_strogatz(
        args.n, args.k, start=args.start, simplified=args.simplified, w1=args.w1, w2=args.w2,
        extra_edges=args.extra, wired_total=args.wired_total, friends_weight=args.friends_weight,
    )
    emit(format_problem(problem), args.output)
    return 0


def _read_graph(args: argparse.Namespace) -> nx.Graph:
    if args.edges:
        graph = nx.Graph()
        for pair in args.edges.split(","):
            a, _, b = pair.strip().partition("-")
            if not b:
                raise ValueError(f"edges read 'a-b,c-d', got {pair!r}")
            graph.add_edge(a.strip(), b.strip())
        return graph
    if args.graph:
        return nx.read_edgelist(args.graph, nodetype=str)
    if args.random is not None:
        rng = np.random.default_rng(args.seed)
        graph = nx.empty_graph(args.random)
        pairs = [(a, b) for a in range(args.random) for b in range(a + 1, args.random)]
        keep = rng.random(len(pairs)) < args.density
        graph.add_edges_from(pair for pair, kept in zip(pairs, keep) if kept)
        return nx.relabel_nodes(graph, {v: f"v{v}" for v in graph.nodes})
    raise ValueError("give --edges, --graph or --random")


@command("gen-indset")
def cmd_gen_indset(args: argparse.Namespace) -> int:
    emit(format_problem(gen_independent_set(_read_graph(args))), args.output)
    return 0


def _parse_sizes(text: str) -> List[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def bench_rows(generator: str, sizes: List[int], clique_sizes: Optional[List[int]] = None,
               oracle_upto: int = 0, threads: Optional[int] = None) -> List[BenchRow]:
    """Solve each generated problem once and collect stage timings."""
    cases = []
    if clique_sizes:
        for n in sizes:
            for c in clique_sizes:
                if n % c:
                    raise ValueError(f"clique size {c} does not divide {n}")
                cases.append((n, c))
    else:
        cases = [(n, 3) for n in sizes]

    rows = []
    for n, c in tqdm(cases, desc=f"bench {generator}", disable=not cases):
        if generator == "fs":
            problem = gen_friends_smokers(n // c, c)
        elif generator == "ws":
            problem = gen_watts_strogatz(n, 2, start="ring", simplified=True)
        else:
            raise ValueError(f"unknown generator: {generator}")
        result = wfomc(problem, threads=threads)
        verified = ""
        if n <= oracle_upto:
            try:
                oracle = ground_count(problem)
            except OracleCapError as e:
                logger.warning(f"Skipping oracle at size {n}: {str(e)}")
                verified = "skipped"
            else:
                if oracle != result.answer:
                    raise InvariantError(f"size {n}: solver {result.answer} differs from oracle {oracle}")
                verified = "yes"
        rows.append(BenchRow(
            size=n,
            treewidth=result.width,
            p=result.p,
            q=result.q,
            t_decompose=result.times["decompose"],
            t_dp=result.times["dp"],
            total=sum(result.times.values()),
            clique_size=c if generator == "fs" else None,
            generator=generator,
            verified=verified,
        ))
    return rows


def write_bench_csv(rows: List[BenchRow], out) -> None:
    writer = csv.DictWriter(out, fieldnames=list(BenchRow.model_fields))
    writer.writeheader()
    for row in rows:
        writer.writerow(row.model_dump())


@command("bench")
def cmd_bench(args: argparse.Namespace) -> int:
    sizes = _parse_sizes(args.sizes)
    clique_sizes = _parse_sizes(args.vary_clique) if args.vary_clique else None
    rows = bench_rows(args.generator, sizes, clique_sizes, args.oracle_upto, args.threads)
    if args.output:
        with open(args.output, "w", newline="") as f:
            write_bench_csv(rows, f)
        logger.info(f"Wrote {len(rows)} rows to {args.output}")
    else:
        write_bench_csv(rows, sys.stdout)
    return 0


def build_parser() -> CliParser:
    parser = CliParser(prog="liftwidth", description="Exact weighted first-order model counting over bounded-treewidth evidence")
    sub = parser.add_subparsers(dest="command", required=True)
    threads = default_threads()

    p = sub.add_parser("count", help="Weighted model count of a problem file")
    p.add_argument("file")
    p.add_argument("--decomposition", help="PACE .td tree decomposition of the evidence graph")
    p.add_argument("--oracle-check", action="store_true", help="Compare against ground enumeration")
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("--float", action="store_true", help="Also print a decimal approximation")
    p.add_argument("--no-prune", dest="prune", action="store_false", help="Disable bag-pair pruning")

    p = sub.add_parser("oracle", help="Count by ground enumeration")
    p.add_argument("file")
    p.add_argument("--cap", type=int, default=None, help="Largest number of free ground atoms")
    p.add_argument("--lifted", action="store_true", help="Use the evidence-free configuration sum instead")
    p.add_argument("--float", action="store_true")

    p = sub.add_parser("mln", help="Exact probability of a query under an MLN")
    p.add_argument("file")
    p.add_argument("--query", help="Ground literals 'P(a), ~Q(a,b)' or a closed formula")
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("--float", action="store_true")

    p = sub.add_parser("decompose", help="Print the nice tree decomposition used for a problem")
    p.add_argument("file")
    p.add_argument("--decomposition")
    p.add_argument("-o", "--output")

    p = sub.add_parser("encode-seating", help="Encode a seating instance (JSON) as a problem file")
    p.add_argument("instance")
    p.add_argument("--mode", choices=["stable", "envy-free"])
    p.add_argument("--literal", action="store_true", help="Spell envy out over neighbour-class tuples")
    p.add_argument("--check", action="store_true", help="Compare the encoded count with brute force")
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("-o", "--output")

    p = sub.add_parser("gen-fs", help="Friends-and-smokers with clique evidence")
    p.add_argument("--cliques", type=int, required=True)
    p.add_argument("--clique-size", type=int, default=3)
    p.add_argument("--smokes-weight", type=parse_rational)
    p.add_argument("--no-evidence", action="store_true")
    p.add_argument("-o", "--output")

    p = sub.add_parser("gen-ws", help="Watts-Strogatz random graph MLN")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--start", choices=["ring", "cliques"], default="ring")
    p.add_argument("--simplified", action="store_true")
    p.add_argument("--w1", type=parse_rational, default=Rational(1))
    p.add_argument("--w2", type=parse_rational, default=Rational(2))
    p.add_argument("--extra", type=int, help="Shortcut edges M for the simplified variant")
    p.add_argument("--wired-total", type=int, help="Override |WiredEdge| for the simplified variant")
    p.add_argument("--friends-weight", type=parse_rational)
    p.add_argument("-o", "--output")

    p = sub.add_parser("gen-indset", help="Independent sets of a graph")
    p.add_argument("--edges", help="Edge list such as '1-2,1-3,2-3'")
    p.add_argument("--graph", help="Edge-list file")
    p.add_argument("--random", type=int, help="Number of vertices of a G(n, p) graph")
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")

    p = sub.add_parser("bench", help="Timing sweep written as CSV")
    p.add_argument("--generator", choices=["fs", "ws"], default="fs")
    p.add_argument("--sizes", default="3,6,9,12,15,18,21,24,27,30")
    p.add_argument("--vary-clique", help="Clique sizes to sweep at each size")
    p.add_argument("--oracle-upto", type=int, default=0)
    p.add_argument("--threads", type=int, default=threads)
    p.add_argument("-o", "--output")

    for name, subparser in sub.choices.items():
        subparser.set_defaults(handler=handlers[name])
    return parser
