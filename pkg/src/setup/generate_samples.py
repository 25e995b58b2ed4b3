import argparse
import json
import logging
import os
from pathlib import Path

import networkx as nx
from dotenv import load_dotenv
from tqdm import tqdm

from src.services.fol import format_problem
from src.services.problems import gen_friends_smokers, gen_independent_set, gen_watts_strogatz
from src.services.seating import SeatingInstance, encode_seating

load_dotenv()
logging.basicConfig(
    level=os.getenv("LIFTWIDTH_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

R_OR_S = """\
# count is (2^(2n+1) + 3^n)^n; 3723875 at n = 3
domain 3
predicate R/1 weight 2 1
predicate S/2 weight 3 1
sentence: forall x forall y: R(x) | S(x,y)
"""

CONTRADICTORY = """\
# unary evidence asserts and denies P(a); the count is 0
domain {a, b}
predicate P/1
predicate E/2
sentence: forall x forall y: E(x,y) -> P(x)
evidence unary: P(a), ~P(a)
"""

SMOKERS_MLN = """\
domain {a, b, c}
predicate smokes/1
predicate friends/2
mln: inf : forall x: ~friends(x,x)
mln: 2 : smokes(x) & friends(x,y) -> smokes(y)
query: smokes(a)
"""

SEATING_PATH = {
    "n": 4,
    "edges": [[0, 1], [1, 2], [2, 3]],
    "class_sizes": [2, 2],
    "preferences": [["1", "0", "0"], ["0", "1", "0"]],
    "mode": "stable",
}


def samples():
    """(file name, problem text) for every sample in the corpus."""
    yield "r_or_s.wfomc", R_OR_S
    yield "contradictory.wfomc", CONTRADICTORY
    yield "smokers_mln.wfomc", SMOKERS_MLN
    graph = nx.Graph([("1", "2"), ("1", "3"), ("2", "3"), ("1", "4")])
    yield "indset_example.wfomc", format_problem(gen_independent_set(graph))
    yield "indset_path8.wfomc", format_problem(gen_independent_set(nx.path_graph(8)))
    yield "fs_1clique.wfomc", format_problem(gen_friends_smokers(1))
    yield "fs_2cliques.wfomc", format_problem(gen_friends_smokers(2))
    yield "ws_full_n3.wfomc", format_problem(gen_watts_strogatz(3, 2, start="cliques"))
    yield "ws_simplified_n6.wfomc", format_problem(gen_watts_strogatz(6, 2, start="cliques", simplified=True))
    instance = SeatingInstance.model_validate(SEATING_PATH)
    for mode in ("stable", "envy-free"):
        problem, multiplier = encode_seating(instance.model_copy(update={"mode": mode}))
        header = f"# {mode} seating; multiply the count by {multiplier}\n"
        yield f"seating_path4_{mode}.wfomc", header + format_problem(problem)


def main():
    parser = argparse.ArgumentParser(description="Write the sample problem corpus")
    parser.add_argument("--output-dir", default="problems")
    args = parser.parse_args()

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "seating_path4.json").write_text(json.dumps(SEATING_PATH, indent=2) + "\n")
    written = 0
    for name, text in tqdm(list(samples()), desc="samples"):
        try:
            (out / name).write_text(text)
            written += 1
        except OSError as e:
            logger.error(f"Failed to write {name}: {str(e)}")
    logger.info(f"Sample corpus complete: {written} files in {out}")


if __name__ == "__main__":
    main()
