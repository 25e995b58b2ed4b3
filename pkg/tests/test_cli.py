import csv
import json

import pytest
from sympy import Rational

from conftest import R_OR_S
from main import main
from src.routes import commands


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write


def stdout_lines(capsys):
    return capsys.readouterr().out.splitlines()


def test_count_r_or_s(write, capsys):
    path = write("r_or_s.wfomc", R_OR_S.format(n=3))
    assert main(["count", path]) == 0
    lines = stdout_lines(capsys)
    assert lines[0] == "3723875"
    assert lines[1].startswith("# p=4 q=4 ")
    assert "treewidth=0 (exact)" in lines[1]


def test_count_with_float_and_oracle_check(write, capsys):
    path = write("frac.wfomc", "domain 2\npredicate P/1 weight 1/2 1\nsentence: true\n")
    assert main(["count", path, "--float", "--oracle-check"]) == 0
    lines = stdout_lines(capsys)
    assert lines[0] == "9/4"
    assert lines[1] == "~2.25 (approximate)"
    assert "oracle=9/4" in lines[2]


def test_contradictory_evidence_counts_zero(write, capsys):
    path = write("bad.wfomc", "domain {a, b}\npredicate P/1\nsentence: true\nevidence unary: P(a), ~P(a)\n")
    assert main(["count", path]) == 0
    assert stdout_lines(capsys)[0] == "0"


def test_independent_sets_round_trip(tmp_path, capsys):
    out = str(tmp_path / "indset.wfomc")
    assert main(["gen-indset", "--edges", "1-2,1-3,2-3,1-4", "-o", out]) == 0
    assert main(["count", out]) == 0
    assert stdout_lines(capsys)[0] == "7"


def test_user_decomposition_file(write, capsys):
    problem = write("path.wfomc", "domain 3\npredicate E/2\npredicate P/1\n"
                                  "sentence: forall x forall y: E(x,y) -> P(x)\nevidence closed E: E(0,1), E(1,2)\n")
    td = write("path.td", "s td 2 2 3\nb 1 1 2\nb 2 2 3\n1 2\n")
    assert main(["count", problem, "--decomposition", td]) == 0
    first = stdout_lines(capsys)[0]
    assert main(["count", problem, "--no-prune", "--threads", "2"]) == 0
    assert stdout_lines(capsys)[0] == first


@pytest.mark.parametrize("text", [
    "domain 3\npredicate P/1\nsentence: forall x: P(x\n",
    "predicate P/1\nsentence: true\n",
    "domain 3\npredicate P/1\nsentence: true\nbogus line\n",
])
def test_parse_errors_exit_one(write, text):
    assert main(["count", write("broken.wfomc", text)]) == 1


def test_missing_file_exits_one(tmp_path):
    assert main(["count", str(tmp_path / "absent.wfomc")]) == 1


def test_usage_error_exits_one():
    with pytest.raises(SystemExit) as exc:
        main(["count"])
    assert exc.value.code == 1


def test_outside_fragment_exits_two(write):
    path = write("three.wfomc", "domain 2\npredicate E/2\nsentence: forall x forall y forall z: E(x,y) | E(y,z)\n")
    assert main(["count", path]) == 2


def test_bad_decomposition_exits_two(write):
    problem = write("cycle.wfomc", "domain 3\npredicate E/2\nsentence: true\nevidence closed E: E(0,1), E(1,2), E(2,0)\n")
    td = write("cycle.td", "s td 2 2 3\nb 1 1 2\nb 2 2 3\n1 2\n")
    assert main(["count", problem, "--decomposition", td]) == 2


def test_oracle_cap_exits_two(write):
    path = write("r_or_s.wfomc", R_OR_S.format(n=3))
    assert main(["oracle", path, "--cap", "4"]) == 2


def test_oracle_commands(write, capsys):
    path = write("r_or_s.wfomc", R_OR_S.format(n=2))
    assert main(["oracle", path]) == 0
    assert stdout_lines(capsys)[0] == "1681"
    assert main(["oracle", path, "--lifted"]) == 0
    assert stdout_lines(capsys)[0] == "1681"


def test_oracle_mismatch_exits_three(write, monkeypatch):
    monkeypatch.setattr(commands, "ground_count", lambda problem, cap=None: Rational(-1))
    path = write("r_or_s.wfomc", R_OR_S.format(n=1))
    assert main(["count", path, "--oracle-check"]) == 3


SMOKERS = "domain 3\npredicate smokes/1\nmln: 2 : smokes(x)\n"


@pytest.mark.parametrize("query, expected", [("true", "1"), ("smokes(0)", "2/3"), ("smokes(0), ~smokes(1)", "2/9")])
def test_mln_queries(write, capsys, query, expected):
    assert main(["mln", write("smokers.mln", SMOKERS), "--query", query]) == 0
    assert stdout_lines(capsys)[0] == expected


def test_mln_query_from_file(write, capsys):
    assert main(["mln", write("smokers.mln", SMOKERS + "query: exists x: smokes(x)\n")]) == 0
    assert stdout_lines(capsys)[0] == "26/27"


def test_mln_without_query_exits_one(write):
    assert main(["mln", write("smokers.mln", SMOKERS)]) == 1


def test_mln_zero_partition_exits_two(write):
    text = SMOKERS + "evidence unary: smokes(0), ~smokes(0)\n"
    assert main(["mln", write("empty.mln", text), "--query", "smokes(1)"]) == 2


def test_decompose_prints_nice_tree(write, capsys):
    path = write("path.wfomc", "domain {a, b, c}\npredicate E/2\nsentence: true\nevidence closed E: E(a,b), E(b,c)\n")
    assert main(["decompose", path]) == 0
    out = capsys.readouterr().out
    assert "# leaf" in out
    assert "forget b" in out


def test_generated_friends_smokers(tmp_path, capsys):
    out = str(tmp_path / "fs.wfomc")
    assert main(["gen-fs", "--cliques", "1", "--smokes-weight", "2", "-o", out]) == 0
    assert main(["count", out]) == 0
    assert stdout_lines(capsys)[0] == "9"


def test_generated_watts_strogatz(tmp_path, capsys):
    out = str(tmp_path / "ws.mln")
    assert main(["gen-ws", "--n", "4", "--simplified", "--wired-total", "5", "-o", out]) == 0
    assert main(["count", out]) == 0
    assert stdout_lines(capsys)[0] == "4"


def test_gen_indset_needs_a_graph():
    assert main(["gen-indset"]) == 1


def test_bench_empty_sweep_writes_header(capsys):
    assert main(["bench", "--sizes", ""]) == 0
    assert stdout_lines(capsys) == [",".join(commands.BenchRow.model_fields)]


def test_bench_rows_are_verified(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "3,6", "--oracle-upto", "3", "-o", str(out)]) == 0
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [row["size"] for row in rows] == ["3", "6"]
    assert [row["verified"] for row in rows] == ["yes", ""]
    assert rows[1]["treewidth"] == "2"


def test_bench_rejects_indivisible_clique_size():
    assert main(["bench", "--sizes", "4", "--vary-clique", "3"]) == 1


def test_encode_seating_with_check(write, capsys, tmp_path):
    instance = write("path.json", json.dumps({
        "n": 3, "edges": [[0, 1], [1, 2]], "class_sizes": [2, 1], "preferences": [[0, 1], [0, 0]],
    }))
    out = tmp_path / "seating.wfomc"
    assert main(["encode-seating", instance, "--mode", "envy-free", "--check", "-o", str(out)]) == 0
    assert "envy-free arrangements: 2" in capsys.readouterr().err
    text = out.read_text()
    assert text.startswith("# envy-free seating; multiply the count by 2\n")
    assert main(["count", str(out)]) == 0
    assert stdout_lines(capsys)[0] == "1"


def test_encode_seating_invalid_instance(write):
    instance = write("bad.json", json.dumps({"n": 3, "edges": [], "class_sizes": [1], "preferences": [[0]]}))
    assert main(["encode-seating", instance]) == 1


def test_gen_indset_random_graph_is_seeded(tmp_path, capsys):
    first, second = str(tmp_path / "a.wfomc"), str(tmp_path / "b.wfomc")
    assert main(["gen-indset", "--random", "7", "--density", "0.4", "--seed", "3", "-o", first]) == 0
    assert main(["gen-indset", "--random", "7", "--density", "0.4", "--seed", "3", "-o", second]) == 0
    assert (tmp_path / "a.wfomc").read_text() == (tmp_path / "b.wfomc").read_text()
    assert main(["count", first]) == 0
    assert int(stdout_lines(capsys)[0]) >= 8
