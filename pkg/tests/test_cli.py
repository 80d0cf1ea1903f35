import json
import subprocess
import sys

import pytest

from hisalog.cli import main, parse_bytes
from oracles import binary_tree_edges, path_edges


def write_edges(path, edges):
    path.write_text("".join(f"{a}\t{b}\n" for a, b in sorted(edges)))
    return path


@pytest.fixture
def path5(tmp_path):
    return write_edges(tmp_path / "path5.tsv", path_edges(5))


def test_reach_prints_count(tmp_path, path5, capsys):
    out = tmp_path / "out"
    assert main(["run", "--program", "reach", "--facts", f"Edge={path5}", "--out", str(out)], environ={}) == 0
    assert capsys.readouterr().out == "Reach 10\n"
    assert (out / "stats.tsv").read_text().startswith("phase\tseconds\n")
    assert not (out / "Reach.tsv").exists()


def test_emit_facts_and_stats(tmp_path, path5, capsys):
    out = tmp_path / "out"
    argv = ["run", "--program", "reach", "--facts", f"Edge={path5}", "--out", str(out), "--emit-facts", "--stats"]
    assert main(argv, environ={}) == 0
    text = (out / "Reach.tsv").read_text().splitlines()
    assert len(text) == 10 and text[0] == "1\t2"
    stats = json.loads((out / "stats.json").read_text())
    assert stats["delta_rows"]["Reach"] == [4, 3, 2, 1]
    assert "relation\tReach" in capsys.readouterr().err


def test_missing_facts_is_usage_error(tmp_path, capsys):
    assert main(["run", "--program", "reach", "--out", str(tmp_path)], environ={}) == 1
    assert "Edge" in capsys.readouterr().err


@pytest.mark.parametrize(
    "extra",
    [
        ["--ebm", "maybe"],
        ["--workers", "many"],
        ["--load-factor", "1.0"],
        ["--alpha", "0"],
        ["--facts", "Reach=x.tsv"],
        ["--facts", "Bogus=x.tsv"],
        ["--facts", "novalue"],
        ["--unknown-flag"],
    ],
)
def test_bad_flags_exit_1(tmp_path, path5, extra, capsys):
    argv = ["run", "--program", "reach", "--facts", f"Edge={path5}", "--out", str(tmp_path / "o")] + extra
    assert main(argv, environ={}) == 1
    assert capsys.readouterr().err


def test_bad_input_file_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1 2 3\n")
    assert main(["run", "--program", "reach", "--facts", f"Edge={bad}", "--out", str(tmp_path / "o")], environ={}) == 1
    assert "bad.tsv:1" in capsys.readouterr().err


def test_bad_program_file_exit_1(tmp_path, path5, capsys):
    prog = tmp_path / "p.dl"
    prog.write_text(".decl Edge(2)\nP(x) :- Edge(x, y)\n")
    assert main(["run", "--program", str(prog), "--facts", f"Edge={path5}", "--out", str(tmp_path / "o")], environ={}) == 1
    assert "syntax error" in capsys.readouterr().err


def test_budget_exit_2(tmp_path, capsys):
    edges = write_edges(tmp_path / "chain.tsv", path_edges(200))
    argv = ["run", "--program", "reach", "--facts", f"Edge={edges}", "--out", str(tmp_path / "o"), "--memory-budget", "1024"]
    assert main(argv, environ={}) == 2
    err = capsys.readouterr().err
    assert "not enough memory in phase '" in err


def test_env_overrides_and_flag_precedence(tmp_path, path5, capsys):
    out = tmp_path / "o"
    base = ["run", "--program", "reach", "--facts", f"Edge={path5}", "--out", str(out), "--stats"]
    assert main(base, environ={"ENGINE_MEMORY_BUDGET": "100"}) == 2
    assert main(base + ["--memory-budget", "1M"], environ={"ENGINE_MEMORY_BUDGET": "100"}) == 0
    assert main(base, environ={"ENGINE_ALPHA": "oops"}) == 1
    assert main(base, environ={"ENGINE_EBM": "off", "ENGINE_WORKERS": "max"}) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["merge_buffer_reuses"] == 0


def test_ebm_on_off_same_outputs(tmp_path):
    tree = write_edges(tmp_path / "tree.tsv", binary_tree_edges(4))
    outs = []
    for ebm in ("on", "off"):
        out = tmp_path / ebm
        argv = ["run", "--program", "sg", "--facts", f"Edge={tree}", "--out", str(out), "--ebm", ebm, "--emit-facts"]
        assert main(argv, environ={}) == 0
        outs.append((out / "SG.tsv").read_bytes())
    assert outs[0] == outs[1]


def test_symbols(tmp_path, capsys):
    f = tmp_path / "names.tsv"
    f.write_text("ann bo\nbo cy\n")
    out = tmp_path / "o"
    argv = ["run", "--program", "reach", "--facts", f"Edge={f}", "--out", str(out), "--symbols", "--emit-facts"]
    assert main(argv, environ={}) == 0
    assert (out / "Reach.tsv").read_text() == "ann\tbo\nann\tcy\nbo\tcy\n"


def test_plan_command(capsys):
    assert main(["plan", "--program", "sg"], environ={}) == 0
    assert "SG.delta" in capsys.readouterr().out


def test_parse_bytes():
    assert parse_bytes("1024") == 1024
    assert parse_bytes("2k") == 2048
    assert parse_bytes("1.5G") == 3 << 29
    assert parse_bytes("16MB") == 16 << 20


def test_module_entry_point(tmp_path, path5):
    proc = subprocess.run(
        [sys.executable, "-m", "hisalog", "run", "--program", "reach", "--facts", f"Edge={path5}", "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout == "Reach 10\n"
    proc = subprocess.run([sys.executable, "-m", "hisalog", "run"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stdout == ""
