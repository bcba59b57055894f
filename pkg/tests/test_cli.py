"""Command-line interface: exact outputs, exit codes, and determinism."""

import json
import os
import subprocess
import sys

import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))


def cli(*args, hash_seed="0", stdin=None):
    env = dict(os.environ, QIF_COLOR="0", PYTHONHASHSEED=hash_seed)
    env["PYTHONPATH"] = os.path.join(ROOT, "src")
    proc = subprocess.run(
        [sys.executable, "-m", "kuifje.cli", *args],
        capture_output=True,
        text=True,
        input=stdin,
        env=env,
        cwd=ROOT,
        timeout=120,
    )
    return proc


def corpus(name):
    return os.path.join("corpus", name)


# ---- wp


def test_wp_table_output_exact():
    p = cli("wp", corpus("branch_assign.kuif"))
    assert p.returncode == 0
    assert p.stdout == "[a or b] MAX [a or not b]\n"
    assert p.stderr == ""


def test_wp_json_output():
    p = cli("wp", corpus("branch_assign.kuif"), "--format", "json")
    assert p.returncode == 0
    assert json.loads(p.stdout) == {"pre": "[a or b] MAX [a or not b]"}


def test_wp_no_simplify_keeps_dominated_atoms():
    p = cli("wp", corpus("branch_assign.kuif"), "--no-simplify")
    assert p.returncode == 0
    assert p.stdout == (
        "[a or b] MAX [a or not b] MAX [b and not a] MAX [not a and not b]\n"
    )


def test_wp_explicit_post_overrides():
    p = cli("wp", corpus("branch_assign.kuif"), "--post", "[b]")
    assert p.returncode == 0
    assert p.stdout == "[a or b]\n"


def test_wp_show_trace():
    p = cli("wp", corpus("skip_loop.kuif"), "--show-trace")
    assert p.returncode == 0
    lines = p.stdout.splitlines()
    assert lines[0] == "# after print x mod 2"
    assert lines[1].startswith("#   [x = 0 or x = 1]")
    assert lines[2] == "# after while x < 0 do"
    assert lines[-1] == (
        "[x = 0 or x = 1] MAX [x = 0 or x = 3] "
        "MAX [x = 1 or x = 2] MAX [x = 2 or x = 3]"
    )


# ---- run


def test_run_table_output_exact():
    p = cli(
        "run",
        corpus("branch_assign.kuif"),
        "--prior",
        "product a:{true:3/10,false:7/10} b:{true:3/10,false:7/10}",
    )
    assert p.returncode == 0
    assert p.stdout == (
        "7/10:\n"
        "  a=false b=false : 7/10\n"
        "  a=false b=true : 3/10\n"
        "3/10:\n"
        "  a=true b=true : 1\n"
    )


def test_run_prior_file():
    p = cli(
        "run",
        corpus("branch_assign.kuif"),
        "--prior",
        os.path.join("corpus", "priors", "secret_pair_37.prior"),
    )
    assert p.returncode == 0
    assert p.stdout.splitlines()[0] == "7/10:"


def test_run_json_hyper_shape():
    p = cli("run", corpus("threshold_print.kuif"), "--prior", "uniform",
            "--format", "json")
    assert p.returncode == 0
    doc = json.loads(p.stdout)
    weights = [entry["weight"] for entry in doc["hyper"]]
    assert weights == ["2/5", "3/5"]
    first = doc["hyper"][0]["inner"]
    assert [row["state"]["x"] for row in first] == [0, 1, 2, 3]
    assert {row["prob"] for row in first} == {"1/4"}


# ---- eval, including the hyper json round-trip


def test_eval_on_prior():
    p = cli(
        "eval",
        corpus("threshold_print.kuif"),
        "--gain",
        "MAX w in 0..9: [x = w]",
        "--prior",
        "uniform",
    )
    assert p.returncode == 0
    assert p.stdout == "1/10\n"


def test_eval_hyper_roundtrip(tmp_path):
    out = cli("run", corpus("threshold_print.kuif"), "--prior", "uniform",
              "--format", "json")
    hyper_file = tmp_path / "h.json"
    hyper_file.write_text(out.stdout)
    p = cli(
        "eval",
        corpus("threshold_print.kuif"),
        "--gain",
        "MAX w in 0..9: [x = w]",
        "--hyper",
        str(hyper_file),
    )
    assert p.returncode == 0
    assert p.stdout == "1/5\n"
    pj = cli(
        "eval",
        corpus("threshold_print.kuif"),
        "--gain",
        "MAX w in 0..9: [x = w]",
        "--hyper",
        str(hyper_file),
        "--format",
        "json",
    )
    assert json.loads(pj.stdout) == {"value": "1/5"}


def test_eval_rejects_hyper_outside_domains(tmp_path):
    doc = {
        "hyper": [
            {"weight": "1", "inner": [{"state": {"x": 99}, "prob": "1"}]}
        ]
    }
    hyper_file = tmp_path / "bad.json"
    hyper_file.write_text(json.dumps(doc))
    p = cli(
        "eval",
        corpus("threshold_print.kuif"),
        "--gain",
        "[x = 0]",
        "--hyper",
        str(hyper_file),
    )
    assert p.returncode == 2
    assert p.stdout == ""
    assert "error:" in p.stderr


# ---- check


def test_check_passes_with_random_priors():
    p = cli(
        "check", corpus("branch_assign.kuif"), "--priors", "random:4:7",
        "--verbose",
    )
    assert p.returncode == 0
    assert p.stdout == (
        "PASS random #0 : value = 23/27\n"
        "PASS random #1 : value = 15/17\n"
        "PASS random #2 : value = 19/25\n"
        "PASS random #3 : value = 22/35\n"
        "PASS pre = [a or b] MAX [a or not b]\n"
        "checked 4 priors: 4 agree, 0 disagree\n"
    )


def test_check_exhaustive_quiet_by_default():
    p = cli("check", corpus("branch_assign.kuif"), "--priors", "exhaustive")
    assert p.returncode == 0
    assert p.stdout == (
        "PASS pre = [a or b] MAX [a or not b]\n"
        "checked 4 priors: 4 agree, 0 disagree\n"
    )


def test_check_unsound_mode_fails():
    p = cli(
        "check",
        corpus("branch_assign.kuif"),
        "--unsound-no-branch-leak",
        "--prior",
        "product a:{true:3/10,false:7/10} b:{true:3/10,false:7/10}",
    )
    assert p.returncode == 1
    assert p.stdout == (
        "FAIL product a:{true:3/10,false:7/10} b:{true:3/10,false:7/10} : "
        "pre = 51/100, post = 79/100\n"
        "FAIL pre = [a or b] MAX [not a and not b]\n"
        "checked 1 priors: 0 agree, 1 disagree\n"
    )


# ---- error reporting and exit codes


def test_parse_error_exit_2(tmp_path):
    f = tmp_path / "bad.kuif"
    f.write_text("hidden x : int[0..3]\nMAX w in 3..1: [x = w]\n")
    p = cli("wp", str(f))
    assert p.returncode == 2
    assert p.stderr == "error: 2:1: expected a statement, found 'MAX'\n"
    assert p.stdout == ""


def test_unbounded_loop_exit_3(tmp_path):
    f = tmp_path / "spin.kuif"
    f.write_text(
        "hidden x : int[0..3]\nwhile x < 4 do\n  x := x mod 4\nod\n"
        "@post { MAX w in 0..3: [x = w] }\n"
    )
    p = cli("wp", str(f), "--loop-bound", "40")
    assert p.returncode == 3
    assert p.stderr == (
        "error: loop at line 2 does not provably exit within 40 iterations "
        "on the declared state space; annotate it or raise the loop bound\n"
    )


def test_bad_invariant_exit_4(tmp_path):
    f = tmp_path / "badinv.kuif"
    f.write_text(
        "hidden x : int[0..3]\nhidden n : int[0..3]\n"
        "n := 0;\nwhile n != x invariant { [n = 0] } do\n  n := n + 1\nod\n"
        "@post { MAX w in 0..3: [x = w] }\n"
    )
    p = cli("wp", str(f))
    assert p.returncode == 4
    lines = p.stderr.splitlines()
    assert lines[0].startswith(
        "error: loop annotation is not self-consistent: on the reachable prior"
    )
    assert lines[1] == (
        "  needed: [n = 0] == [n != x] AND pre(body, annotation) "
        "PLUS [not (n != x)] AND post"
    )


def test_missing_file_exit_2():
    p = cli("wp", "corpus/no_such_program.kuif")
    assert p.returncode == 2
    assert p.stderr.startswith("error:")


# ---- determinism: identical bytes under different hash seeds


@pytest.mark.parametrize(
    "args",
    [
        ("wp", "corpus/threshold_print.kuif"),
        ("wp", "corpus/mark_slot.kuif", "--no-simplify"),
        ("run", "corpus/threshold_print.kuif", "--prior", "uniform",
         "--format", "json"),
        ("check", "corpus/branch_assign.kuif", "--priors", "random:3:11",
         "--verbose"),
    ],
)
def test_byte_identical_across_hash_seeds(args):
    a = cli(*args, hash_seed="1")
    b = cli(*args, hash_seed="923874")
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout
    assert a.stdout  # non-empty
