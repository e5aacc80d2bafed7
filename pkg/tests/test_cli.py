import filecmp
import subprocess
import sys
from pathlib import Path

import pytest

from gsq.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def cycles(tmp_path):
    out = tmp_path / "cycles"
    assert run("build", "--family", "cycle", "--sizes", "6,8,16,32", "--out", out) == 0
    return out


def test_stats_ratios_all_one(cycles, tmp_path, capsys):
    capsys.readouterr()
    assert run("stats", "--manifest", cycles / "manifest.tsv", "--out", tmp_path / "st") == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.splitlines() if not ln.startswith("#")]
    assert [r[3] for r in rows] == ["1"] * 4
    meta = (tmp_path / "st" / "run.meta").read_text()
    assert "command\tstats" in meta and "mode\tmulti" in meta


def test_hyperfinite_exact_and_verify(cycles, tmp_path, capsys):
    out = tmp_path / "hf"
    assert run("hyperfinite", "--graph", cycles / "cycle6_0.g", "--eps", "2/5", "--method", "exact",
               "--out", out) == 0
    text = (out / "partition.cert").read_text()
    assert "K 3" in text.splitlines()
    assert run("verify", out / "partition.cert") == 0
    assert "partition ok" in capsys.readouterr().out


def test_decimal_eps_is_exact(cycles, tmp_path):
    out = tmp_path / "hf"
    assert run("hyperfinite", "--graph", cycles / "cycle6_0.g", "--eps", "0.4", "--out", out) == 0
    assert "meta target 2/5" in (out / "partition.cert").read_text()


def test_infeasible_exits_two(tmp_path, capsys):
    petersen = tmp_path / "petersen.g"
    import networkx as nx
    lines = ["graph petersen vertices=10 degree_bound=3 labels=x connected=1"]
    lines += [f"e {u} {v} x" for u, v in nx.petersen_graph().edges]
    petersen.write_text("\n".join(lines) + "\n")
    assert run("hyperfinite", "--graph", petersen, "--eps", "1/5", "--kcap", "5", "--out", tmp_path / "o") == 2
    assert capsys.readouterr().err.startswith("error: infeasible:")


def test_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.g"
    bad.write_text("graph bad vertices=8 degree_bound=2 labels=t\ne 0 9 t\n")
    assert run("stats", "--manifest", tmp_path / "missing.tsv", "--out", tmp_path / "o") == 1
    (tmp_path / "m.tsv").write_text("0 bad.g\n")
    assert run("stats", "--manifest", tmp_path / "m.tsv", "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error: vertex_range:") or err[-1].startswith("error: ")
    with pytest.raises(SystemExit) as info:
        run("nonsense")
    assert info.value.code == 1


def pair_dir(tmp_path):
    tower = tmp_path / "tower"
    assert run("build", "--family", "random_schreier", "--sizes", "50,200,625", "--seed", "7",
               "--out", tower) == 0
    coset = tmp_path / "coset.action"
    coset.write_text("action degree=2 labels=a,b\na 1 0\nb 0 1\n")
    out = tmp_path / "f2pair"
    assert run("pair", "--ambient", "free2", "--subgroup", "coset-table", coset, "--tower", tower,
               "--out", out) == 0
    return out


def test_cost_mult_and_reduce(tmp_path, capsys):
    pair = pair_dir(tmp_path)
    capsys.readouterr()
    assert run("cost", "mult", "--pair", pair, "--out", tmp_path / "cm") == 0
    out = capsys.readouterr().out
    assert "#identity_holds\t1" in out
    assert run("cost", "reduce", "--pair", pair, "--level", "0", "--budget", "64", "--out", tmp_path / "cr") == 0
    assert (tmp_path / "cr" / "moves_0.log").read_text().startswith("del ")


def test_cost_thin_and_interval(tmp_path, capsys):
    tor = tmp_path / "tor"
    run("build", "--family", "torus", "--sizes", "16", "--out", tor)
    capsys.readouterr()
    assert run("cost", "thin", "--graph", tor / "torus16_0.g", "--L", "4", "--method", "torus",
               "--out", tmp_path / "th") == 0
    assert "\t5/4\t" in capsys.readouterr().out
    sl = tmp_path / "sl"
    run("build", "--family", "sl2p", "--sizes", "5,7,11,13", "--out", sl)
    capsys.readouterr()
    assert run("cost", "interval", "--manifest", sl / "manifest.tsv", "--large-girth", "--out", tmp_path / "ci") == 0
    assert "[2, 2]" in capsys.readouterr().out


def test_witness_and_almost_a_certificates_verify(tmp_path):
    tor = tmp_path / "tor"
    run("build", "--family", "torus", "--sizes", "16,24", "--out", tor)
    assert run("witness", "--graph", tor / "torus16_0.g", "--group", "z2", "--box", "4", "--out", tmp_path / "w") == 0
    assert run("verify", tmp_path / "w" / "witness.cert") == 0
    assert run("almost-a", "--manifest", tor / "manifest.tsv", "--group", "z2", "--box", "4",
               "--out", tmp_path / "aa") == 0
    assert run("verify", tmp_path / "aa" / "witness_1.cert") == 0


def test_coarse_pipeline_certificates_verify(tmp_path):
    c = tmp_path / "c"
    run("build", "--family", "cycle", "--sizes", "4,8", "--out", c)
    m = tmp_path / "dbl.map"
    m.write_text("map 8\n" + "".join(f"{x % 4}\n" for x in range(8)))
    args = ["--domain", c / "cycle8_1.g", "--codomain", c / "cycle4_0.g", "--map", m]
    assert run("coarse", "verify", *args, "--out", tmp_path / "v") == 0
    assert run("verify", tmp_path / "v" / "distortion.cert") == 0
    assert run("coarse", "injectivize", *args, "--out", tmp_path / "i") == 0
    assert run("coarse", "pushforward", *args, "--out", tmp_path / "p") == 0
    assert run("verify", tmp_path / "p" / "distortion.cert") == 0


def test_tampered_certificate_fails(cycles, tmp_path):
    out = tmp_path / "hf"
    run("hyperfinite", "--graph", cycles / "cycle8_1.g", "--eps", "1/2", "--out", out)
    cert = out / "partition.cert"
    cert.write_text(cert.read_text().replace("K 3", "K 2"))
    assert run("verify", cert) == 1


def test_outputs_do_not_depend_on_jobs(tmp_path):
    for jobs in (1, 4):
        assert run("build", "--family", "random_schreier", "--sizes", "30,60", "--seed", "5", "--jobs", jobs,
                   "--out", tmp_path / f"b{jobs}") == 0
        assert run("bs", "--manifest", tmp_path / f"b{jobs}" / "manifest.tsv", "--group", "free2", "--rmax", "2",
                   "--jobs", jobs, "--out", tmp_path / f"s{jobs}") == 0
    for name in ("b", "s"):
        left, right = tmp_path / f"{name}1", tmp_path / f"{name}4"
        files = sorted(p.name for p in left.iterdir() if p.name != "run.meta")
        match, mismatch, errors = filecmp.cmpfiles(left, right, files, shallow=False)
        assert mismatch == [] and errors == []


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gsq.cli", "build", "--family", "torus", "--sizes", "4",
                           "--out", str(tmp_path / "t")], capture_output=True, text=True)
    assert proc.returncode == 0 and "#liminf_proxy\t2" in proc.stdout
