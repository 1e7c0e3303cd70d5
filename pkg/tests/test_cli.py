import json
import subprocess
import sys

import numpy as np
import pytest

from bayesbiclust import cli
from bayesbiclust import io as bio
from bayesbiclust.exceptions import EstimationError

FAST = ["--n-iter", "60", "--burn-in", "20"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def bbc2_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("bbc2")
    assert run("simulate", "--model", "bbc2", "--n", 60, "--p", 120, "--K", 2, "--pi-s", 0.3,
               "--seed", 1, "--out", d / "truth.npz", "--tsv", d / "y.tsv") == 0
    return d


def test_simulate_fit_evaluate_round_trip(bbc2_data, capsys):
    d = bbc2_data
    assert run("fit", "--model", "bbc2", "--input", d / "y.tsv", "--k", "1-3", *FAST,
               "--out", d / "r.json") == 0
    assert run("evaluate", "--result", d / "r.json", "--truth", d / "truth.npz",
               "--out", d / "e.json") == 0
    doc = bio.read_json(d / "e.json")
    bio.validate_result(doc)
    assert doc["k_hat"] == 2 and doc["metrics"]["ari"] == 1.0
    assert doc["category_coding"] == "1-based"
    assert set(doc["log_marginal"]) == {"1", "2", "3"}
    assert len(doc["selection"]) == 120 and len(doc["selection"][0]) == 2


def test_bundle_and_tsv_inputs_agree(bbc2_data, capsys):
    d = bbc2_data
    run("fit", "--model", "bbc2", "--input", d / "y.tsv", "--k", "2", *FAST, "--out", d / "a.json")
    run("fit", "--model", "bbc2", "--input", d / "truth.npz", "--k", "2", *FAST,
        "--out", d / "b.json")
    a, b = bio.read_json(d / "a.json"), bio.read_json(d / "b.json")
    assert a["labels"] == b["labels"] and a["log_marginal"] == b["log_marginal"]


@pytest.mark.parametrize("argv", [
    ["fit", "--model", "bbc2", "--k", "1-2"],
    ["fit", "--model", "bbc1", "--k", "1-2", "--binarize", "nonzero"],
    ["tree", "--min-node-size", "10"],
])
def test_rerun_is_byte_identical(bbc2_data, tmp_path, argv):
    src = bbc2_data / "y.tsv"
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        assert run(*argv, "--input", src, *FAST, "--seed", 5, "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_select_k_bracket_matches_dense(tmp_path):
    run("simulate", "--model", "bbc1", "--n", 120, "--p", 200, "--K", 4, "--ns", 60,
        "--seed", 2, "--out", tmp_path / "d.npz")
    common = ["select-k", "--model", "bbc1", "--input", tmp_path / "d.npz", "--k-min", 2,
              "--k-max", 8, "--n-iter", 150, "--burn-in", 50]
    assert run(*common, "--search", "bracket", "--grid", 4, "--out", tmp_path / "b.json") == 0
    assert run(*common, "--search", "dense", "--out", tmp_path / "d.json") == 0
    b, d = bio.read_json(tmp_path / "b.json"), bio.read_json(tmp_path / "d.json")
    assert b["k_hat"] == d["k_hat"] == 4
    assert len(b["k_values"]) < len(d["k_values"]) == 7


def test_config_file_with_flag_override(bbc2_data, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "bbc2", "k": "2", "n_iter": 40, "burn_in": 10,
                               "pi_s": 0.2}))
    out = tmp_path / "r.json"
    assert run("fit", "--config", cfg, "--input", bbc2_data / "y.tsv", "--n-iter", 50,
               "--out", out) == 0
    prov = bio.read_json(out)["provenance"]["config"]
    assert prov["n_iter"] == 50 and prov["burn_in"] == 10 and prov["pi_s"] == 0.2


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_exit_codes(bbc2_data, tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.tsv"
    bad.write_text("id\ta\tb\nr1\t1\n")
    assert run("fit", "--model", "bbc2", "--input", bad) == 2
    err = _error(capsys)
    assert err["error"] == "DataError" and "line 2" in err["message"]

    assert run("fit", "--model", "nope", "--input", bad) == 3
    assert _error(capsys)["exit_code"] == 3
    assert run() == 3
    assert run("fit", "--model", "bbc2", "--input", bbc2_data / "y.tsv", "--k", "13") == 3
    assert "HBBC" in _error(capsys)["message"]
    assert run("fit", "--model", "bbc2", "--input", bbc2_data / "y.tsv", "--n-iter", 10,
               "--burn-in", 20) == 3
    cfg = tmp_path / "c.json"
    cfg.write_text('{"bogus": 1}')
    assert run("fit", "--config", cfg, "--input", bbc2_data / "y.tsv") == 3

    def boom(*a, **k):
        raise EstimationError("ordinate underflow")
    monkeypatch.setattr(cli, "fit_bbc2", boom)
    assert run("fit", "--model", "bbc2", "--input", bbc2_data / "y.tsv", "--k", "2") == 4
    assert _error(capsys)["message"] == "ordinate underflow"


def test_tree_command(tmp_path):
    run("simulate", "--model", "hierarchy", "--n-per-leaf", 25, "--p", 300, "--seed", 0,
        "--out", tmp_path / "h.npz")
    assert run("tree", "--input", tmp_path / "h.npz", "--n-iter", 150, "--burn-in", 50,
               "--out", tmp_path / "t.json") == 0
    assert run("evaluate", "--result", tmp_path / "t.json", "--truth", tmp_path / "h.npz",
               "--out", tmp_path / "e.json") == 0
    doc = bio.read_json(tmp_path / "e.json")
    assert doc["k_hat"] == 4 and doc["metrics"]["ari"] > 0.95
    assert doc["tree"]["nodes"][0]["split_step"] == 1


def test_integration_commands(tmp_path):
    rng = np.random.default_rng(0)
    genes = [f"g{i}" for i in range(30)]
    paths = []
    for d, n_s in enumerate([15, 20, 6]):
        X = rng.normal(size=(30, n_s))
        X[:6] += rng.normal(size=n_s) * 2  # co-expressed block
        p = tmp_path / f"layer{d}.tsv"
        with open(p, "w") as fh:
            fh.write("gene\t" + "\t".join(f"s{j}" for j in range(n_s)) + "\n")
            for g, row in zip(genes, X):
                fh.write(g + "\t" + "\t".join(f"{v:.6f}" for v in row) + "\n")
        paths.append(p)
    (tmp_path / "q.txt").write_text("\n".join(genes[:12]))
    assert run("integrate-prep", "--expr", *paths, "--query", tmp_path / "q.txt",
               "--out", tmp_path / "s.npz") == 0
    arrays, meta = bio.load_bundle(tmp_path / "s.npz")
    assert arrays["Z"].shape == (2, 12, 12) and meta["layer_names"] == ["layer0", "layer1"]
    assert run("fit", "--model", "integrate", "--input", tmp_path / "s.npz", "--k", "1-2",
               "--n-iter", 40, "--burn-in", 10, "--out", tmp_path / "r.json") == 0
    doc = bio.read_json(tmp_path / "r.json")
    assert doc["labels"][:6] == [doc["labels"][0]] * 6 and doc["labels"][0] > 0

    (tmp_path / "q2.txt").write_text("g1\nmissing\n")
    assert run("integrate-prep", "--expr", *paths, "--query", tmp_path / "q2.txt",
               "--out", tmp_path / "x.npz") == 2


def test_simulated_integration_bundle(tmp_path):
    assert run("simulate", "--model", "integration", "--n", 20, "--p", 6, "--module-size", 6,
               "--n-supporting", 4, "--n-modules", 1, "--n-extra", 30, "--seed", 0,
               "--out", tmp_path / "s.npz") == 0
    assert run("fit", "--model", "integrate", "--input", tmp_path / "s.npz", "--k", "1-2",
               "--n-iter", 60, "--burn-in", 20, "--out", tmp_path / "r.json") == 0
    assert run("evaluate", "--result", tmp_path / "r.json", "--truth", tmp_path / "s.npz",
               "--out", tmp_path / "e.json") == 0
    m = bio.read_json(tmp_path / "e.json")["metrics"]
    assert m["ari"] == 1.0 and m["feature_recovery"] == 1.0


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bayesbiclust.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
    bad = subprocess.run([sys.executable, "-m", "bayesbiclust.cli", "fit", "--model", "bbc2",
                          "--input", str(tmp_path / "none.tsv")], capture_output=True, text=True)
    assert bad.returncode == 2
    assert json.loads(bad.stderr)["exit_code"] == 2
