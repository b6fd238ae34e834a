import json
import subprocess
import sys

import numpy as np

from ebrpca import cli, harness, synth
from ebrpca.model import read_matrix, write_matrix

TINY_INI = ("[experiment]\nkind = custom\npoints = 8,40,2,0.1\ntrials = 1\nsolvers = EB,PCP\n"
            "[eb]\nmax_iterations = 20\n")


def test_run_from_config(tmp_path, capsys):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY_INI)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(out), "--workers", "1"]) == 0
    rows = harness.read_trials(out / "trials.csv")
    assert [r.solver for r in rows] == ["EB", "PCP"]
    assert (out / "summary.csv").exists() and (out / "summary.json").exists()
    assert "wrote" in capsys.readouterr().out


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY_INI)
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(cfg), "--out-dir", str(out), "--trials", "2",
                     "--solvers", "map", "--seed", "3", "--lambda", "1e-5", "--max-iters", "5", "--workers", "1"])
    assert code == 0
    rows = harness.read_trials(out / "trials.csv")
    assert [r.solver for r in rows] == ["MAP", "MAP"]
    assert all(r.iters <= 5 for r in rows)
    meta = json.loads((out / "summary.json").read_text())["meta"]
    assert meta["seed_base"] == 3 and meta["lambda"] == 1e-5 and meta["trials"] == 2


def test_config_errors_exit_1(tmp_path, capsys):
    assert cli.main(["run", "--preset", "nope"]) == 1
    assert cli.main(["run"]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nkind = rank_sweep\nm = 20\n")
    assert cli.main(["run", "--config", str(bad)]) == 1
    bad.write_text("garbage without sections\n")
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert cli.main(["run", "--experiment", "custom", "--out-dir", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_io_errors_exit_2(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY_INI)
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(blocker / "x"), "--workers", "1"]) == 2
    assert cli.main(["decompose", str(tmp_path / "missing.csv")]) == 2
    assert "I/O error" in capsys.readouterr().err


def test_decompose_round_trip(tmp_path):
    problem, X, _ = synth.gen_problem(synth.SynthSpec(8, 60, 2, 0.1, seed=2))
    write_matrix(tmp_path / "Y.csv", problem.Y)
    for solver in ("eb", "map", "pcp"):
        out = tmp_path / solver
        assert cli.main(["decompose", str(tmp_path / "Y.csv"), "--solver", solver, "--out-dir", str(out)]) == 0
        Xh, Sh = read_matrix(out / "X_hat.csv"), read_matrix(out / "S_hat.csv")
        # PCP is feasible to tolerance; posterior means leave a lambda-sized residual
        tol = 1e-6 if solver == "pcp" else 1e-3
        assert np.linalg.norm(problem.Y - Xh - Sh) <= tol * np.linalg.norm(problem.Y)
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["iterations"] >= 1 and diag["transposed"] is False
        assert json.loads((out / "X_hat.csv.json").read_text())["provenance"]["solver"] == solver


def test_decompose_tall_and_masked(tmp_path):
    problem, X, _ = synth.gen_problem(synth.SynthSpec(8, 60, 2, 0.1, seed=4))
    write_matrix(tmp_path / "Yt.csv", problem.Y.T)
    assert cli.main(["decompose", str(tmp_path / "Yt.csv"), "--out-dir", str(tmp_path / "t")]) == 0
    assert read_matrix(tmp_path / "t" / "X_hat.csv").shape == (60, 8)
    assert json.loads((tmp_path / "t" / "diagnostics.json").read_text())["transposed"] is True
    mask = np.zeros((8, 60))
    mask[0, 0] = 1
    write_matrix(tmp_path / "Y.csv", problem.Y)
    write_matrix(tmp_path / "mask.csv", mask)
    assert cli.main(["decompose", str(tmp_path / "Y.csv"), "--mask", str(tmp_path / "mask.csv"),
                     "--out-dir", str(tmp_path / "m")]) == 0


def test_decompose_bad_input_exit_1(tmp_path):
    (tmp_path / "Y.csv").write_text("1,2\nx,4\n")
    assert cli.main(["decompose", str(tmp_path / "Y.csv")]) == 1
    (tmp_path / "Y.csv").write_text("1,2\n3,4\n")
    assert cli.main(["decompose", str(tmp_path / "Y.csv"), "--lambda", "0"]) == 1


def test_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "fig1-desk" in out and "table1" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ebrpca", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "fig2" in res.stdout
