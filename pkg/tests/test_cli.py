import json

import numpy as np
import pytest

from specbal import __version__
from specbal.cli import main
from specbal.io import WALK_COLUMNS, matrices_to_json, read_csv
from specbal.spectral_core import balance_ratios, random_matrix_set

M_DIAG = np.diag([4.0, 1.0, 0.5])


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def pair_file(tmp_path):
    return write(tmp_path / "pair.json", matrices_to_json([np.eye(3), M_DIAG]))


def strip_times(payload):
    payload = dict(payload)
    man = dict(payload.pop("manifest"))
    man.pop("started"), man.pop("finished")
    payload["manifest"] = man
    return payload


# --- balance


def test_balance_intro_pair(tmp_path, pair_file):
    out = tmp_path / "res.json"
    assert main(["balance", "--input", pair_file, "--k", "2", "--out", str(out), "--trace", str(tmp_path / "t.csv")]) == 0
    res = json.loads(out.read_text())
    assert res["status"] == "Converged" and res["version"] == __version__
    assert all(r < 0.5 for r in res["ratios"])
    assert np.all(balance_ratios(np.array(res["A"]), [np.eye(3), M_DIAG]) < 0.5)
    man = res["manifest"]
    assert man["command"] == "balance" and man["config"]["k"] == 2 and pair_file in man["inputs"]
    assert (tmp_path / "t.csv").exists()


def test_balance_idempotent(tmp_path, pair_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["balance", "--input", pair_file, "--k", "2", "--out", str(a)])
    main(["balance", "--input", pair_file, "--k", "2", "--out", str(b)])
    pa, pb = strip_times(json.loads(a.read_text())), strip_times(json.loads(b.read_text()))
    pa["manifest"]["config"].pop("out"), pb["manifest"]["config"].pop("out")
    assert pa == pb


def test_balance_infeasible_exit_codes(tmp_path, capsys):
    f = write(tmp_path / "m.json", matrices_to_json([np.eye(3)]))
    assert main(["balance", "--input", f, "--k", "3"]) == 3
    f = write(tmp_path / "m3.json", matrices_to_json([np.eye(3), M_DIAG, 2 * np.eye(3)]))
    assert main(["balance", "--input", f, "--k", "2"]) == 3
    assert "floor((d-1)/(k-1))" in capsys.readouterr().err


def test_balance_iteration_limit(tmp_path):
    # the identity start is far from balanced here
    f = write(tmp_path / "m.json", matrices_to_json([np.diag([100.0, 1, 1]), np.diag([1, 100.0, 1])]))
    assert main(["balance", "--input", f, "--k", "2", "--R", "16", "--max-iter", "0"]) == 2


@pytest.mark.parametrize(
    "content,needle",
    [
        ("{not json", "malformed JSON"),
        (json.dumps({"dim": 2, "matrices": [[[1, 0], [0, 1]], [[1, 0.5], [0.1, 1]]]}), "matrix 1 is not symmetric"),
        (json.dumps({"dim": 2, "matrices": [[[1, 0], [0, -1]]]}), "matrix 0 is not positive definite"),
        (json.dumps({"dim": 2, "matrices": [[[1, 0, 0], [0, 1, 0], [0, 0, 1]]]}), "matrix 0: shape"),
        (json.dumps({"dim": 2, "matrices": [[[1, "a"], [0, 1]]]}), "matrix 0"),
        (json.dumps({"matrices": []}), "non-empty"),
    ],
)
def test_balance_bad_input(tmp_path, capsys, content, needle):
    f = tmp_path / "bad.json"
    f.write_text(content)
    assert main(["balance", "--input", str(f), "--k", "2"]) == 1
    assert needle in capsys.readouterr().err


def test_balance_plot(tmp_path, pair_file):
    out = tmp_path / "res.json"
    assert main(["balance", "--input", pair_file, "--k", "2", "--out", str(out), "--plot"]) == 0
    assert (tmp_path / "res_descent.png").stat().st_size > 0


# --- verify


def test_verify_round_trip(tmp_path, pair_file):
    out = tmp_path / "res.json"
    main(["balance", "--input", pair_file, "--k", "2", "--out", str(out)])
    assert main(["verify", "--input", pair_file, "--A", str(out), "--k", "2"]) == 0


def test_verify_sharp_family(tmp_path, capsys):
    fam = tmp_path / "fam.json"
    assert main(["sharpness", "--d", "4", "--k", "3", "--trials", "5", "--out", str(fam)]) == 0
    A = write(tmp_path / "A.json", np.eye(4).tolist())
    capsys.readouterr()
    assert main(["verify", "--input", str(fam), "--A", A, "--k", "3"]) == 4
    assert "witness: matrix 0" in capsys.readouterr().out


def test_verify_dimension_mismatch(tmp_path, pair_file):
    A = write(tmp_path / "A.json", {"A": np.eye(4).tolist()})
    assert main(["verify", "--input", pair_file, "--A", A, "--k", "2"]) == 1


# --- sharpness


def test_sharpness_runs(tmp_path, capsys):
    assert main(["sharpness", "--d", "4", "--k", "3", "--trials", "1000"]) == 0
    assert "1000/1000" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["--d", "5", "--k", "3"], ["--d", "4", "--k", "3", "--epsilon", "0.3"]])
def test_sharpness_bad_shape(argv):
    assert main(["sharpness", "--trials", "3"] + argv) == 1


def test_sharpness_family_file(tmp_path):
    fam = tmp_path / "fam.json"
    main(["sharpness", "--d", "2", "--k", "2", "--epsilon", "0.25", "--trials", "1", "--out", str(fam)])
    data = json.loads(fam.read_text())
    assert data["dim"] == 2 and data["matrices"] == [[[1, 0], [0, 0.25]], [[0.25, 0], [0, 1]]]


# --- simulate


def test_simulate_isotropic_baseline(tmp_path):
    f = write(tmp_path / "id.json", matrices_to_json([np.eye(3)]))
    csv = tmp_path / "walk.csv"
    argv = ["simulate", "--input", f, "--balancer", "none", "--strategy", "fixed:0", "--radius", "3",
            "--checkpoints", "10,30,100", "--walks", "300", "--seed", "4", "--csv", str(csv), "--plot"]
    assert main(argv) == 0
    rows = read_csv(csv)
    assert list(rows[0]) == list(WALK_COLUMNS)
    p = [float(r["p_hat"]) for r in rows]
    assert p == sorted(p, reverse=True)
    summary = json.loads((tmp_path / "walk_summary.json").read_text())
    assert "fixed(0)" in summary["strategies"]
    assert (tmp_path / "walk_decay.png").exists()
    # rerun reproduces the table exactly
    csv2 = tmp_path / "walk2.csv"
    assert main(argv[:-3] + ["--csv", str(csv2)]) == 0
    assert read_csv(csv2) == rows


def test_simulate_balanced_auto(tmp_path):
    ms = random_matrix_set(np.random.default_rng(1), 5, 2)
    f = write(tmp_path / "m.json", matrices_to_json(ms))
    csv = tmp_path / "w.csv"
    assert main(["simulate", "--input", f, "--k", "3", "--strategy", "max_radial_variance,round_robin",
                 "--checkpoints", "10,100", "--walks", "200", "--csv", str(csv)]) == 0
    rows = read_csv(csv)
    assert {r["strategy"] for r in rows} == {"max_radial_variance", "round_robin"}
    assert json.loads((tmp_path / "w_summary.json").read_text())["predicted_slope"] == -0.5


def test_simulate_with_A_file_k2(tmp_path, pair_file):
    out = tmp_path / "res.json"
    main(["balance", "--input", pair_file, "--k", "2", "--out", str(out)])
    csv = tmp_path / "w.csv"
    assert main(["simulate", "--input", pair_file, "--balancer", str(out), "--k", "2", "--strategy",
                 "uniform_random", "--checkpoints", "10,100", "--walks", "200", "--csv", str(csv),
                 "--json", str(tmp_path / "s.json")]) == 0
    assert json.loads((tmp_path / "s.json").read_text())["predicted_slope"] == 0.0


def test_simulate_config_errors(tmp_path, pair_file):
    base = ["simulate", "--input", pair_file, "--balancer", "none", "--csv", str(tmp_path / "w.csv")]
    assert main(base + ["--walks", "0"]) == 1
    assert main(base + ["--strategy", "nope"]) == 1
    assert main(base + ["--checkpoints", "100", "--horizon", "10"]) == 1
    assert main(["simulate", "--input", pair_file, "--csv", str(tmp_path / "w.csv")]) == 1


@pytest.mark.parametrize("cmd", ["balance", "verify", "sharpness", "simulate"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "--" in capsys.readouterr().out


def test_every_flag_documented():
    import argparse

    from specbal.cli import build_parser

    sub = next(a for a in build_parser()._actions if isinstance(a, argparse._SubParsersAction))
    for name, parser in sub.choices.items():
        for action in parser._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} has no help text"


@pytest.mark.parametrize("argv", [["balance", "--k", "2"], ["balance", "--input", "x", "--k", "two"], ["nope"]])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err
