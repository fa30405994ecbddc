import json

import numpy as np
import pytest

from dfa_meet.cli import main
from dfa_meet.dfa import parse_dfa
from dfa_meet.simulate import read_records_csv


@pytest.fixture
def dfa_file(tmp_path):
    path = tmp_path / "dfa.json"
    assert main(["gen", "--n", "30", "--r", "2", "--seed", "11", "--out", str(path)]) == 0
    return path


def test_gen_writes_parseable_dfa(dfa_file):
    d = parse_dfa(dfa_file.read_text())
    assert d.n == 30 and d.r == 2


def test_gen_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    main(["gen", "--n", "12", "--r", "3", "--seed", "4", "--out", str(p1)])
    main(["gen", "--n", "12", "--r", "3", "--seed", "4", "--out", str(p2)])
    assert p1.read_bytes() == p2.read_bytes()


def test_exact_emits_expected_fields(dfa_file, tmp_path):
    out = tmp_path / "exact.json"
    code = main(["exact", "--dfa", str(dfa_file), "--t-cap", "60", "--out", str(out)])
    assert code == 0
    payload = json.loads(out.read_text())
    assert set(payload) >= {"pi", "pi_min", "pi_max", "t_mix", "d_tv_series"}
    pi = np.array(payload["pi"])
    assert pi.sum() == pytest.approx(1.0, abs=1e-9)
    assert payload["pi_min"] <= payload["pi_max"]


def test_fvtl_emits_report_and_events(dfa_file, tmp_path):
    out = tmp_path / "fvtl.json"
    code = main([
        "fvtl", "--dfa", str(dfa_file), "--eps", "0.5",
        "--events-T", "40", "--events-S", "12", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["return_mass"] >= 1.0
    assert 0 < payload["predicted_lambda"] < 1
    events = payload["events"]
    assert {"a1", "a2", "a3", "a4", "a5"} <= set(events)
    assert events["t_horizon"] == 40 and events["s_horizon"] == 12


def test_simulate_and_verify_round_trip(tmp_path, dfa_file):
    csv_path = tmp_path / "runs.csv"
    code = main([
        "simulate", "--mode", "independent", "--n", "30", "--r", "2",
        "--trials", "200", "--seed", "5", "--fixed-dfa", str(dfa_file),
        "--starts", "0,1", "--threads", "1", "--out", str(csv_path),
    ])
    assert code == 0
    records = read_records_csv(csv_path)
    assert len(records) == 200
    assert all(rec.x == 0 and rec.y == 1 for rec in records)

    report_path = tmp_path / "verify.json"
    code = main([
        "verify", "--results", str(csv_path), "--against", "geom:auto",
        "--report", str(report_path),
    ])
    assert code == 0
    payload = json.loads(report_path.read_text())
    assert payload["reference"] == "geometric"
    assert 0 < payload["params"]["lambda"] < 1


def test_verify_exp_reference(tmp_path, dfa_file):
    csv_path = tmp_path / "runs.csv"
    main([
        "simulate", "--mode", "coupled", "--n", "30", "--r", "2",
        "--trials", "100", "--seed", "6", "--fixed-dfa", str(dfa_file),
        "--threads", "1", "--out", str(csv_path),
    ])
    report_path = tmp_path / "verify.json"
    assert main(["verify", "--results", str(csv_path), "--against", "exp:1",
                 "--report", str(report_path)]) == 0
    payload = json.loads(report_path.read_text())
    assert payload["reference"] == "exponential"


def test_unknown_recipe_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["recipe", "no-such-recipe"])
    assert exc.value.code == 2


def test_unknown_reference_errors(tmp_path, dfa_file):
    csv_path = tmp_path / "runs.csv"
    main([
        "simulate", "--mode", "sync", "--n", "30", "--r", "2", "--trials", "5",
        "--seed", "1", "--fixed-dfa", str(dfa_file), "--threads", "1",
        "--out", str(csv_path),
    ])
    code = main(["verify", "--results", str(csv_path), "--against", "cauchy",
                 "--report", str(tmp_path / "r.json")])
    assert code == 1


def test_exact_reducible_dfa_exits_one(tmp_path, capsys):
    # two disjoint strongly connected triangles: two recurrent classes
    from dfa_meet.dfa import Dfa, serialize_dfa

    out = np.array([[1, 2], [0, 2], [0, 1], [4, 5], [3, 5], [3, 4]])
    path = tmp_path / "reducible.json"
    path.write_text(serialize_dfa(Dfa(n=6, r=2, out=out)))
    assert main(["exact", "--dfa", str(path)]) == 1
    assert "resample" in capsys.readouterr().err


def test_simulate_threads_env(tmp_path, dfa_file, monkeypatch):
    monkeypatch.setenv("DFA_MEET_THREADS", "1")
    csv_path = tmp_path / "runs.csv"
    code = main([
        "simulate", "--mode", "independent", "--n", "30", "--r", "2",
        "--trials", "16", "--seed", "9", "--fixed-dfa", str(dfa_file),
        "--out", str(csv_path),
    ])
    assert code == 0
    assert len(read_records_csv(csv_path)) == 16
