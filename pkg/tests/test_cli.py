import csv
import io
import json

import pytest

from transconf import bounds
from transconf.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# transconf ") and "schema=1" in lines[0]
    config = json.loads(lines[0].split("config=", 1)[1])
    return config, list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_pvalues(tmp_path, capsys):
    f = tmp_path / "s.csv"
    f.write_text("score,role\n1,cal\n2,cal\n3,cal\n2.5,test\n")
    code, out, _ = run(capsys, "pvalues", "--input", str(f))
    assert code == 0
    cfg, rows = read_csv(out)
    assert rows == [{"index": "1", "rank": "2", "pvalue": "0.5"}]
    assert cfg["ties_broken"] is False and "seed" in cfg


def test_pvalues_two_files(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("score\n5\n6\n")
    b.write_text("score\n1\n5.5\n")
    code, out, _ = run(capsys, "pvalues", "--input", str(a), "--test", str(b))
    assert code == 0
    assert [r["rank"] for r in read_csv(out)[1]] == ["3", "2"]


def test_pvalues_ties_deterministic(tmp_path, capsys):
    f = tmp_path / "t.csv"
    f.write_text("score,role\n1,cal\n1,cal\n1,test\n1,test\n")
    outs = [run(capsys, "pvalues", "--input", str(f), "--seed", "11")[1] for _ in range(2)]
    assert outs[0] == outs[1]
    assert read_csv(outs[0])[0]["ties_broken"] is True


def test_pvalues_errors(tmp_path, capsys):
    f = tmp_path / "e.csv"
    f.write_text("score,role\n1,cal\n")
    assert run(capsys, "pvalues", "--input", str(f))[0] == 1
    f.write_text("score,role\n1,cal\nzz,test\n")
    code, _, err = run(capsys, "pvalues", "--input", str(f))
    assert code == 2 and ":3:" in err
    assert run(capsys, "pvalues", "--input", str(tmp_path / "missing.csv"))[0] == 2


def test_bound_modes(capsys):
    code, out, _ = run(capsys, "bound", "--n", "75", "--m", "75", "--delta", "0.2")
    a = json.loads(out)
    assert code == 0 and bounds.b_dkw(a["lambda"], 75, 75) <= 0.2
    assert a["tau"] == 37.5 and a["r"] == 3
    num = json.loads(run(capsys, "bound", "--n", "75", "--m", "75", "--delta", "0.2", "--mode", "numerical", "--reps", "5000")[1])
    assert num["lambda"] <= a["lambda"] and num["reps"] == 5000
    full = json.loads(run(capsys, "bound", "--n", "75", "--m", "75", "--delta", "0.2", "--mode", "full")[1])
    assert full["lambda"] <= a["lambda"]


def test_bound_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bound", "--n", "75", "--m", "75", "--delta", "1.5"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["bound", "--n", "0", "--m", "75", "--delta", "0.5"])
    assert e.value.code == 1
    assert run(capsys, "bound", "--n", "5", "--m", "5", "--delta", "0.2", "--mode", "numerical", "--reps", "10")[0] == 1


def test_calibrate_commands(capsys):
    code, out, _ = run(capsys, "calibrate", "template", "--template", "linear", "--n", "20", "--m", "10",
                       "--delta", "0.2", "--reps", "2000", "--k-set", "1,2,5,10")
    res = json.loads(out)
    assert code == 0 and res["k_set"] == [1, 2, 5, 10] and len(res["thresholds"]) == 4
    code, out, _ = run(capsys, "calibrate", "level", "--n", "1", "--m", "1", "--delta", "0.5", "--alpha", "0")
    res = json.loads(out)
    assert code == 0 and res["level_fraction"] == "1/2" and res["level_zero_explicit"] == "1/2"


def test_pi_run(tmp_path, capsys):
    args = ["pi", "run", "--n-train", "400", "--k-neighbors", "10", "--grid", "0.05,0.1,0.2,0.4,0.6",
            "--radius", "0.1,0.5"]
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--output", str(out_a), "--delta", "0.2", "--reps", "20", "--summary", str(tmp_path / "s.json")]) == 0
    assert main(args + ["--output", str(out_b), "--delta", "0.2", "--reps", "20", "--summary", str(tmp_path / "t.json")]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert (tmp_path / "s.json").read_bytes() == (tmp_path / "t.json").read_bytes()
    cfg, rows = read_csv(out_a.read_text())
    assert cfg["seed"] == 0 and cfg["n"] == 75
    for pred in ("oracle", "naive", "transfer"):
        bd = [float(r["bound_dkw"]) for r in rows if r["predictor"] == pred and r["kind"] == "alpha"]
        assert bd == sorted(bd)
    assert main(args + ["--output", str(out_b), "--delta", "0.05"]) == 0
    _, rows_05 = read_csv(out_b.read_text())
    for r02, r05 in zip(rows, rows_05):
        assert float(r05["bound_dkw"]) >= float(r02["bound_dkw"])
        assert float(r05["bound_simes"]) >= float(r02["bound_simes"])
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["seed"] == 0 and set(summary["coverage"]) == {"oracle", "naive", "transfer"}


def test_nd_run(tmp_path, capsys):
    out = tmp_path / "nd.csv"
    args = ["nd", "run", "--n", "200", "--m0", "60", "--m1", "30", "--grid", "0.05,0.1,0.3",
            "--alpha", "0.1,0.2", "--shift", "3", "--shift", "1", "--output", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    _, rows = read_csv(first.decode())
    assert len(rows) == 2 * (3 + 2)
    for r in rows:
        assert int(r["m0_hat_dkw"]) <= int(r["m"]) and int(r["m0_hat_simes"]) <= int(r["m"])
        assert float(r["bound_dkw"]) <= float(r["bound_dkw_with_m"]) + 1e-12
        assert float(r["bound_simes"]) <= float(r["bound_simes_with_m"]) + 1e-12


def test_nd_global_null_coverage(tmp_path, capsys):
    summ = tmp_path / "s.json"
    code = main(["nd", "run", "--n", "100", "--m0", "40", "--m1", "0", "--shift", "0", "--grid", "0.1",
                 "--reps", "200", "--summary", str(summ), "--output", str(tmp_path / "x.csv")])
    assert code == 0
    ch = json.loads(summ.read_text())["channels"]["0.0"]
    assert 1 - ch["violation_dkw"] >= 1 - 0.2 - 4 * (0.2 * 0.8 / 200) ** 0.5


def test_oracle_verify(capsys):
    code, out, _ = run(capsys, "oracle", "verify", "--max-size", "6")
    assert code == 0 and "instances" in out and "PASS" in out
    code, out, _ = run(capsys, "oracle", "verify", "--max-size", "4", "--inject-fault")
    assert code == 3 and "FAIL" in out
    with pytest.raises(SystemExit) as e:
        main(["oracle", "verify", "--max-size", "12"])
    assert e.value.code == 1


def test_missing_command():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("TRANSCONF_SEED", "42")
    code, out, _ = run(capsys, "bound", "--n", "5", "--m", "5", "--delta", "0.2")
    assert code == 0 and json.loads(out)["seed"] == 42
