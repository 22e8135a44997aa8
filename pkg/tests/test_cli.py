import json

import pytest

from bellsim import cli, jp


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture
def eq3_run(tmp_path):
    cfg = write(tmp_path, "sim.json", {"model": "demo_eq3", "protocol": "context", "seed": 3, "counts": [2000] * 4, "post_select": True})
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_simulate_outputs(eq3_run):
    for name in ("dataset.csv", "dataset.json", "final.csv", "model.json"):
        assert (eq3_run / name).exists()


def test_analyze_all_flags(eq3_run, tmp_path):
    out = tmp_path / "an"
    rc = cli.main(["analyze", str(eq3_run / "dataset.csv"), "--out", str(out), "--chsh", "--eberhard", "--nosignaling", "--cbd"])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["final_table"]["chsh"]["S_max"] > 2.5
    assert rep["raw_table"]["chsh"]["S_max"] < 2
    assert rep["cbd"]["contextual"] is True
    assert rep["nosignaling"]["final"]["deltas"]["B_yp"] > 0
    assert "eberhard_J" in rep
    assert (out / "report.txt").read_text()


def test_analyze_final_eberhard_is_domain_error(eq3_run, tmp_path):
    rc = cli.main(["analyze", str(eq3_run / "final.csv"), "--out", str(tmp_path / "x"), "--eberhard"])
    assert rc == 1


def test_spreadsheet_rejects_contextual(tmp_path):
    cfg = write(tmp_path, "s.json", {"model": "demo_eq5", "protocol": "spreadsheet", "seed": 1, "n": 10})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 2


def test_spreadsheet_within_bound(tmp_path):
    cfg = write(tmp_path, "s.json", {"model": "saturating_mixture", "protocol": "spreadsheet", "seed": 1, "n": 500})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["analyze", str(tmp_path / "s" / "dataset.csv"), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert -2 <= rep["spreadsheet_S"]["float"] <= 2


def test_timeseries_window(tmp_path):
    cfg = write(tmp_path, "t.json", {"model": "demo_timetag", "protocol": "timeseries", "seed": 2, "n": 400,
                                    "schedule": "random", "window": 0.45, "post_select": True})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "raw.csv").exists() and (tmp_path / "t" / "final.csv").exists()
    rc = cli.main(["analyze", str(tmp_path / "t" / "dataset.csv"), "--window", "0.45", "--out", str(tmp_path / "a"), "--eberhard"])
    assert rc == 0
    assert cli.main(["analyze", str(tmp_path / "t" / "dataset.csv"), "--out", str(tmp_path / "b")]) == 1


def test_missing_seed_names_field(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"model": "demo_eq3", "protocol": "context", "counts": [10] * 4})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_bad_model_and_missing_file(tmp_path):
    cfg = write(tmp_path, "bad.json", {"model": "no_such_demo", "protocol": "context", "seed": 0, "counts": [10] * 4})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["analyze", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_replicate(tmp_path):
    cfg = write(tmp_path, "r.json", {"model": "saturating_mixture", "n_per_context": 50, "replications": 200, "seed": 0})
    assert cli.main(["replicate", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    head, row = (tmp_path / "r" / "replicate.csv").read_text().splitlines()
    assert head.split(",") == cli.REPLICATE_HEADER
    assert 0.3 < float(row.split(",")[5]) < 0.75
    cfg = write(tmp_path, "r2.json", {"model": "saturating_mixture", "n_per_context": 50, "replications": 10, "seed": 0})
    assert cli.main(["replicate", "--config", cfg, "--out", str(tmp_path / "r2")]) == 2


def test_window_scan(tmp_path):
    cfg = write(tmp_path, "w.json", {"model": "demo_timetag", "n_emissions": 2000, "seed": 1, "windows": [0.25, 0.65, 1.0]})
    assert cli.main(["window-scan", "--config", cfg, "--out", str(tmp_path / "w")]) == 0
    doc = json.loads((tmp_path / "w" / "scan.json").read_text())
    fr = [r["retained_fraction"] for r in doc["rows"]]
    assert fr == sorted(fr)
    assert doc["rows"][0]["S"] > doc["rows"][-1]["S"]


def test_check_jp_pr_box(tmp_path, capsys):
    p = tmp_path / "pr.csv"
    p.write_text(jp.PairwiseSystem.from_correlations([1, 1, 1, -1]).to_csv())
    assert cli.main(["check-jp", str(p), "--out", str(tmp_path / "j")]) == 0
    doc = json.loads((tmp_path / "j" / "jp.json").read_text())
    assert doc["result"]["status"] == "infeasible"
    assert max(doc["fine_inequalities"]) == 2
    p.write_text("context,p_pp,p_pm,p_mp,p_mm\nxy,0.9,0.9,0,0\nxyp,0.25,0.25,0.25,0.25\nxpy,0.25,0.25,0.25,0.25\nxpyp,0.25,0.25,0.25,0.25\n")
    assert cli.main(["check-jp", str(p), "--out", str(tmp_path / "k")]) == 2


def test_check_jp_on_report(eq3_run, tmp_path):
    cli.main(["analyze", str(eq3_run / "dataset.csv"), "--out", str(tmp_path / "a"), "--post-select"])
    assert cli.main(["check-jp", str(tmp_path / "a" / "report.json"), "--out", str(tmp_path / "j")]) == 0
    doc = json.loads((tmp_path / "j" / "jp.json").read_text())
    assert doc["result"]["status"] in ("infeasible", "inconsistent")


def test_report(eq3_run, tmp_path):
    cli.main(["analyze", str(eq3_run / "dataset.csv"), "--out", str(tmp_path / "a"), "--cbd"])
    assert cli.main(["report", str(tmp_path / "a"), "--out", str(tmp_path / "s")]) == 0
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert any("report.json" in k for k in summary)


def test_empty_dataset_warns(tmp_path, capsys):
    # deterministic no-click model: every record is (0, 0)
    params = {"source": [[1]], "a": [[[0]], [[0]]], "b": [[[0]], [[0]]], "instr_a": [[1], [1]], "instr_b": [[1], [1]]}
    model = {"kind": "ContextualProduct", "parameters": params}
    cfg = write(tmp_path, "e.json", {"model": model, "protocol": "context", "seed": 0, "counts": [20] * 4})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    capsys.readouterr()
    rc = cli.main(["analyze", str(tmp_path / "e" / "dataset.csv"), "--post-select", "--out", str(tmp_path / "a")])
    assert rc == 0
    assert "warning" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["simulate", "replicate"])
def test_thread_count_invariance(tmp_path, monkeypatch, cmd):
    if cmd == "simulate":
        cfg = write(tmp_path, "c.json", {"model": "demo_eq5", "protocol": "context", "seed": 9, "counts": [3000] * 4, "order": "shuffled"})
        name = "dataset.csv"
    else:
        cfg = write(tmp_path, "c.json", {"model": "demo_eq5", "n_per_context": 100, "replications": 300, "seed": 9})
        name = "replicate_values.csv"
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("BELL_THREADS", threads)
        out = tmp_path / f"o{threads}"
        assert cli.main([cmd, "--config", cfg, "--out", str(out)]) == 0
        outs.append((out / name).read_bytes())
    assert outs[0] == outs[1]
