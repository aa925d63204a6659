import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from aewclass import schemas
from aewclass.cli import dispatch
from aewclass.core import read_dataset_csv

DOCS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def lb_data(tmp_path):
    cfg = write(tmp_path / "lb.json", {"distribution": {"type": "lower_bound", "M": 8, "kappa": 2, "sigma": "random"},
                                       "n": 100})
    out = tmp_path / "d.csv"
    assert dispatch(["simulate", "--config", cfg, "--seed", "7", "--out", str(out)]) == 0
    return out


def test_simulate_writes_dataset_sidecar_and_manifest(lb_data):
    data = read_dataset_csv(lb_data)
    assert data.n == 100 and data.d == 1
    side = json.loads(Path(f"{lb_data}.json").read_text())
    assert side["seed"] == 7 and side["lower_bound"]["N"] == 3
    assert side["lower_bound"]["w"] == pytest.approx(0.10356, abs=5e-5)
    man = json.loads(Path(f"{lb_data}.manifest.json").read_text())
    assert man["subcommand"] == "simulate" and man["seed"] == 7 and man["exit_code"] == 0
    assert [o["sha256"] for o in man["outputs"]] == [sha(lb_data), sha(f"{lb_data}.json")]
    assert set(man) >= {"config", "version", "inputs", "outputs", "duration_seconds"}


def test_simulate_bare_distribution_with_flags(tmp_path):
    cfg = write(tmp_path / "dist.json", {"type": "holder_sinusoid", "d": 1, "resolution": 500})
    out = tmp_path / "s.csv"
    assert dispatch(["simulate", "--config", cfg, "--n", "50", "--out", str(out)]) == 0
    assert read_dataset_csv(out).n == 50


def test_aew_weights_and_certificate(tmp_path, lb_data):
    d = write(tmp_path / "dict.json", [{"type": "constant", "label": 1}, {"type": "constant", "label": -1},
                                       {"type": "threshold", "feature": 1, "threshold": 1.0, "direction": 1}])
    out = tmp_path / "w.json"
    assert dispatch(["aew", "--data", str(lb_data), "--dict", d, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["weights"]) == 3 and sum(doc["weights"]) == pytest.approx(1, abs=1e-12)
    assert doc["certificate"]["holds"] and doc["certificate"]["slack"] >= -1e-9
    assert doc["zero_one_risks"] == pytest.approx([h / 2 for h in doc["hinge_risks"]], abs=1e-12)


def test_unclipped_violation_exits_2_with_outputs(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("x1,label\n0.0,1\n0.0,1\n0.0,-1\n")
    d = write(tmp_path / "dict.json", [{"type": "constant_score", "value": 10},
                                       {"type": "constant_score", "value": -3}])
    out = tmp_path / "w.json"
    with pytest.warns(UserWarning):
        code = dispatch(["aew", "--data", str(data), "--dict", d, "--no-clip", "--out", str(out)])
    assert code == 2
    doc = json.loads(out.read_text())
    assert doc["certificate"]["holds"] is False
    assert json.loads(Path(f"{out}.manifest.json").read_text())["exit_code"] == 2
    assert dispatch(["aew", "--data", str(data), "--dict", d, "--out", str(out)]) == 0


def test_plugin_and_adaptive(tmp_path):
    cfg = write(tmp_path / "c.json", {"distribution": {"type": "holder_sinusoid", "d": 1, "resolution": 500},
                                      "n": 300, "seed": 2})
    data = tmp_path / "d.csv"
    assert dispatch(["simulate", "--config", cfg, "--out", str(data)]) == 0
    query = tmp_path / "q.csv"
    query.write_text("x1\n0.1\n0.5\n0.9\n")
    out = tmp_path / "p.json"
    assert dispatch(["plugin", "--data", str(data), "--beta", "1", "--query", str(query), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [p["x"] for p in doc["predictions"]] == [[0.1], [0.5], [0.9]]
    assert all(0 <= p["eta_hat"] <= 1 and p["label"] in (-1, 1) for p in doc["predictions"])
    table = tmp_path / "p.csv"
    assert dispatch(["plugin", "--data", str(data), "--beta", "1", "--query", str(query), "--out", str(table)]) == 0
    lines = table.read_text().splitlines()
    assert lines[0] == "x1,eta_hat,label,flag" and len(lines) == 4
    assert [float(v) for v in lines[2].split(",")[:2]] == [0.5, doc["predictions"][1]["eta_hat"]]
    out = tmp_path / "a.json"
    assert dispatch(["adaptive", "--data", str(data), "--query", str(query), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["split"]["m"] + doc["split"]["l"] == 300
    assert sum(m["weight"] for m in doc["members"]) == pytest.approx(1, abs=1e-12)
    man = json.loads(Path(f"{out}.manifest.json").read_text())
    assert [i["sha256"] for i in man["inputs"]] == [sha(data), sha(query)]


EXPERIMENT = {
    "distribution": {"type": "lower_bound", "M": 16, "kappa": 1, "sigma": "random"},
    "procedure": {"type": "aew", "dictionary": "bayes_candidates"},
    "n_grid": [64, 128, 256],
    "replications": 10,
    "seed": 3,
    "oracle_gap": {"a": 1, "probes": [1, 5]},
}


def test_experiment_rates_and_replay(tmp_path):
    cfg = write(tmp_path / "e.json", EXPERIMENT)
    out = tmp_path / "e_out.json"
    assert dispatch(["experiment", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["config"]["seed"] == 3 and len(report["points"]) == 3
    pts = Path(f"{out}.points.csv")
    assert pts.read_text().splitlines()[0] == "n,mean_excess,stderr,replications,degenerate"
    rates = tmp_path / "r.json"
    assert dispatch(["rates", "--points", str(pts), "--target", "1", "--out", str(rates)]) == 0
    assert json.loads(rates.read_text())["slope"] == pytest.approx(report["rate"]["slope"], abs=1e-12)

    before = [sha(out), sha(pts)]
    assert dispatch(["replay", f"{out}.manifest.json"]) == 0
    assert [sha(out), sha(pts)] == before
    moved = tmp_path / "again.json"
    assert dispatch(["replay", f"{out}.manifest.json", "--out", str(moved)]) == 0
    assert moved.read_bytes() == out.read_bytes()
    assert Path(f"{moved}.points.csv").read_bytes() == pts.read_bytes()


def test_experiment_jobs_and_seed_flag(tmp_path):
    cfg = write(tmp_path / "e.json", EXPERIMENT)
    a, b, c = (tmp_path / f"{k}.json" for k in "abc")
    assert dispatch(["experiment", "--config", cfg, "--out", str(a)]) == 0
    assert dispatch(["experiment", "--config", cfg, "--jobs", "2", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert dispatch(["experiment", "--config", cfg, "--seed", "4", "--out", str(c)]) == 0
    assert json.loads(c.read_text())["config"]["seed"] == 4
    assert dispatch(["experiment", "--config", cfg, "--jobs", "0", "--out", str(c)]) == 1


def test_replay_refuses_changed_inputs(tmp_path, lb_data, capsys):
    d = write(tmp_path / "dict.json", [{"type": "constant", "label": 1}])
    out = tmp_path / "w.json"
    assert dispatch(["aew", "--data", str(lb_data), "--dict", d, "--out", str(out)]) == 0
    lb_data.write_text(lb_data.read_text().replace(",1\n", ",-1\n", 1))
    assert dispatch(["replay", f"{out}.manifest.json"]) == 1
    assert "input changed" in capsys.readouterr().err


def test_unknown_flag_and_subcommand_exit_1(capsys):
    assert dispatch(["simulate", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert dispatch(["frobnicate"]) == 1
    assert dispatch([]) == 1


def test_missing_required_option(tmp_path, capsys):
    assert dispatch(["plugin", "--data", "x.csv", "--out", str(tmp_path / "o.json")]) == 1
    assert "--beta" in capsys.readouterr().err


@pytest.mark.parametrize("doc, fragment", [
    ({**EXPERIMENT, "distribution": {"type": "lower_bound", "M": "x", "kappa": 1}}, "$.distribution.M"),
    ({**EXPERIMENT, "n_grid": [64, 32]}, "strictly increasing"),
    ({**EXPERIMENT, "replications": 0}, "$.replications"),
    ({**EXPERIMENT, "procedure": {"type": "aew", "dictionary": [{"type": "constant"}]}}, "$.procedure.dictionary[0]"),
])
def test_malformed_config_names_json_path(tmp_path, capsys, doc, fragment):
    cfg = write(tmp_path / "e.json", doc)
    assert dispatch(["experiment", "--config", cfg, "--out", str(tmp_path / "o.json")]) == 1
    assert fragment in capsys.readouterr().err
    assert not (tmp_path / "o.json").exists()


def test_invalid_json_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 3,,}')
    assert dispatch(["simulate", "--config", str(bad), "--out", str(tmp_path / "o.csv")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_schema_documents_in_sync():
    for name, schema in schemas.ALL.items():
        text = (DOCS / f"{name}.schema.json").read_text()
        assert text == json.dumps(schema, indent=2, sort_keys=True) + "\n", name


def test_console_script_is_hermetic(tmp_path):
    cfg = write(tmp_path / "lb.json", {"distribution": {"type": "lower_bound", "M": 8, "kappa": 2, "sigma": "random"},
                                       "n": 60, "seed": 11})
    outs = []
    for k, env_extra in enumerate([{}, {"PYTHONHASHSEED": "123", "AEWCLASS_SEED": "99", "OMP_NUM_THREADS": "1"}]):
        run_dir = tmp_path / f"cwd{k}"
        run_dir.mkdir()
        out = tmp_path / f"o{k}.csv"
        env = {**os.environ, **env_extra}
        res = subprocess.run([sys.executable, "-m", "aewclass.cli", "simulate", "--config", cfg, "--out", str(out)],
                             cwd=run_dir, env=env, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        outs.append((out.read_bytes(), Path(f"{out}.json").read_bytes()))
    assert outs[0] == outs[1]
