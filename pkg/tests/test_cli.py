import glob
import json
import os

import pytest
from fastapi.testclient import TestClient

from app.cli import EXIT_CONFIG, EXIT_PASS, main
from app.core.config import CONFIGS_DIR
from app.core.schemas import EXPERIMENT_IDS
from app.experiments import EXPERIMENTS, RunContext, load_config, run_experiment
from app.main import app

CONFIG_FILES = sorted(glob.glob(os.path.join(CONFIGS_DIR, "*.toml")))


def test_every_experiment_has_a_config():
    names = {os.path.splitext(os.path.basename(p))[0] for p in CONFIG_FILES}
    assert names == set(EXPERIMENT_IDS)
    assert set(EXPERIMENTS) == set(EXPERIMENT_IDS)


def test_list(capsys):
    assert main(["list"]) == EXIT_PASS
    out = capsys.readouterr().out
    for exp_id in EXPERIMENT_IDS:
        assert exp_id in out


@pytest.mark.parametrize("path", CONFIG_FILES, ids=os.path.basename)
def test_check_shipped_configs(path, capsys):
    assert main(["check", path]) == EXIT_PASS
    assert capsys.readouterr().out.startswith("ok ")


def test_missing_field_is_a_config_error(write_config, capsys):
    path = write_config("""
experiment = "mollify-lemmas"
[grid]
N = 40
M = 40
[physics]
flow = "x1"
alpha = 0.5
""")
    assert main(["check", path]) == EXIT_CONFIG
    assert "physics.eps" in capsys.readouterr().err


@pytest.mark.parametrize("body", [
    'experiment = "no-such-thing"',
    'experiment = "lpq"\n[grid]\nN = 8\nM = 8\n[physics]\nflow = "x1 +"\nforcing = ["0", "1"]\np = 2.0\nq = 2.0',
    'experiment = "lpq"\n[grid]\nN = 8\nM = 8\n[physics]\nflow = "0"\nforcing = ["0"]\np = 2.0\nq = 2.0',
    'experiment = "lpq" [grid',
])
def test_bad_configs(body, write_config):
    assert main(["check", write_config(body)]) == EXIT_CONFIG


def test_usage_errors(tmp_path):
    assert main([]) == EXIT_CONFIG
    assert main(["check", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


@pytest.mark.parametrize("exp_id", ["exponents", "lpq"])
def test_run_writes_report(exp_id, out_dir, capsys):
    path = os.path.join(CONFIGS_DIR, f"{exp_id}.toml")
    assert main(["run", path, "--output-dir", out_dir]) == EXIT_PASS
    assert "PASS" in capsys.readouterr().out
    with open(os.path.join(out_dir, f"{exp_id}.report.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["experiment"] == exp_id
    assert report["passed"] is True
    assert report["schema_version"] == 1
    assert all(v["passed"] for v in report["verdicts"])


def test_run_seed_override(out_dir):
    path = os.path.join(CONFIGS_DIR, "exponents.toml")
    assert main(["run", path, "--output-dir", out_dir, "--seed", "7"]) == EXIT_PASS
    with open(os.path.join(out_dir, "exponents.report.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["input"]["seed"] == 7
    assert report["input"]["output_dir"] == out_dir


def test_failing_verdict_exit_code(write_config, out_dir):
    path = write_config(f"""
experiment = "lpq"
output_dir = "{out_dir}"
[grid]
N = 8
M = 8
[physics]
flow = "0"
forcing = ["0", "1"]
p = 2.0
q = 2.0
[physics.expected]
norm = 3.0
""")
    assert main(["run", path]) == 1


def test_brakke_violate_dumps_flow(write_config, out_dir):
    path = write_config(f"""
experiment = "brakke-violate"
output_dir = "{out_dir}"
[grid]
N = 32
M = 64
t1 = 0.5
[physics]
flow = "-t - log(cos(x1))"
s = 0.25
""")
    report = run_experiment(load_config(path))
    assert report.passed
    assert "brakke-violate-flow.bin" in report.artifacts
    assert os.path.isfile(os.path.join(out_dir, "brakke-violate-flow.json"))


def test_duplicate_verdicts_are_rejected(out_dir):
    cfg = load_config(os.path.join(CONFIGS_DIR, "exponents.toml"))
    ctx = RunContext(cfg=cfg, out_dir=out_dir)
    ctx.check("once", True)
    with pytest.raises(ValueError):
        ctx.check("once", True)


def test_http_surface(out_dir):
    client = TestClient(app)
    listed = client.get("/api/experiments").json()["experiments"]
    assert [e["id"] for e in listed] == list(EXPERIMENTS)

    bad = client.post("/api/experiments/check", json={"experiment": "lpq"})
    assert bad.status_code == 400
    assert "physics.p" in bad.json()["error"]

    payload = {
        "experiment": "exponents",
        "output_dir": out_dir,
        "grid": {"n": 3},
        "physics": {"k": 1, "p": 4.0, "q": 4.0, "beta": 2.5, "gamma": 4.0, "expected": {"alpha": 0.3}},
    }
    ran = client.post("/api/experiments/run", json=payload)
    assert ran.status_code == 200
    assert ran.json()["passed"] is True
