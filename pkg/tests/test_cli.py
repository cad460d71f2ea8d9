import csv
import io
import json
from pathlib import Path

import pytest

from pollwait.cli import SWEEP_HEADER, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_analytic_table(capsys):
    code, out, _ = cli(capsys, "analytic", "--config", CONFIGS / "symmetric4.json")
    assert code == 0
    row = next(line for line in out.splitlines() if line.startswith("mean_w"))
    assert float(row.split()[1]) == pytest.approx(1.375, abs=1e-12)


def test_analytic_json_pk(capsys):
    code, out, _ = cli(capsys, "analytic", "--config", CONFIGS / "mm1.json", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["mean_w"] == pytest.approx(1.0, abs=1e-12)
    assert {"residual", "pi", "mean_m", "mean_p", "mean_w", "profile"} <= set(doc)


def test_analytic_csv(capsys):
    code, out, _ = cli(capsys, "analytic", "--config", CONFIGS / "symmetric4.json", "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 2
    rec = dict(zip(*rows))
    assert float(rec["mean_w"]) == pytest.approx(1.375)


def test_unstable_config(capsys, tmp_path):
    q = {"lambda": 0.6, "service": {"type": "deterministic", "value": 1.0}}
    code, _, err = cli(capsys, "analytic", "--config", write(tmp_path, {"alpha": 0.1, "queues": [q, q]}))
    assert code == 2
    assert "UnstableSystem" in err


def test_unknown_key_rejected(capsys, tmp_path):
    doc = json.loads((CONFIGS / "mm1.json").read_text())
    doc["beta"] = 1
    code, _, err = cli(capsys, "analytic", "--config", write(tmp_path, doc))
    assert code == 2 and "beta" in err


def test_missing_config_file(capsys, tmp_path):
    code, _, _ = cli(capsys, "analytic", "--config", tmp_path / "nope.json")
    assert code == 2


def test_unequal_means_rejected_without_flag(capsys):
    code, _, err = cli(capsys, "analytic", "--config", CONFIGS / "unequal_means.json")
    assert code == 2 and "UnequalMeans" in err


def test_closed_form_unsupported(capsys):
    code, _, err = cli(capsys, "analytic", "--config", CONFIGS / "elevator_mixed.json", "--closed-form")
    assert code == 3 and "unsupported" in err
    code, _, _ = cli(capsys, "analytic", "--config", CONFIGS / "symmetric4.json", "--closed-form")
    assert code == 0


def test_simulate_json_and_trace(capsys, tmp_path):
    trace = tmp_path / "t.csv"
    code, out, _ = cli(capsys, "simulate", "--config", CONFIGS / "mm1_patrol.json", "--jobs", 5000,
                       "--warmup", 500, "--format", "json", "--trace", trace)
    assert code == 0
    doc = json.loads(out)
    assert doc["jobs_completed"] == 4500
    assert doc["seed"] == 1
    lines = trace.read_text().splitlines()
    assert lines[0] == "queue,arrived_at,service_begun_at,wait,wait_moving,wait_serving,n_seen"
    assert len(lines) == 4501


def test_simulate_reps_pooled(capsys):
    code, out, _ = cli(capsys, "simulate", "--config", CONFIGS / "mm1.json", "--jobs", 3000,
                       "--warmup", 300, "--reps", 3, "--format", "json")
    doc = json.loads(out)
    assert code == 0
    assert [r["seed"] for r in doc["replications"]] == [1, 2, 3]
    assert "mean_w_hw" in doc["pooled"]


def test_bad_horizon(capsys):
    code, _, _ = cli(capsys, "simulate", "--config", CONFIGS / "mm1.json", "--jobs", 100, "--warmup", 100)
    assert code == 2


def test_compare_pass(capsys):
    code, out, _ = cli(capsys, "compare", "--config", CONFIGS / "mm1.json", "--jobs", 100_000,
                       "--warmup", 10_000, "--reps", 2, "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["verdict"] == "PASS"
    assert doc["analytic_mean_w"] == pytest.approx(1.0)
    assert {"p_identity", "pasta", "little"} <= set(doc)


def test_compare_needs_two_reps(capsys):
    code, _, _ = cli(capsys, "compare", "--config", CONFIGS / "mm1.json", "--reps", 1)
    assert code == 2


def test_compare_negative_control(capsys):
    code, out, err = cli(capsys, "compare", "--config", CONFIGS / "unequal_means.json", "--jobs", 200_000,
                         "--warmup", 20_000, "--reps", 2, "--allow-unequal-means", "--format", "json")
    doc = json.loads(out)
    assert code == 4
    assert doc["verdict"] == "FAIL" and doc["unequal_means_bypassed"] is True
    assert doc["rel_error"] > 0.05
    assert "bypassed" in err


def test_sweep_alpha(capsys):
    code, out, _ = cli(capsys, "sweep", "--config", CONFIGS / "symmetric4.json", "--axis", "alpha",
                       "--values", "0,0.25,0.5,1.0", "--jobs", 20_000, "--warmup", 2_000)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert out.splitlines()[0] == ",".join(SWEEP_HEADER)
    assert len(rows) == 4
    analytic = [float(r["analytic_mean_w"]) for r in rows]
    assert analytic == sorted(analytic) and analytic[0] < analytic[-1]
    assert code in (0, 4)


def test_sweep_rho_scale_widens_ci(capsys):
    code, out, _ = cli(capsys, "sweep", "--config", CONFIGS / "mm1.json", "--axis", "rho_scale",
                       "--values", "0.5,1.0,1.9", "--jobs", 50_000, "--warmup", 5_000)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["value"] for r in rows] == ["0.5", "1.0", "1.9"]
    rel_ci = [float(r["ci_half_width"]) / float(r["sim_mean_w"]) for r in rows]
    assert rel_ci[0] < rel_ci[-1]


def test_sweep_n_queues(capsys):
    code, out, _ = cli(capsys, "sweep", "--config", CONFIGS / "symmetric4.json", "--axis", "n_queues",
                       "--values", "1,2,4", "--jobs", 10_000, "--warmup", 1_000, "--format", "json")
    rows = json.loads(out)
    assert [r["value"] for r in rows] == [1.0, 2.0, 4.0]
    assert rows[2]["analytic_mean_w"] == pytest.approx(1.375)


@pytest.mark.parametrize(
    "extra",
    [
        ["--axis", "alpha", "--values", ""],
        ["--axis", "alpha"],
        ["--values", "1,2"],
        ["--axis", "rho_scale", "--values", "1.0,2.5"],
        ["--axis", "alpha", "--values", "a,b"],
        ["--axis", "n_queues", "--values", "1.5"],
    ],
)
def test_sweep_usage_errors(capsys, extra):
    code, _, _ = cli(capsys, "sweep", "--config", CONFIGS / "symmetric4.json", *extra)
    assert code == 2


def test_sweep_point_error_column(capsys):
    code, out, _ = cli(capsys, "sweep", "--config", CONFIGS / "symmetric4.json", "--axis", "alpha",
                       "--values", "0.25", "--jobs", 100, "--warmup", 500)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["verdict"] == "ERROR" and rows[0]["error"]
    assert code == 4


def test_unknown_mode_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["explain", "--config", "x"])
    assert info.value.code == 2
