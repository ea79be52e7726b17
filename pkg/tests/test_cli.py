import csv
import io
import json

import pytest

from tfperf.arch import TransformerSpec, save_spec
from tfperf.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, ROW_COLUMNS, main


def run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


@pytest.fixture
def toy_model(tmp_path):
    path = tmp_path / "toy.yaml"
    save_spec(TransformerSpec(l=96, e=48, f=192, h=12, d=6), path)
    return str(path)


def test_optimize_text_report():
    code, text = run(["optimize", "--model", "gpt3-1t", "--system", "b200:nvs8",
                      "--gpus", "16384", "--batch", "4096", "--strategy", "tp1d",
                      "--tokens", "1e12"])
    assert code == EXIT_OK
    assert "optimal: n1=8" in text and "training time:" in text
    days = float(text.split("training time:")[1].split()[0])
    assert 1 <= days < 10


def test_optimize_json_schema(toy_model):
    code, text = run(["optimize", "--model", toy_model, "--system", "a100:nvs4", "--gpus", "8",
                      "--batch", "24", "--strategy", "tp2d", "--top-k", "3", "--format", "json",
                      "--samples", "240"])
    assert code == EXIT_OK
    payload = json.loads(text)
    assert payload["schema_version"] == 1
    assert len(payload["ranked"]) == 3
    assert [r["rank"] for r in payload["ranked"]] == [1, 2, 3]
    assert set(ROW_COLUMNS) <= set(payload["ranked"][0])


def test_optimize_infeasible_exit_code(capsys):
    code, _ = run(["optimize", "--model", "vit-64k", "--system", "a100:nvs8", "--gpus", "64",
                   "--strategy", "tp1d"])
    assert code == EXIT_INFEASIBLE
    assert "NO_FEASIBLE_CONFIG" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run(["optimize", "--model", "gpt3-1t", "--system", "b200:nvs8"])[0] == EXIT_USAGE
    assert run(["optimize", "--model", "nope", "--system", "b200", "--gpus", "8"])[0] == EXIT_USAGE
    assert run(["optimize", "--model", "gpt3-1t", "--system", "b200", "--gpus", "0"])[0] == EXIT_USAGE
    assert run(["explain", "--model", "gpt3-1t", "--system", "b200", "--n1", "8", "--np", "3",
                "--nd", "1"])[0] == EXIT_USAGE
    assert "n_p=3" in capsys.readouterr().err
    assert run(["sweep", "--model", "gpt3-1t", "--system", "b200", "--axis", "nvs_size",
                "--values", "8,4"])[0] == EXIT_USAGE
    assert run([])[0] == EXIT_USAGE


def test_explain_csv_row():
    code, text = run(["explain", "--model", "gpt3-1t", "--system", "b200:nvs8", "--n1", "8",
                      "--np", "64", "--nd", "32", "--nvs-assign", "8,1,1,1"])
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 1 and list(rows[0]) == ROW_COLUMNS
    assert rows[0]["m"] == "128" and float(rows[0]["hbm_gb"]) > 0


def test_explain_single_gpu_has_no_comm(toy_model):
    code, text = run(["explain", "--model", toy_model, "--system", "b200", "--n1", "1",
                      "--np", "1", "--nd", "1", "--batch", "2", "--format", "json"])
    row = json.loads(text)["row"]
    assert code == EXIT_OK
    assert row["tp_comm_exposed"] == row["dp_comm_exposed"] == row["pp_comm"] == 0


def test_explain_summa_reports_panels(toy_model):
    code, text = run(["explain", "--model", toy_model, "--system", "b200", "--strategy", "summa",
                      "--n1", "2", "--n2", "2", "--np", "1", "--nd", "2", "--batch", "4",
                      "--nb", "6"])
    assert code == EXIT_OK
    assert next(csv.DictReader(io.StringIO(text)))["n_b"] == "6"


def test_sweep_preserves_order_and_status(toy_model):
    argv = ["sweep", "--model", toy_model, "--system", "a100:nvs4", "--axis", "gpu_count",
            "--values", "1,2,4,8", "--batch", "24"]
    code, serial = run(argv)
    assert code == EXIT_OK
    code, parallel = run(argv + ["--jobs", "2"])
    assert serial == parallel
    rows = list(csv.DictReader(io.StringIO(serial)))
    assert [r["value"] for r in rows] == ["1", "2", "4", "8"]
    assert all(r["status"] == "ok" for r in rows)


def test_sweep_single_value_equals_optimize(toy_model):
    _, sweep = run(["sweep", "--model", toy_model, "--system", "a100:nvs4", "--axis",
                    "nvs_size", "--values", "4", "--gpus", "8", "--batch", "24", "--format", "json"])
    _, opt = run(["optimize", "--model", toy_model, "--system", "a100:nvs4", "--gpus", "8",
                  "--batch", "24", "--format", "json"])
    row = json.loads(sweep)["rows"][0]
    best = json.loads(opt)["ranked"][0]
    assert all(row[k] == best[k] for k in ROW_COLUMNS)


def test_sweep_scale_axes(toy_model):
    for axis in ("hbm_bw_cap", "tensor_flops"):
        code, text = run(["sweep", "--model", toy_model, "--system", "a100:nvs4", "--axis", axis,
                          "--values", "0.5,1,2", "--gpus", "8", "--batch", "24"])
        assert code == EXIT_OK
        totals = [float(r["total"]) for r in csv.DictReader(io.StringIO(text))]
        assert totals == sorted(totals, reverse=True)


def test_comm_curve():
    code, text = run(["comm-curve", "--system", "a100:nvs4", "--group-size", "32",
                      "--nvs-per-group", "2,4", "--volumes", "0,1e8,2e8"])
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(text)))
    by_g = {g: [float(r["time_s"]) for r in rows if r["g"] == g] for g in ("2", "4")}
    assert by_g["4"][2] < by_g["2"][2]
    for times in by_g.values():
        assert times[2] - times[0] == pytest.approx(2 * (times[1] - times[0]))
    assert run(["comm-curve", "--system", "a100", "--group-size", "32",
                "--nvs-per-group", "3"])[0] == EXIT_USAGE
