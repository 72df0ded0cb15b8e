import csv
import io
import json
import pathlib

import pytest

from slpipe import cli
from slpipe.perf_model import PartitionPlan, evaluate_plan
from slpipe.profiles import load_inputs

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"


def inputs(name):
    d = FIXTURES / name
    return ["--model", str(d / "model.json"), "--catalog", str(d / "catalog.json"),
            "--workload", str(d / "workload.json")]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def run_dir(stdout):
    line = [ln for ln in stdout.splitlines() if ln.startswith("run directory: ")][-1]
    return pathlib.Path(line.split(": ", 1)[1])


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def load_small():
    d = FIXTURES / "small"
    return load_inputs(*((d / f"{n}.json").read_text() for n in ("model", "catalog", "workload")))


# -- argument parsing -----------------------------------------------------------------

def test_parse_number():
    assert cli.parse_number("2^16") == 65536
    assert cli.parse_number("2**19") == 2**19
    assert cli.parse_number(" 1.5 ") == 1.5
    with pytest.raises(cli.UsageError):
        cli.parse_number("two")


def test_parse_weights():
    assert cli.parse_weights("1:0,1:2^16") == [(1.0, 0.0), (1.0, 65536.0)]
    for bad in ("1", "1:2:3", "0:0", "-1:2", "a:b"):
        with pytest.raises(cli.UsageError):
            cli.parse_weights(bad)


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["optimize", "--model", "nope.json", "--catalog", "x", "--workload", "y"],
    ["collective", "--n", "1", "--size", "10", "--bw", "5"],
    ["collective", "--n", "4", "--size", "-1", "--bw", "5"],
    ["pareto", "--threshold", "0"],
])
def test_usage_errors(tmp_path, argv):
    code, _, err = run(argv + ["--out", str(tmp_path)])
    assert code == 1
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


def test_bad_weights_exit_one(tmp_path):
    code, _, err = run(["optimize", *inputs("small"), "--weights", "0:0", "--out", str(tmp_path)])
    assert code == 1
    assert "weight" in json.loads(err)["message"]


def test_schema_error_reports_path(tmp_path):
    bad = tmp_path / "catalog.json"
    doc = json.loads((FIXTURES / "small" / "catalog.json").read_text())
    doc["dp"] = [2, 4]
    bad.write_text(json.dumps(doc))
    argv = ["optimize", "--model", str(FIXTURES / "small" / "model.json"), "--catalog", str(bad),
            "--workload", str(FIXTURES / "small" / "workload.json"), "--out", str(tmp_path)]
    code, _, err = run(argv)
    assert code == 1
    doc = json.loads(err)
    assert doc["error"] == "schema" and doc["path"] == "catalog.dp.0"


def test_infeasible_exit_two(tmp_path):
    code, _, err = run(["optimize", *inputs("infeasible"), "--out", str(tmp_path)])
    assert code == 2
    assert json.loads(err)["error"] == "infeasible"


def test_pareto_all_infeasible_exit_two(tmp_path):
    code, _, err = run(["pareto", *inputs("infeasible"), "--out", str(tmp_path)])
    assert code == 2


def test_budget_exit_three(tmp_path, monkeypatch):
    monkeypatch.setenv("FUNCPIPE_BUDGET_S", "0")
    code, _, err = run(["optimize", *inputs("amoebanet_d36"), "--merge-to", "10",
                        "--weights", "1:2^16", "--out", str(tmp_path)])
    assert code == 3
    assert json.loads(err)["error"] == "budget"


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0


# -- commands ------------------------------------------------------------------------------

def test_optimize(tmp_path):
    code, out, _ = run(["optimize", *inputs("small"), "--weights", "1:2^16",
                        "--out", str(tmp_path)])
    assert code == 0
    d = run_dir(out)
    assert d.parent == tmp_path and d.name.startswith("optimize-")
    model, cat, wl = load_small()
    plan = PartitionPlan.from_doc(json.loads((d / "plan.json").read_text()))
    est = json.loads((d / "estimate.json").read_text())
    assert est["t_iter"] == evaluate_plan(model, cat, wl, plan).t_iter
    assert "t_iter=" in out


def test_seed_and_out_position(tmp_path):
    a = run(["--out", str(tmp_path), "--seed", "3", "optimize", *inputs("small")])
    b = run(["optimize", *inputs("small"), "--seed", "3", "--out", str(tmp_path)])
    assert a[0] == b[0] == 0
    assert run_dir(a[1]) == run_dir(b[1])


def test_run_directory_depends_on_options(tmp_path):
    a = run(["optimize", *inputs("small"), "--weights", "1:0", "--out", str(tmp_path)])
    b = run(["optimize", *inputs("small"), "--weights", "1:1", "--out", str(tmp_path)])
    assert run_dir(a[1]) != run_dir(b[1])


def test_pareto(tmp_path):
    code, out, _ = run(["pareto", *inputs("small"), "--out", str(tmp_path)])
    assert code == 0
    d = run_dir(out)
    assert {p.name for p in d.iterdir()} == {"pareto.csv", "recommended_plan.json", "pareto.png"}
    rows = list(csv.DictReader(io.StringIO((d / "pareto.csv").read_text())))
    assert list(rows[0]) == ["weight_cost", "weight_time", "t_iter_s", "c_iter", "c_mem_mb",
                             "d", "cuts", "mem_choice", "recommended"]
    assert 1 <= len(rows) <= 4
    assert [r["recommended"] for r in rows].count("1") == 1
    times = [float(r["t_iter_s"]) for r in rows]
    assert times == sorted(times)
    assert (d / "pareto.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_simulate_plan_from_optimize(tmp_path):
    _, out, _ = run(["optimize", *inputs("small"), "--weights", "1:2^19", "--out", str(tmp_path)])
    plan = run_dir(out) / "plan.json"
    code, out, _ = run(["simulate", *inputs("small"), "--plan", str(plan), "--out", str(tmp_path)])
    assert code == 0
    d = run_dir(out)
    report = json.loads((d / "comparison.json").read_text())
    assert report["relative_error"] <= 1e-9
    lines = (d / "gantt.csv").read_text().splitlines()
    assert lines[0] == "stage,kind,micro_batch,start_s,end_s"
    assert (d / "gantt.png").exists()


def test_simulate_needs_plan(tmp_path):
    code, _, _ = run(["simulate", *inputs("small"), "--out", str(tmp_path)])
    assert code == 1


def test_simulate_battery(tmp_path):
    code, out, _ = run(["simulate", "--battery", "25", "--out", str(tmp_path)])
    assert code == 0
    rows = (run_dir(out) / "battery.csv").read_text().splitlines()
    assert len(rows) == 26
    assert max(float(r.split(",")[-1]) for r in rows[1:]) <= 1e-9


def test_collective(tmp_path):
    code, out, _ = run(["collective", "--n", "8", "--size", "280", "--bw", "70",
                        "--protocol", "both", "--verify", "--out", str(tmp_path)])
    assert code == 0
    assert "11 s vs 8 s, 27% reduction" in out
    assert out.count("reduce verified") == 2
    d = run_dir(out)
    doc = json.loads((d / "collective.json").read_text())
    assert doc["pipelined"]["finish_time_s"] == pytest.approx(8.0, rel=1e-12)
    assert {"trace_three-phase.csv", "trace_pipelined.csv", "collective.png"} <= \
        {p.name for p in d.iterdir()}


def test_collective_single_protocol_with_latency(tmp_path):
    code, out, _ = run(["collective", "--n", "8", "--size", "280", "--bw", "70",
                        "--t-lat", "0.04", "--protocol", "pipelined", "--out", str(tmp_path)])
    assert code == 0
    assert "pipelined: simulated 8.4 s, predicted 8.4 s" in out


def test_emit_miqp(tmp_path):
    code, out, _ = run(["emit-miqp", *inputs("small"), "--weights", "1:2^16", "--check-plan",
                        "--out", str(tmp_path)])
    assert code == 0
    assert "feasible, objective Δ ≤ 1e-6" in out
    d = run_dir(out)
    lp = (d / "instance.lp").read_text()
    assert lp.startswith("\\ ") and lp.endswith("End\n") and "[" in lp
    side = json.loads((d / "instance.vars.json").read_text())
    assert side["x_1"]["type"] == "binary"


def test_emit_pure_milp(tmp_path):
    code, out, _ = run(["emit-miqp", *inputs("two_layer"), "--pure-milp",
                        "--out", str(tmp_path)])
    assert code == 0
    assert "[" not in (run_dir(out) / "instance.lp").read_text()


def test_emit_requires_single_weight(tmp_path):
    code, _, _ = run(["emit-miqp", *inputs("small"), "--weights", "1:0,1:1",
                      "--out", str(tmp_path)])
    assert code == 1


def test_merge(tmp_path):
    model = FIXTURES / "amoebanet_d36" / "model.json"
    code, out, _ = run(["merge", "--model", str(model), "--merge-to", "8", "--criterion", "param",
                        "--out", str(tmp_path)])
    assert code == 0
    d = run_dir(out)
    groups = json.loads((d / "merge_map.json").read_text())
    assert len(groups) == 8 and groups[0][0] == 0 and groups[-1][1] == 37
    assert len(json.loads((d / "model.merged.json").read_text())) == 8


def test_merge_too_many(tmp_path):
    model = FIXTURES / "two_layer" / "model.json"
    code, _, _ = run(["merge", "--model", str(model), "--merge-to", "5", "--out", str(tmp_path)])
    assert code == 1


# -- determinism --------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["pareto", *inputs("small")],
    ["simulate", "--battery", "10"],
    ["collective", "--n", "5", "--size", "50", "--bw", "10", "--t-lat", "0.04", "--verify"],
    ["emit-miqp", *inputs("small"), "--weights", "1:2^19"],
])
def test_artifacts_byte_identical(tmp_path, argv):
    _, out1, _ = run(argv + ["--out", str(tmp_path / "a")])
    _, out2, _ = run(argv + ["--out", str(tmp_path / "b")])
    d1, d2 = run_dir(out1), run_dir(out2)
    assert d1.name == d2.name
    assert snapshot(d1) == snapshot(d2)


def test_simulate_artifacts_byte_identical(tmp_path):
    _, out, _ = run(["optimize", *inputs("small"), "--out", str(tmp_path)])
    plan = str(run_dir(out) / "plan.json")
    dirs = []
    for sub in ("a", "b"):
        _, out, _ = run(["simulate", *inputs("small"), "--plan", plan,
                         "--out", str(tmp_path / sub)])
        dirs.append(run_dir(out))
    assert snapshot(dirs[0]) == snapshot(dirs[1])
