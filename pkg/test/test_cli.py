import io

import pandas as pd
from setup_tests import REFERENCE_ARGS, json_records, run_command, test_dir

SIMULATE = "simulate --x 1.5 --omega-const 0.02 --n 500 --seed 7 --horizon 50"


def test_version():
    code, out, _ = run_command("--version")
    assert code == 0
    assert out.strip()


def test_missing_command():
    code, _, err = run_command("")
    assert code == 2
    assert "ERROR" in err


def test_trap_json():
    code, out, _ = run_command(f"trap {REFERENCE_ARGS} --x-grid 1:3:0.5")
    assert code == 0
    records = json_records(out)
    assert [r["x"] for r in records] == [1.0, 1.5, 2.0, 2.5, 3.0]
    values = [r["value"] for r in records]
    assert all(0.0 < v <= 1.0 for v in values)
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(r["note"] == "" for r in records)


def test_trap_csv_baseline():
    code, out, _ = run_command(
        f"trap {REFERENCE_ARGS} --x 1.5 --baseline --format csv"
    )
    assert code == 0
    assert out.splitlines()[0] == "x,value,note,baseline"
    frame = pd.read_csv(io.StringIO(out))
    assert frame["value"][0] < frame["baseline"][0]


def test_trap_vary():
    code, out, _ = run_command(f"trap {REFERENCE_ARGS} --x 2 --vary c_t=0.1,0.5,1")
    assert code == 0
    records = json_records(out)
    assert list(records[0])[0] == "c_t"
    assert [r["c_t"] for r in records] == [0.1, 0.5, 1.0]
    assert records[0]["value"] > records[1]["value"] > records[2]["value"]


def test_trapping_certain():
    args = REFERENCE_ARGS.replace("--alpha 0.8", "--alpha 0.5")
    code, out, _ = run_command(f"trap {args} --x 3")
    assert code == 0
    record = json_records(out)[0]
    assert record["value"] == 1.0
    assert record["note"] == "trapping-certain"


def test_trap_discounted():
    code, out, _ = run_command(f"trap {REFERENCE_ARGS} --x 1.5 --delta 0.1")
    plain = json_records(run_command(f"trap {REFERENCE_ARGS} --x 1.5")[1])[0]
    assert code == 0
    assert json_records(out)[0]["value"] < plain["value"]


def test_rate_equals_transfer():
    args = REFERENCE_ARGS.replace("--ct 0.25", "--ct 1.44")
    code, _, err = run_command(f"trap {args} --x 1.5")
    assert code == 2
    assert "c_t" in err


def test_validation_exit_codes():
    code, _, err = run_command(f"trap {REFERENCE_ARGS}")
    assert code == 2
    code, _, err = run_command(f"trap {REFERENCE_ARGS} --x 1.5 --r 1.44")
    assert code == 2
    assert "more than once" in err
    code, _, err = run_command("trap --x 1.5")
    assert code == 2
    code, _, err = run_command(f"trap {REFERENCE_ARGS} --x 1.5 --delta -1")
    assert code == 2
    assert "delta" in err


def test_trap_below_critical():
    code, _, err = run_command(f"trap {REFERENCE_ARGS} --x 0.5")
    assert code == 2
    assert "x_star" in err


def test_ep():
    code, out, _ = run_command(
        f"ep {REFERENCE_ARGS} --x-grid 0.5,1.5,3 --omega-const 0.02"
    )
    assert code == 0
    records = json_records(out)
    assert [r["trap_bound"] for r in records][0] == 1.0
    assert all(r["bounded"] for r in records)
    assert all(0.0 <= r["value"] <= 1.0 for r in records)
    code, out, _ = run_command(f"ep {REFERENCE_ARGS} --x 1.5 --omega-exp 0.02")
    assert code == 0


def test_ep_rejects_loss_table():
    table = test_dir / "beta_loss_table.csv"
    code, _, err = run_command(
        f"ep {REFERENCE_ARGS} --x 1.5 --omega-const 0.02 --loss-table {table}"
    )
    assert code == 2
    assert "simulate" in err


def test_ep_requires_rate():
    code, _, err = run_command(f"ep {REFERENCE_ARGS} --x 1.5")
    assert code == 2
    code, _, err = run_command(
        f"ep {REFERENCE_ARGS} --x 1.5 --omega-exp 0.02 --delta 0.1"
    )
    assert code == 2


def test_simulate_reproducible():
    code, first, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS}")
    assert code == 0
    _, second, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS}")
    assert first == second
    _, other, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS}", ["-n", "1"])
    _, more, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS}", ["-n", "2"])
    assert first == other == more
    record = json_records(first)[0]
    assert record["n"] == 500
    assert record["seed"] == 7
    assert record["ci_low"] <= record["value"] <= record["ci_high"]


def test_simulate_csv_columns():
    code, out, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS} --format csv")
    assert code == 0
    assert out.splitlines()[0] == (
        "x,value,std_dev,ci_low,ci_high,n,seed,horizon,horizon_shift,horizon_ok"
    )


def test_simulate_needs_seed():
    code, _, err = run_command(
        f"simulate {REFERENCE_ARGS} --x 1.5 --omega-const 0.02 --n 500"
    )
    assert code == 2
    assert "seed" in err


def test_simulate_trapping_rejects_rate():
    code, _, _ = run_command(f"{SIMULATE} {REFERENCE_ARGS} --trapping")
    assert code == 2


def test_simulate_trace(tmp_path):
    trace = tmp_path / "paths.csv"
    code, _, _ = run_command(
        f"{SIMULATE} {REFERENCE_ARGS} --trace {trace} --trace-paths 3"
    )
    assert code == 0
    frame = pd.read_csv(trace)
    assert list(frame.columns[:4]) == ["path", "time", "capital", "event"]
    assert sorted(frame["path"].unique()) == [0, 1, 2]
    assert (frame[frame["event"] == "start"]["capital"] == 1.5).all()


def test_simulate_loss_table():
    table = test_dir / "beta_loss_table.csv"
    code, out, _ = run_command(
        f"simulate {REFERENCE_ARGS} --x 1.5 --trapping --n 500 --seed 3"
        f" --horizon 50 --no-horizon-check --loss-table {table}"
    )
    assert code == 0
    assert 0.0 <= json_records(out)[0]["value"] <= 1.0


def test_frontier():
    args = REFERENCE_ARGS.replace("--alpha 0.8", "--alpha 1.25")
    code, out, _ = run_command(
        f"frontier {args} --kind trapping --target 0.25 --x 2"
        " --b-grid 1.05:6:0.25 --format csv"
    )
    assert code == 0
    assert out.splitlines()[0] == "barrier,c_t,residual,note"
    frame = pd.read_csv(io.StringIO(out))
    solved = frame[frame["c_t"].notna()]
    assert len(solved) > 0
    assert (solved["residual"] <= 1e-7).all()
    assert solved["c_t"].is_monotonic_decreasing


def test_frontier_unattainable_marked_na():
    code, out, _ = run_command(
        f"frontier {REFERENCE_ARGS} --target 0.999 --x 2 --b-grid 1.5,2,3"
        " --format csv"
    )
    assert code == 0
    lines = out.splitlines()[1:]
    assert len(lines) == 3
    assert all(line.split(",")[1] == "NA" for line in lines)
    code, out, _ = run_command(
        f"frontier {REFERENCE_ARGS} --target 0.999 --x 2 --b-grid 1.5,2,3"
    )
    assert all(r["c_t"] is None for r in json_records(out))


def test_frontier_requires_target():
    code, _, err = run_command(f"frontier {REFERENCE_ARGS} --x 2 --b-grid 1.5,2")
    assert code == 2
    assert "target" in err


def test_check_reference():
    code, out, _ = run_command(f"check {REFERENCE_ARGS} --n 4000")
    records = json_records(out)
    assert code == 0, [r for r in records if not r["passed"]]
    names = {r["check"] for r in records}
    assert "ordering:ep_le_trapping" in names
    assert "monte_carlo:trapping" in names
    assert "trapping:derivative_continuity_fd" in names


def test_check_tight():
    code, out, _ = run_command(f"check {REFERENCE_ARGS} --n 2000 --tight")
    assert code == 0
    tolerances = {r["check"]: r["tolerance"] for r in json_records(out)}
    assert tolerances["ordering:ep_le_trapping"] == 5e-11


def test_check_trapping_certain():
    args = REFERENCE_ARGS.replace("--alpha 0.8", "--alpha 0.5")
    code, out, _ = run_command(f"check {args} --n 1000 --horizon 800")
    records = json_records(out)
    assert records[0]["check"] == "trapping_certain"
    assert records[0]["passed"]


def test_config_file():
    code, out, _ = run_command("trap", ["-c", "reference_config.json"], cwd=test_dir)
    assert code == 0
    assert out.splitlines()[0] == "x,value,note"
    assert len(out.splitlines()) == 6


def test_config_options(tmp_path):
    config = test_dir / "options_config.json"
    code, out, _ = run_command(
        f"simulate --x 1.5 --params {test_dir / 'reference_params.json'}",
        ["-c", str(config)],
        cwd=tmp_path,
    )
    # The command line params file wins over the configured one
    assert code == 0
    record = json_records(out)[0]
    assert record["n"] == 500
    assert record["seed"] == 11
    assert (tmp_path / "povtrap_debug.log").exists()


def test_missing_config():
    code, _, err = run_command(f"trap {REFERENCE_ARGS} --x 1.5", ["-c", "nothere.json"])
    assert code == 2
    assert "nothere.json" in err


def test_output_file(tmp_path):
    target = tmp_path / "trap.json"
    code, out, _ = run_command(f"trap {REFERENCE_ARGS} --x 1.5 -o {target}")
    assert code == 0
    assert out == ""
    assert json_records(target.read_text())[0]["x"] == 1.5
