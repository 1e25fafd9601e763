import json

import numpy as np
import pytest

from core.report import (
    CONTROLS_CSV,
    HISTORY_COLUMNS,
    HISTORY_CSV,
    INITIAL_POINTS_CSV,
    REPORT_JSON,
    TERMINAL_POINTS_CSV,
    load_report,
    read_controls_csv,
    read_history_csv,
    read_points_csv,
)
from scripts.reach_cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, main
from tests.conftest import CONFIG_DIR, small_1d_config

CSV_FILES = (TERMINAL_POINTS_CSV, INITIAL_POINTS_CSV, CONTROLS_CSV, HISTORY_CSV)


@pytest.fixture
def small_config(write_config):
    return str(write_config(small_1d_config()))


@pytest.mark.parametrize("name", ["gradcheck_pendulum.json", "gradcheck_vanderpol.json", "gradcheck_euler.json"])
def test_shipped_gradchecks_pass(name, tmp_path):
    code = main(["gradcheck", "--config", str(CONFIG_DIR / name), "--out", str(tmp_path)])
    assert code == EXIT_OK
    report = load_report(tmp_path / REPORT_JSON)
    assert report["status"] == "passed"
    assert report["extra"]["max_rel_error"] <= report["extra"]["tolerance"]


def test_corrupted_gradient_fails_check(tmp_path):
    code = main(["gradcheck", "--config", str(CONFIG_DIR / "gradcheck_pendulum.json"),
                 "--out", str(tmp_path), "--perturb", "1e-3"])
    assert code == EXIT_CHECK_FAILED
    assert load_report(tmp_path / REPORT_JSON)["status"] == "failed"


def test_gradcheck_rejects_large_problem(write_config):
    path = write_config(small_1d_config(ensemble={"N": 6, "init": "uniform_random"}))
    assert main(["gradcheck", "--config", str(path)]) == EXIT_CONFIG


def test_gradcheck_coordinate_count_override(write_config, tmp_path):
    path = write_config(small_1d_config())
    assert main(["gradcheck", "--config", str(path), "--probes", "7"]) == EXIT_OK
    assert load_report(tmp_path / "run" / REPORT_JSON)["extra"]["probes"] == 7


def test_unknown_config_key_exits_with_config_error(write_config):
    path = write_config(small_1d_config(epsilonn=0.3))
    assert main(["optimize", "--config", str(path)]) == EXIT_CONFIG


def test_missing_config_file_exits_with_config_error(tmp_path):
    assert main(["optimize", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_optimize_writes_artifacts(small_config, tmp_path):
    out = tmp_path / "opt"
    assert main(["optimize", "--config", small_config, "--out", str(out), "--threads", "1"]) == EXIT_OK
    for name in CSV_FILES + (REPORT_JSON,):
        assert (out / name).exists(), name

    assert (out / TERMINAL_POINTS_CSV).read_text(encoding="utf-8").splitlines()[0] == "particle_id,x1"
    assert (out / CONTROLS_CSV).read_text(encoding="utf-8").splitlines()[0] == "particle_id,step,t,u1"
    assert (out / HISTORY_CSV).read_text(encoding="utf-8").splitlines()[0] == ",".join(HISTORY_COLUMNS)

    history = read_history_csv(out / HISTORY_CSV)
    totals = [row["total"] for row in history]
    assert all(b <= a for a, b in zip(totals, totals[1:]))

    controls = read_controls_csv(out / CONTROLS_CSV)
    assert controls.shape == (5, 10, 1)
    assert np.all(np.abs(controls) <= 1.0)
    assert np.all(read_points_csv(out / INITIAL_POINTS_CSV) == 0.0)

    report = load_report(out / REPORT_JSON)
    assert report["command"] == "optimize"
    assert report["status"] in ("converged_grad", "converged_obj", "max_iters", "stalled")
    assert report["breakdown"]["total"] <= report["initial"]["total"]
    assert report["extra"]["oracle"]["label"] == "random-rollout under-approximation"
    assert "w1_uniform" in report["extra"]
    assert set(report["choices_flagged"]) >= {"epsilon", "kernel.delta"}
    assert report["config"]["seed"] == 3


def test_deterministic_reruns_are_byte_identical(small_config, tmp_path):
    for run in ("a", "b"):
        assert main(["optimize", "--config", small_config, "--out", str(tmp_path / run), "--threads", "1"]) == EXIT_OK
    for name in CSV_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_seed_override_changes_run(small_config, tmp_path):
    main(["optimize", "--config", small_config, "--out", str(tmp_path / "a"), "--threads", "1"])
    main(["optimize", "--config", small_config, "--out", str(tmp_path / "b"), "--threads", "1", "--seed", "4"])
    assert load_report(tmp_path / "b" / REPORT_JSON)["config"]["seed"] == 4
    assert (tmp_path / "a" / CONTROLS_CSV).read_bytes() != (tmp_path / "b" / CONTROLS_CSV).read_bytes()


def test_solver_seed_drives_initial_controls(write_config, tmp_path):
    controls = {}
    for solver_seed in (None, 3, 4):
        name = f"seed_{solver_seed}"
        path = write_config(small_1d_config(solver={"max_iters": 0, "seed": solver_seed}), name=f"{name}.json")
        assert main(["optimize", "--config", str(path), "--out", str(tmp_path / name), "--threads", "1"]) == EXIT_OK
        controls[solver_seed] = read_controls_csv(tmp_path / name / CONTROLS_CSV)
    # 未设置 solver.seed 时沿用顶层 seed=3
    assert np.array_equal(controls[None], controls[3])
    assert not np.array_equal(controls[3], controls[4])


def test_metrics_reproduces_report(small_config, tmp_path):
    out = tmp_path / "opt"
    main(["optimize", "--config", small_config, "--out", str(out), "--threads", "1"])
    assert main(["metrics", "--run-dir", str(out)]) == EXIT_OK
    recomputed = load_report(out / "metrics.json")
    assert recomputed["status"] == "passed"
    assert recomputed["extra"]["mismatches"] == {}


def test_metrics_detects_tampering(small_config, tmp_path):
    out = tmp_path / "opt"
    main(["optimize", "--config", small_config, "--out", str(out), "--threads", "1"])
    report_path = out / REPORT_JSON
    data = json.loads(report_path.read_text(encoding="utf-8"))
    data["metrics"]["interaction_energy"] *= 1.001
    report_path.write_text(json.dumps(data), encoding="utf-8")
    assert main(["metrics", "--run-dir", str(out)]) == EXIT_CHECK_FAILED
    assert "interaction_energy" in load_report(out / "metrics.json")["extra"]["mismatches"]


def test_baseline_uses_same_file_contract(small_config, tmp_path):
    out = tmp_path / "base"
    assert main(["baseline", "--config", small_config, "--out", str(out)]) == EXIT_OK
    for name in CSV_FILES + (REPORT_JSON,):
        assert (out / name).exists(), name
    assert read_history_csv(out / HISTORY_CSV) == []
    report = load_report(out / REPORT_JSON)
    assert report["command"] == "baseline"
    assert report["breakdown"] == report["initial"]
    assert main(["metrics", "--run-dir", str(out)]) == EXIT_OK


def test_single_particle_run_drops_control_energy(write_config, tmp_path):
    path = write_config(small_1d_config(
        ensemble={"N": 1, "init": "uniform_random"},
        solver={"max_iters": 20, "log_every": 5, "metric": "l2"},
    ))
    assert main(["optimize", "--config", str(path), "--threads", "1"]) == EXIT_OK
    report = load_report(tmp_path / "run" / REPORT_JSON)
    assert report["breakdown"]["control_energy"] <= 1e-8
    assert report["metrics"]["nn_min"] == float("inf")


def test_single_cell_sweep_matches_optimize(small_config, tmp_path):
    assert main(["sweep", "--config", small_config, "--out", str(tmp_path / "sweep"),
                 "--threads", "1", "--epsilons", "0.1", "--deltas", "0.2"]) == EXIT_OK
    assert main(["optimize", "--config", small_config, "--out", str(tmp_path / "opt"), "--threads", "1"]) == EXIT_OK
    cell = tmp_path / "sweep" / "eps_0.1_delta_0.2"
    for name in CSV_FILES:
        assert (cell / name).read_bytes() == (tmp_path / "opt" / name).read_bytes(), name
    lines = (tmp_path / "sweep" / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("epsilon,delta,status")
    assert len(lines) == 2


def test_sweep_requires_values(small_config, tmp_path):
    code = main(["sweep", "--config", small_config, "--out", str(tmp_path), "--epsilons", "--deltas", "0.1"])
    assert code == EXIT_CONFIG


def test_sweep_records_failed_cells(small_config, tmp_path):
    code = main(["sweep", "--config", small_config, "--out", str(tmp_path), "--threads", "1",
                 "--epsilons", "0.1", "-1", "--deltas", "0.2"])
    assert code == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert ",failed," in lines[2]


def test_divergence_writes_partial_report(write_config, tmp_path):
    data = small_1d_config(
        system={"name": "linear_1d", "params": {"a": 1000.0}},
        grid={"T": 20.0, "steps": 200, "scheme": "euler"},
        boxes={"omega": {"lower": [0.5], "upper": [1.0]}, "u": {"lower": [-1.0], "upper": [1.0]}},
    )
    path = write_config(data)
    assert main(["optimize", "--config", str(path)]) == EXIT_RUNTIME
    report = load_report(tmp_path / "run" / REPORT_JSON)
    assert report["status"] == "diverged"
    assert report["extra"]["divergence"]["particles"]


def test_parser_exposes_all_subcommands():
    parser = build_parser()
    for command in ("optimize", "baseline", "gradcheck", "sweep", "metrics"):
        args = parser.parse_args([command])
        assert args.command == command
    with pytest.raises(SystemExit):
        parser.parse_args(["optimize", "--scheme", "midpoint"])


def test_compose_volumes_are_reachable_from_working_dir():
    text = (CONFIG_DIR.parent / "docker-compose.yml").read_text(encoding="utf-8")
    lines = [line.strip() for line in text.splitlines()]
    working_dir = next(line.split(":", 1)[1].strip() for line in lines if line.startswith("working_dir:"))
    targets = [line[2:].split(":", 1)[1] for line in lines if line.startswith("- ./")]
    assert targets
    assert all(target == working_dir or target.startswith(working_dir + "/") for target in targets)
