import math

import numpy as np
from numpy.testing import assert_array_equal

from core.optimizer import IterationRecord
from core.report import (
    HISTORY_COLUMNS,
    RunReport,
    format_number,
    load_report,
    read_controls_csv,
    read_history_csv,
    read_points_csv,
    write_controls_csv,
    write_history_csv,
    write_points_csv,
)


def test_seventeen_digits_round_trip(rng):
    for x in rng.normal(size=200) * 10.0 ** rng.integers(-12, 12, size=200):
        assert float(format_number(x)) == x
    assert format_number(0.1) == "0.10000000000000001"


def test_points_csv_round_trip_is_exact(tmp_path, rng):
    points = rng.normal(size=(25, 2))
    path = tmp_path / "points.csv"
    write_points_csv(path, points)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "particle_id,x1,x2"
    assert_array_equal(read_points_csv(path), points)


def test_controls_csv_layout(tmp_path):
    controls = np.arange(12.0).reshape(2, 3, 2) / 7.0
    path = tmp_path / "controls.csv"
    write_controls_csv(path, controls, dt=0.1)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "particle_id,step,t,u1,u2"
    assert len(lines) == 1 + 6
    assert lines[1].startswith("0,0,0,")
    assert lines[4].startswith("1,0,0,")
    assert lines[3].split(",")[2] == format_number(2 * 0.1)
    assert_array_equal(read_controls_csv(path), controls)


def test_history_csv_header_and_values(tmp_path):
    records = [
        IterationRecord(iter=1, total=2.5, control_energy=0.5, interaction_energy=2.0, step=1.0, grad_norm=0.3),
        IterationRecord(iter=2, total=1.0 / 3.0, control_energy=0.1, interaction_energy=1.0 / 3.0 - 0.1,
                        step=0.5, grad_norm=0.01),
    ]
    path = tmp_path / "history.csv"
    write_history_csv(path, records)
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(HISTORY_COLUMNS)
    rows = read_history_csv(path)
    assert [r["iter"] for r in rows] == [1, 2]
    assert rows[1]["total"] == 1.0 / 3.0


def test_empty_history_has_header_only(tmp_path):
    path = tmp_path / "history.csv"
    write_history_csv(path, [])
    assert path.read_text(encoding="utf-8") == ",".join(HISTORY_COLUMNS) + "\n"
    assert read_history_csv(path) == []


def test_report_save_and_load(tmp_path):
    report = RunReport(
        command="optimize",
        status="converged_grad",
        config={"epsilon": 0.1},
        metrics={"nn_min": math.inf, "coverage": 0.5},
        extra={"note": "参考估计"},
    )
    path = report.save(tmp_path / "nested" / "report.json")
    loaded = load_report(path)
    assert loaded["status"] == "converged_grad"
    assert math.isinf(loaded["metrics"]["nn_min"])
    assert loaded["extra"]["note"] == "参考估计"
    assert loaded["version"]
    assert "参考估计" in path.read_text(encoding="utf-8")
