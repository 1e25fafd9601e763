"""
端到端验收实验（耗时较长，默认跳过；pytest -m slow 运行）
"""

import numpy as np
import pytest

from core.experiment_config import load_config
from core.report import (
    CONTROLS_CSV,
    HISTORY_CSV,
    INITIAL_POINTS_CSV,
    TERMINAL_POINTS_CSV,
    read_controls_csv,
    read_history_csv,
    read_points_csv,
)
from scripts.single_run import cmd_baseline, cmd_gradcheck, cmd_optimize
from scripts.sweep import cmd_sweep
from tests.conftest import CONFIG_DIR

pytestmark = pytest.mark.slow


def _check_run_files(out, config):
    totals = [row["total"] for row in read_history_csv(out / HISTORY_CSV)]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert np.all(config.u_box.contains(read_controls_csv(out / CONTROLS_CSV)))
    assert np.all(config.omega.contains(read_points_csv(out / INITIAL_POINTS_CSV)))


@pytest.mark.parametrize("name", ["gradcheck_pendulum.json", "gradcheck_vanderpol.json"])
def test_gradient_exactness(name, tmp_path):
    config = load_config(CONFIG_DIR / name).with_overrides(output_dir=tmp_path)
    report = cmd_gradcheck(config)
    assert report.extra["max_rel_error"] <= 1e-6


def test_integrator_reaches_uniform_interval(tmp_path):
    config = load_config(CONFIG_DIR / "integrator_1d.json").with_overrides(output_dir=tmp_path, threads=1)
    report = cmd_optimize(config)
    assert report.extra["w1_interval"] == [-1.0, 1.0]
    assert report.extra["w1_uniform"] <= 0.05
    assert report.metrics["coverage"] >= 0.9
    _check_run_files(tmp_path, config)


def test_sweep_refinement_improves_uniformity(tmp_path):
    config = load_config(CONFIG_DIR / "sweep_integrator_1d.json").with_overrides(output_dir=tmp_path, threads=1)
    rows = cmd_sweep(config)
    assert len(rows) == 9
    w1 = {(r["epsilon"], r["delta"]): r["w1_uniform"] for r in rows}
    diagonal = [w1[(0.5, 0.2)], w1[(0.1, 0.1)], w1[(0.02, 0.05)]]
    assert all(later <= earlier + 0.02 for earlier, later in zip(diagonal, diagonal[1:]))


@pytest.mark.parametrize("name", ["vanderpol.json", "pendulum.json"])
def test_optimized_ensemble_beats_random_controls(name, tmp_path):
    config = load_config(CONFIG_DIR / name)
    optimized = cmd_optimize(config.with_overrides(output_dir=tmp_path / "opt", threads=1))
    baseline = cmd_baseline(config.with_overrides(output_dir=tmp_path / "base", threads=1))
    assert optimized.metrics["interaction_energy"] <= 0.5 * baseline.metrics["interaction_energy"]
    assert optimized.metrics["coverage"] >= 1.5 * baseline.metrics["coverage"]
    _check_run_files(tmp_path / "opt", config)


def test_acceptance_run_is_reproducible(tmp_path):
    config = load_config(CONFIG_DIR / "integrator_1d.json")
    for run in ("a", "b"):
        cmd_optimize(config.with_overrides(output_dir=tmp_path / run, threads=1))
    for name in (CONTROLS_CSV, HISTORY_CSV, INITIAL_POINTS_CSV, TERMINAL_POINTS_CSV):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
