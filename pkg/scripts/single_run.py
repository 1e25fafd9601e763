"""
单次实验编排
optimize / baseline / gradcheck / metrics 四种运行，每次调用处理一个实验配置并写出全部产物
"""

import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

# 添加项目根目录到Python路径，以便导入模块
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from core.dynamics import linear_growth_constant
from core.experiment_config import ConfigError, ExperimentConfig, config_to_dict
from core.integrate import DivergenceError
from core.objective import ParticleObjective, control_energy, finite_difference_check
from core.optimizer import ProjectedGradientSolver, init_ensemble
from core.report import (
    CONTROLS_CSV,
    HISTORY_CSV,
    INITIAL_POINTS_CSV,
    REPORT_JSON,
    TERMINAL_POINTS_CSV,
    RunReport,
    load_report,
    read_controls_csv,
    read_points_csv,
    write_controls_csv,
    write_history_csv,
    write_points_csv,
)
from core.sampling import (
    OracleGrid,
    PointCloud,
    baseline_ensemble,
    coverage_metrics,
    oracle_reachable,
    wasserstein1_1d,
)

logger = logging.getLogger(__name__)

GRADCHECK_MAX_PARTICLES = 5
GRADCHECK_MAX_STEPS = 100
METRICS_TOLERANCE = 1e-10


def build_oracle(config: ExperimentConfig) -> OracleGrid:
    """按配置构造参考估计；同一配置与种子总得到同一结果"""
    return oracle_reachable(
        config.system, config.grid, config.omega, config.u_box,
        M=config.oracle_M, h=config.oracle_h, segments=config.oracle_segments,
        seed=config.seed, scheme=config.scheme, threads=config.threads,
    )


def _new_report(command: str, config: ExperimentConfig) -> RunReport:
    return RunReport(
        command=command,
        status="running",
        config=config_to_dict(config),
        choices_flagged=config.flagged_choices(),
    )


def _evaluate_cloud(config: ExperimentConfig, terminal: np.ndarray, label: str,
                    report: RunReport, timings: Dict[str, float]):
    """参考估计 + 覆盖率指标 (+ 1D 均匀性)，结果写入 report"""
    start = time.perf_counter()
    oracle = build_oracle(config)
    timings["oracle"] = time.perf_counter() - start

    start = time.perf_counter()
    cloud = PointCloud(terminal, label=label)
    report.metrics = coverage_metrics(cloud, oracle, config.kernel, config.epsilon).to_dict()
    report.extra["oracle"] = {
        "label": oracle.label,
        "rollouts": oracle.rollouts,
        "h": oracle.h,
        "point_lower": oracle.point_lower.tolist(),
        "point_upper": oracle.point_upper.tolist(),
    }
    report.extra["linear_growth_constant"] = linear_growth_constant(
        config.system, oracle.point_box(), seed=config.seed,
    )
    if cloud.d == 1:
        interval = config.sweep_interval or (float(oracle.point_lower[0]), float(oracle.point_upper[0]))
        if interval[1] > interval[0]:
            report.extra["w1_uniform"] = wasserstein1_1d(cloud, interval)
            report.extra["w1_interval"] = list(interval)
    timings["metrics"] = time.perf_counter() - start


def _write_ensemble(out: Path, config: ExperimentConfig, ens, terminal: np.ndarray):
    write_points_csv(out / TERMINAL_POINTS_CSV, terminal)
    write_points_csv(out / INITIAL_POINTS_CSV, ens.x0s)
    write_controls_csv(out / CONTROLS_CSV, ens.controls, config.grid.dt)


def _fail(report: RunReport, out: Path, error: Exception):
    report.status = "diverged" if isinstance(error, DivergenceError) else "failed"
    report.error = str(error)
    if isinstance(error, DivergenceError):
        report.extra["divergence"] = {"step": error.step, "particles": list(error.particles)}
    logger.error(f"❌ 运行失败 ({report.status}): {error}")
    report.save(out / REPORT_JSON)


def cmd_optimize(config: ExperimentConfig) -> RunReport:
    """
    初始化粒子 → 投影梯度求解 → 覆盖率评估，写出 CSV 与 report.json

    Args:
        config: 实验配置

    Returns:
        RunReport

    Raises:
        DivergenceError: 初始轨迹发散；已写出 status="diverged" 的部分报告
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report = _new_report("optimize", config)
    timings: Dict[str, float] = {}
    print(f"🚀 开始优化: {config!r}")
    print(f"📁 输出目录: {out}")

    try:
        start = time.perf_counter()
        ens0 = init_ensemble(config.system, config.grid, config.omega, config.u_box,
                             config.N, config.init, config.solver.seed)
        objective = ParticleObjective(config.system, config.grid, config.kernel, config.epsilon,
                                      config.scheme, config.threads, config.reduction)
        result = ProjectedGradientSolver(objective, config.solver).run(ens0)
        terminal = objective.terminal_points(result.ensemble)
        timings["solve"] = time.perf_counter() - start

        _write_ensemble(out, config, result.ensemble, terminal)
        write_history_csv(out / HISTORY_CSV, result.history)

        report.status = result.status
        report.history = [rec.to_dict() for rec in result.history]
        report.initial = result.initial.to_dict()
        report.breakdown = result.breakdown.to_dict()
        report.extra["grad_norm"] = result.grad_norm
        report.extra["evaluations"] = result.evaluations
        _evaluate_cloud(config, terminal, "optimized", report, timings)
    except Exception as e:
        report.timings = timings
        _fail(report, out, e)
        raise

    report.timings = timings
    report.save(out / REPORT_JSON)
    print(f"✅ 优化完成: 状态={report.status}, 目标={report.breakdown['total']:.6e}, "
          f"覆盖率={report.metrics['coverage']:.4f}")
    return report


def cmd_baseline(config: ExperimentConfig) -> RunReport:
    """
    朴素随机控制基线，产物格式与 optimize 相同（history.csv 为空表）

    Args:
        config: 实验配置

    Returns:
        RunReport
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report = _new_report("baseline", config)
    timings: Dict[str, float] = {}
    print(f"🎲 开始基线采样: {config!r}")

    try:
        start = time.perf_counter()
        ens = baseline_ensemble(config.system, config.grid, config.omega, config.u_box,
                                config.N, config.baseline_segments, config.seed)
        objective = ParticleObjective(config.system, config.grid, config.kernel, config.epsilon,
                                      config.scheme, config.threads, config.reduction)
        breakdown = objective.evaluate(ens)
        terminal = objective.terminal_points(ens)
        timings["sample"] = time.perf_counter() - start

        _write_ensemble(out, config, ens, terminal)
        write_history_csv(out / HISTORY_CSV, [])
        report.status = "ok"
        report.initial = breakdown.to_dict()
        report.breakdown = breakdown.to_dict()
        _evaluate_cloud(config, terminal, "baseline", report, timings)
    except Exception as e:
        report.timings = timings
        _fail(report, out, e)
        raise

    report.timings = timings
    report.save(out / REPORT_JSON)
    print(f"✅ 基线完成: 相互作用能={report.metrics['interaction_energy']:.6e}, "
          f"覆盖率={report.metrics['coverage']:.4f}")
    return report


def cmd_gradcheck(config: ExperimentConfig, n_probes: Optional[int] = None,
                  perturbation: float = 0.0) -> RunReport:
    """
    伴随梯度与中心差分的抽检比较

    Args:
        config: 实验配置，须满足 N <= 5 且 steps <= 100
        n_probes: 抽检坐标数，None 时取 gradcheck.probes
        perturbation: 加到解析梯度上的偏移（用于负对照）

    Returns:
        RunReport，status 为 "passed" 或 "failed"
    """
    if config.N > GRADCHECK_MAX_PARTICLES or config.grid.steps > GRADCHECK_MAX_STEPS:
        raise ConfigError(
            f"gradcheck 只接受小规模问题 (N <= {GRADCHECK_MAX_PARTICLES}, steps <= {GRADCHECK_MAX_STEPS}), "
            f"实际 N={config.N}, steps={config.grid.steps}"
        )
    probes = config.gradcheck_probes if n_probes is None else n_probes
    if probes < 1:
        raise ConfigError(f"抽检坐标数必须为正, 实际为 {probes}")

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report = _new_report("gradcheck", config)
    print(f"🔬 梯度检查: {config!r}, 抽检 {probes} 个坐标")

    try:
        start = time.perf_counter()
        ens = init_ensemble(config.system, config.grid, config.omega, config.u_box,
                            config.N, config.init, config.solver.seed)
        objective = ParticleObjective(config.system, config.grid, config.kernel, config.epsilon,
                                      config.scheme, 1, config.reduction)
        check = finite_difference_check(
            objective, ens, probes=probes, fd_step=config.fd_step, seed=config.seed,
            include_x0=config.solver.optimize_x0, perturbation=perturbation,
        )
        report.timings = {"gradcheck": time.perf_counter() - start}
    except Exception as e:
        _fail(report, out, e)
        raise

    max_err = check.max_rel_error
    passed = max_err <= config.gradcheck_tolerance
    report.status = "passed" if passed else "failed"
    report.extra.update({
        "max_rel_error": max_err,
        "tolerance": config.gradcheck_tolerance,
        "probes": len(check.coordinates),
        "coordinates": check.coordinates,
        "errors": check.errors,
    })
    report.save(out / REPORT_JSON)
    icon = "✅" if passed else "❌"
    print(f"{icon} 最大相对误差: {max_err:.3e} (容差 {config.gradcheck_tolerance:.1e})")
    return report


def _close(a: float, b: float) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isinf(a) and math.isinf(b):
        return a == b
    return abs(a - b) <= METRICS_TOLERANCE * max(1.0, abs(b))


def cmd_metrics(run_dir: Union[str, Path], config: Optional[ExperimentConfig] = None) -> RunReport:
    """
    由 run_dir 中的 CSV 重新计算指标并与 report.json 比对

    Args:
        run_dir: optimize 或 baseline 的输出目录
        config: 实验配置，None 时使用 report.json 中回显的配置

    Returns:
        RunReport，status 为 "passed" 或 "mismatch"；结果另存为 metrics.json
    """
    run_dir = Path(run_dir)
    stored = load_report(run_dir / REPORT_JSON)
    if config is None:
        config = ExperimentConfig(stored["config"])
    if not stored.get("metrics"):
        raise ValueError(f"{run_dir / REPORT_JSON} 中没有指标记录")

    report = _new_report("metrics", config)
    start = time.perf_counter()
    terminal = read_points_csv(run_dir / TERMINAL_POINTS_CSV)
    oracle = build_oracle(config)
    recomputed: Dict[str, Any] = coverage_metrics(
        PointCloud(terminal), oracle, config.kernel, config.epsilon,
    ).to_dict()

    expected: Dict[str, Any] = dict(stored["metrics"])
    if stored.get("breakdown") and (run_dir / CONTROLS_CSV).exists():
        recomputed["control_energy"] = control_energy(read_controls_csv(run_dir / CONTROLS_CSV), config.grid)
        expected["control_energy"] = stored["breakdown"]["control_energy"]

    mismatches = {
        key: {"reported": expected[key], "recomputed": recomputed.get(key)}
        for key in expected
        if key not in recomputed or not _close(float(recomputed[key]), float(expected[key]))
    }
    for key, diff in mismatches.items():
        logger.warning(f"⚠️ 指标不一致: {key}: 报告={diff['reported']}, 重算={diff['recomputed']}")

    report.status = "passed" if not mismatches else "mismatch"
    report.metrics = recomputed
    report.extra["run_dir"] = str(run_dir)
    report.extra["mismatches"] = mismatches
    report.timings = {"metrics": time.perf_counter() - start}
    report.save(run_dir / "metrics.json")
    icon = "✅" if not mismatches else "❌"
    print(f"{icon} 指标复算: {len(expected) - len(mismatches)}/{len(expected)} 项一致")
    return report
