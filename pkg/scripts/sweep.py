"""
(ε, δ) 网格批量实验
对每个格点运行一次 optimize，汇总 1D 均匀性或 2D 覆盖率指标到 sweep.csv
单个格点失败只记录，不中断整批
"""

import csv
import json
import logging
import sys
from datetime import datetime
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# 添加项目根目录到Python路径，以便导入模块
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from core.experiment_config import ConfigError, ExperimentConfig
from core.report import format_number
from scripts.single_run import cmd_optimize

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "epsilon", "delta", "status", "total", "control_energy", "interaction_energy",
    "coverage", "l2_entropy_ratio", "w1_uniform", "iterations", "run_dir",
]


class SweepRunner:
    """ε、δ 两个列表的笛卡尔积批量运行器"""

    def __init__(self, config: ExperimentConfig, epsilons: Optional[Sequence[float]] = None,
                 deltas: Optional[Sequence[float]] = None):
        self.config = config
        self.epsilons = list(config.sweep_epsilons if epsilons is None else epsilons)
        self.deltas = list(config.sweep_deltas if deltas is None else deltas)
        if not self.epsilons or not self.deltas:
            raise ConfigError("sweep 需要非空的 epsilons 与 deltas 列表")
        if config.system.d not in (1, 2):
            raise ConfigError(f"sweep 只支持 1D 或 2D 系统, 实际 d={config.system.d}")
        self.output_dir = config.output_dir
        print(f"🧪 初始化参数扫描: {len(self.epsilons)} 个 ε × {len(self.deltas)} 个 δ")
        print(f"📁 输出目录: {self.output_dir}")

    def cell_dir(self, epsilon: float, delta: float) -> Path:
        return self.output_dir / f"eps_{epsilon:g}_delta_{delta:g}"

    def run_cell(self, epsilon: float, delta: float) -> Dict[str, Any]:
        """运行一个格点；异常被捕获并记录为 status=failed"""
        row: Dict[str, Any] = {"epsilon": epsilon, "delta": delta, "run_dir": str(self.cell_dir(epsilon, delta))}
        try:
            cell = self.config.with_overrides(epsilon=epsilon, delta=delta,
                                              output_dir=self.cell_dir(epsilon, delta))
            report = cmd_optimize(cell)
        except Exception as e:
            logger.warning(f"⚠️ 格点 ε={epsilon:g}, δ={delta:g} 失败: {e}")
            row.update({"status": "failed", "error": str(e)})
            return row
        row.update({
            "status": report.status,
            "total": report.breakdown["total"],
            "control_energy": report.breakdown["control_energy"],
            "interaction_energy": report.breakdown["interaction_energy"],
            "coverage": report.metrics["coverage"],
            "l2_entropy_ratio": report.metrics["l2_entropy_ratio"],
            "w1_uniform": report.extra.get("w1_uniform"),
            "iterations": len(report.history),
        })
        return row

    def run(self) -> List[Dict[str, Any]]:
        cells = list(product(self.epsilons, self.deltas))
        rows = []
        for i, (epsilon, delta) in enumerate(cells, 1):
            print(f"\n{'=' * 60}")
            print(f"🔧 格点 {i}/{len(cells)}: ε={epsilon:g}, δ={delta:g}")
            print(f"{'=' * 60}")
            rows.append(self.run_cell(epsilon, delta))
        failed = sum(1 for r in rows if r["status"] == "failed")
        print(f"\n🎉 参数扫描完成!")
        print(f"✅ 成功: {len(rows) - failed}/{len(rows)}")
        print(f"❌ 失败: {failed}/{len(rows)}")
        return rows

    def save_sweep_results(self, rows: List[Dict[str, Any]]) -> Path:
        """写出 sweep.csv 与 sweep_report.json"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        csv_file = self.output_dir / "sweep.csv"
        with open(csv_file, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for row in rows:
                writer.writerow([_cell(row.get(col)) for col in SWEEP_COLUMNS])

        summary = {
            "sweep_time": datetime.now().isoformat(),
            "epsilons": self.epsilons,
            "deltas": self.deltas,
            "cells": rows,
        }
        with open(self.output_dir / "sweep_report.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, ensure_ascii=False, indent=2)
        print(f"💾 扫描结果已保存: {csv_file}")
        return csv_file


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_number(value)
    return str(value)


def cmd_sweep(config: ExperimentConfig, epsilons: Optional[Sequence[float]] = None,
              deltas: Optional[Sequence[float]] = None) -> List[Dict[str, Any]]:
    """
    便捷函数：运行参数扫描并保存 sweep.csv

    Args:
        config: 基础实验配置
        epsilons: ε 列表，None 时取 sweep.epsilons
        deltas: δ 列表，None 时取 sweep.deltas

    Returns:
        每个格点一行的结果列表
    """
    runner = SweepRunner(config, epsilons, deltas)
    rows = runner.run()
    runner.save_sweep_results(rows)
    return rows
