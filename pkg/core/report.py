"""
运行产物模块
CSV 点云/控制/迭代历史的读写，以及 report.json 的组装与保存
数值一律以 17 位有效数字写出，回读后逐位一致
"""

import csv
import json
import logging
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np

from core import __version__

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TERMINAL_POINTS_CSV = "terminal_points.csv"
INITIAL_POINTS_CSV = "initial_points.csv"
CONTROLS_CSV = "controls.csv"
HISTORY_CSV = "history.csv"
REPORT_JSON = "report.json"

HISTORY_COLUMNS = ["iter", "total", "control_energy", "interaction_energy", "step", "grad_norm"]


def format_number(x: float) -> str:
    return f"{float(x):.17g}"


def _write_rows(path: PathLike, header: List[str], rows: Iterable[List[str]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_points_csv(path: PathLike, points: np.ndarray):
    """列: particle_id, x1..xd"""
    points = np.asarray(points, dtype=float)
    header = ["particle_id"] + [f"x{j + 1}" for j in range(points.shape[1])]
    _write_rows(path, header, ([str(i)] + [format_number(v) for v in row] for i, row in enumerate(points)))


def write_controls_csv(path: PathLike, controls: np.ndarray, dt: float):
    """列: particle_id, step, t, u1..um；t 为该步起点 k·dt"""
    controls = np.asarray(controls, dtype=float)
    header = ["particle_id", "step", "t"] + [f"u{j + 1}" for j in range(controls.shape[2])]
    rows = (
        [str(i), str(k), format_number(k * dt)] + [format_number(v) for v in controls[i, k]]
        for i in range(controls.shape[0])
        for k in range(controls.shape[1])
    )
    _write_rows(path, header, rows)


def write_history_csv(path: PathLike, history: Iterable[Any]):
    """history 元素需有 HISTORY_COLUMNS 中的属性"""
    rows = (
        [str(rec.iter)] + [format_number(getattr(rec, col)) for col in HISTORY_COLUMNS[1:]]
        for rec in history
    )
    _write_rows(path, HISTORY_COLUMNS, rows)


def _read_table(path: PathLike) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def read_points_csv(path: PathLike) -> np.ndarray:
    rows = _read_table(path)
    if not rows:
        raise ValueError(f"点云文件为空: {path}")
    columns = sorted((c for c in rows[0] if c.startswith("x")), key=lambda c: int(c[1:]))
    rows.sort(key=lambda r: int(r["particle_id"]))
    return np.array([[float(r[c]) for c in columns] for r in rows])


def read_controls_csv(path: PathLike) -> np.ndarray:
    """回读为 (N, K, m)"""
    rows = _read_table(path)
    if not rows:
        raise ValueError(f"控制文件为空: {path}")
    columns = sorted((c for c in rows[0] if c.startswith("u")), key=lambda c: int(c[1:]))
    N = max(int(r["particle_id"]) for r in rows) + 1
    K = max(int(r["step"]) for r in rows) + 1
    out = np.full((N, K, len(columns)), np.nan)
    for r in rows:
        out[int(r["particle_id"]), int(r["step"])] = [float(r[c]) for c in columns]
    return out


def read_history_csv(path: PathLike) -> List[Dict[str, float]]:
    return [{k: (int(v) if k == "iter" else float(v)) for k, v in r.items()} for r in _read_table(path)]


def artifact_version() -> str:
    """git describe 风格的版本串；不在 git 仓库中时退回包版本号"""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


@dataclass
class RunReport:
    """一次运行的自包含报告"""

    command: str
    status: str
    config: Dict[str, Any]
    version: str = field(default_factory=artifact_version)
    history: List[Dict[str, Any]] = field(default_factory=list)
    initial: Optional[Dict[str, float]] = None
    breakdown: Optional[Dict[str, float]] = None
    metrics: Optional[Dict[str, float]] = None
    timings: Dict[str, float] = field(default_factory=dict)
    choices_flagged: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: PathLike) -> Path:
        """
        保存为 JSON

        Args:
            path: 输出文件路径

        Returns:
            实际写入的路径
        """
        output_file = Path(path)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        with open(output_file, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        logger.info(f"💾 报告已保存到: {output_file}")
        return output_file


def load_report(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
