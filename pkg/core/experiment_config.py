"""
实验配置模块
单个 JSON 文件描述一次实验；缺省项取自 DEFAULT_CONFIG，未知键一律报错
"""

import copy
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from core.dynamics import BoxSet, make_system
from core.integrate import SCHEMES, TimeGrid
from core.kernel import KernelSpec
from core.objective import REDUCTIONS
from core.optimizer import INIT_STRATEGIES, SolverConfig
from core.parallel import resolve_threads
from core.sampling import ORACLE_MAX_DIM

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """配置不合法：未知键、类型错误或前置条件不满足"""


DEFAULT_CONFIG: Dict[str, Any] = {
    "system": {"name": "vanderpol", "params": {}},
    "grid": {"T": 15.0, "steps": 1500, "scheme": "rk4"},
    "ensemble": {"N": 100, "init": "uniform_random"},
    "kernel": {"family": "gaussian", "delta": 0.2},
    "epsilon": 0.05,
    "boxes": {
        "omega": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0]},
        "u": {"lower": [-1.0], "upper": [1.0]},
    },
    "solver": {
        "max_iters": 200,
        "step0": 1.0,
        "armijo_c": 1e-4,
        "backtrack": 0.5,
        "tol_grad": None,
        "tol_obj": 1e-10,
        "optimize_x0": True,
        "seed": None,
        "max_backtracks": 40,
        "metric": "euclidean",
        "warm_start": True,
        "log_every": 10,
    },
    "oracle": {"M": 10000, "segments": None, "h": None},
    "baseline": {"segments": None},
    "parallel": {"threads": None, "reduction": "deterministic"},
    "gradcheck": {"probes": 50, "tolerance": 1e-5, "fd_step": 1e-5},
    "sweep": {"epsilons": [], "deltas": [], "interval": None},
    "seed": 0,
    "output_dir": "runs/default",
}

# 取值为任意映射、不按 DEFAULT_CONFIG 校验键名的路径
FREE_FORM_KEYS = {"system.params"}

# 作为实验选择而非推导结果的参数，写入报告以便审阅
FLAGGED_CHOICES = ("kernel.family", "kernel.delta", "epsilon", "oracle.h", "grid.scheme")


def _merge(defaults: Dict[str, Any], given: Any, path: str) -> Dict[str, Any]:
    if not isinstance(given, dict):
        raise ConfigError(f"配置项 {path or '<root>'} 应为对象, 实际为 {type(given).__name__}")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        full = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"未知配置项: {full}")
        if isinstance(defaults[key], dict) and full not in FREE_FORM_KEYS:
            merged[key] = _merge(defaults[key], value, full)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _number(data: Dict[str, Any], path: str, allow_none: bool = False) -> Optional[float]:
    value = _lookup(data, path)
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"配置项 {path} 应为有限实数, 实际为 {value!r}")
    return float(value)


def _integer(data: Dict[str, Any], path: str, allow_none: bool = False, minimum: int = 1) -> Optional[int]:
    value = _lookup(data, path)
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"配置项 {path} 应为 >= {minimum} 的整数, 实际为 {value!r}")
    return value


def _choice(data: Dict[str, Any], path: str, options) -> str:
    value = _lookup(data, path)
    if value not in options:
        raise ConfigError(f"配置项 {path} 取值 {value!r} 不在 {list(options)} 中")
    return value


def _lookup(data: Dict[str, Any], path: str) -> Any:
    node = data
    for part in path.split("."):
        node = node[part]
    return node


def _float_list(data: Dict[str, Any], path: str) -> List[float]:
    value = _lookup(data, path)
    if not isinstance(value, list):
        raise ConfigError(f"配置项 {path} 应为数组, 实际为 {value!r}")
    out = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
            raise ConfigError(f"配置项 {path} 含非实数元素 {item!r}")
        out.append(float(item))
    return out


class ExperimentConfig:
    """
    合并缺省值并校验后的实验配置

    构造时即检查所有前置条件（维度一致、ε>0、δ>0 等），之后的计算不会因配置问题失败。
    data 保存规范化后的字典，config_to_dict 原样返回，可逐项回读。
    """

    def __init__(self, data: Optional[Dict[str, Any]] = None):
        self.data = _merge(DEFAULT_CONFIG, data or {}, "")
        self._validate()

    def _validate(self):
        d = self.data
        if not isinstance(d["system"]["params"], dict):
            raise ConfigError("配置项 system.params 应为对象")
        try:
            self.system = make_system(d["system"]["name"], d["system"]["params"])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"system 配置无效: {e}") from e

        self.scheme = _choice(d, "grid.scheme", SCHEMES)
        T = _number(d, "grid.T")
        if T <= 0:
            raise ConfigError(f"配置项 grid.T 必须为正, 实际为 {T}")
        self.grid = TimeGrid(T, _integer(d, "grid.steps"))

        self.N = _integer(d, "ensemble.N")
        self.init = _choice(d, "ensemble.init", INIT_STRATEGIES)

        delta = _number(d, "kernel.delta")
        try:
            self.kernel = KernelSpec(d["kernel"]["family"], delta, self.system.d)
        except ValueError as e:
            raise ConfigError(f"kernel 配置无效: {e}") from e

        self.epsilon = _number(d, "epsilon")
        if self.epsilon <= 0:
            raise ConfigError(f"配置项 epsilon 必须为正, 实际为 {self.epsilon}")

        self.omega = self._box("boxes.omega", self.system.d)
        self.u_box = self._box("boxes.u", self.system.m)

        self.seed = _integer(d, "seed", minimum=0)
        _integer(d, "solver.seed", allow_none=True, minimum=0)
        solver = dict(d["solver"])
        if solver["seed"] is None:
            solver["seed"] = self.seed
        try:
            self.solver = SolverConfig(**solver)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"solver 配置无效: {e}") from e

        self.oracle_M = _integer(d, "oracle.M")
        self.oracle_segments = _integer(d, "oracle.segments", allow_none=True)
        if self.oracle_segments is not None and self.oracle_segments > self.grid.steps:
            raise ConfigError(f"oracle.segments={self.oracle_segments} 超过步数 K={self.grid.steps}")
        h = _number(d, "oracle.h", allow_none=True)
        if h is not None and h <= 0:
            raise ConfigError(f"配置项 oracle.h 必须为正, 实际为 {h}")
        self.oracle_h = self.kernel.delta / 2.0 if h is None else h
        if self.system.d > ORACLE_MAX_DIM:
            raise ConfigError(f"状态维度 d={self.system.d} 超过参考估计支持的 {ORACLE_MAX_DIM}")

        self.baseline_segments = _integer(d, "baseline.segments", allow_none=True)
        if self.baseline_segments is not None and self.baseline_segments > self.grid.steps:
            raise ConfigError(f"baseline.segments={self.baseline_segments} 超过步数 K={self.grid.steps}")

        threads = _integer(d, "parallel.threads", allow_none=True)
        self.threads = resolve_threads(threads)
        self.reduction = _choice(d, "parallel.reduction", REDUCTIONS)

        self.gradcheck_probes = _integer(d, "gradcheck.probes")
        self.gradcheck_tolerance = _number(d, "gradcheck.tolerance")
        self.fd_step = _number(d, "gradcheck.fd_step")
        if self.gradcheck_tolerance <= 0 or self.fd_step <= 0:
            raise ConfigError("gradcheck.tolerance 与 gradcheck.fd_step 必须为正")

        self.sweep_epsilons = _float_list(d, "sweep.epsilons")
        self.sweep_deltas = _float_list(d, "sweep.deltas")
        interval = d["sweep"]["interval"]
        if interval is not None:
            values = _float_list(d, "sweep.interval")
            if len(values) != 2 or not values[0] < values[1]:
                raise ConfigError(f"sweep.interval 应为 [a, b] 且 a < b, 实际为 {interval!r}")
            interval = (values[0], values[1])
        self.sweep_interval: Optional[Tuple[float, float]] = interval

        if not isinstance(d["output_dir"], str) or not d["output_dir"]:
            raise ConfigError(f"配置项 output_dir 应为非空字符串, 实际为 {d['output_dir']!r}")
        self.output_dir = Path(d["output_dir"])

    def _box(self, path: str, dim: int) -> BoxSet:
        lower = _float_list(self.data, f"{path}.lower")
        upper = _float_list(self.data, f"{path}.upper")
        if len(lower) != dim or len(upper) != dim:
            raise ConfigError(f"{path} 维度应为 {dim}, 实际 lower={len(lower)}, upper={len(upper)}")
        try:
            return BoxSet(lower, upper)
        except ValueError as e:
            raise ConfigError(f"{path} 无效: {e}") from e

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """
        返回应用了覆盖项的新配置

        Args:
            overrides: seed / threads / scheme / output_dir / epsilon / delta，值为 None 的项忽略

        Returns:
            新的 ExperimentConfig
        """
        paths = {
            "seed": "seed",
            "threads": "parallel.threads",
            "scheme": "grid.scheme",
            "output_dir": "output_dir",
            "epsilon": "epsilon",
            "delta": "kernel.delta",
        }
        data = copy.deepcopy(self.data)
        for key, value in overrides.items():
            if key not in paths:
                raise ConfigError(f"不支持的覆盖项: {key}")
            if value is None:
                continue
            node = data
            parts = paths[key].split(".")
            for part in parts[:-1]:
                node = node[part]
            node[parts[-1]] = str(value) if key == "output_dir" else value
        return ExperimentConfig(data)

    def problem_size(self) -> int:
        size = self.N * self.grid.steps * self.system.m
        if self.solver.optimize_x0:
            size += self.N * self.system.d
        return size

    def flagged_choices(self) -> Dict[str, Any]:
        return {path: _lookup(self.data, path) for path in FLAGGED_CHOICES}

    def __repr__(self) -> str:
        return (f"ExperimentConfig(system={self.system.name}, N={self.N}, T={self.grid.T:g}, "
                f"K={self.grid.steps}, eps={self.epsilon:g}, delta={self.kernel.delta:g})")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    从 JSON 文件加载实验配置

    Args:
        path: 配置文件路径

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: 文件不存在、JSON 语法错误或内容无效
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"配置文件不存在: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件 JSON 解析失败: {path}: {e}") from e
    config = ExperimentConfig(data)
    logger.info(f"📋 已加载配置: {path} -> {config!r}")
    return config


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """规范化后的配置字典，ExperimentConfig(config_to_dict(c)) 与 c 等价"""
    return copy.deepcopy(config.data)
