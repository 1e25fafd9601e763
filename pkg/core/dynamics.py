"""
控制仿射系统定义模块
ẋ = f0(x) + Σ u_i f_i(x)，提供漂移场、控制场以及伴随反传所需的解析状态雅可比
内置 Van der Pol、阻尼摆、1D/2D 积分器等系统，可通过 register_system 扩展
"""

import logging
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Type

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoxSet:
    """轴对齐盒子集合，用于控制约束集 U 和初始集 Ω"""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError(f"BoxSet边界维度不一致: lower={lower.shape}, upper={upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("BoxSet边界必须是有限实数")
        if np.any(lower > upper):
            raise ValueError(f"BoxSet要求 lower <= upper, 实际 lower={lower.tolist()}, upper={upper.tolist()}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, dim: int, low: float = -1.0, high: float = 1.0) -> "BoxSet":
        """构造 [low, high]^dim 立方体"""
        return cls(np.full(dim, low), np.full(dim, high))

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """逐点判断是否位于盒子内（含边界），返回布尔数组"""
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """在盒子内均匀采样 size 个点，形状 (size, dim)"""
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def to_dict(self) -> Dict[str, List[float]]:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def project_box(p: np.ndarray, box: BoxSet) -> np.ndarray:
    """
    投影到轴对齐盒子（逐分量截断，即欧氏投影）

    Args:
        p: 形状 (..., dim) 的点或点集
        box: 目标盒子

    Returns:
        投影后的点，形状与 p 相同
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (box.dim,):
        raise ValueError(f"project_box维度不匹配: 点的最后一维 {p.shape[-1:]} vs 盒子维度 {box.dim}")
    return np.clip(p, box.lower, box.upper)


class ControlAffineSystem:
    """
    控制仿射系统基类

    子类需设置 name / d / m / default_params 并实现 drift、control_matrix、
    drift_jacobian；控制场依赖状态时还需实现 control_matrix_jacobian。
    所有方法按最后一维向量化，支持 (..., d) 的批量状态。
    """

    name: str = ""
    d: int = 0
    m: int = 0
    default_params: Mapping[str, float] = {}
    constant_control_fields: bool = True

    def __init__(self, **params: float):
        unknown = sorted(set(params) - set(self.default_params))
        if unknown:
            raise ValueError(
                f"系统 {self.name} 不支持参数 {unknown}, 可用参数: {sorted(self.default_params)}"
            )
        merged = dict(self.default_params)
        for key, value in params.items():
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"系统参数 {key} 必须是有限实数, 实际为 {value}")
            merged[key] = value
        self.params = MappingProxyType(merged)
        self._frozen = True

    def __setattr__(self, key, value):
        # 构造完成后只读，便于并行线程共享
        if getattr(self, "_frozen", False):
            raise AttributeError(f"{type(self).__name__} 构造后不可修改")
        super().__setattr__(key, value)

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{type(self).__name__}({params})"

    def drift(self, x: np.ndarray) -> np.ndarray:
        """漂移场 f0(x)，形状 (..., d)"""
        raise NotImplementedError

    def control_matrix(self, x: np.ndarray) -> np.ndarray:
        """控制场矩阵 G(x) = [f1 ... fm]，形状 (..., d, m)"""
        raise NotImplementedError

    def drift_jacobian(self, x: np.ndarray) -> np.ndarray:
        """∂f0/∂x，形状 (..., d, d)"""
        raise NotImplementedError

    def control_matrix_jacobian(self, x: np.ndarray) -> np.ndarray:
        """∂G_{jk}/∂x_l，形状 (..., d, m, d)；控制场为常数时恒为零"""
        return np.zeros(x.shape[:-1] + (self.d, self.m, self.d))


SYSTEM_REGISTRY: Dict[str, Type[ControlAffineSystem]] = {}


def register_system(cls: Type[ControlAffineSystem]) -> Type[ControlAffineSystem]:
    """类装饰器：把系统登记到注册表，配置文件按名称选择"""
    if not cls.name:
        raise ValueError(f"{cls.__name__} 缺少 name")
    if cls.name in SYSTEM_REGISTRY:
        raise ValueError(f"系统名称重复注册: {cls.name}")
    SYSTEM_REGISTRY[cls.name] = cls
    return cls


def make_system(name: str, params: Optional[Mapping[str, float]] = None) -> ControlAffineSystem:
    """
    按名称构造已注册系统

    Args:
        name: 注册名，如 "vanderpol"、"pendulum"
        params: 扁平的 参数名 -> 实数 映射，缺省项取系统默认值

    Returns:
        系统实例
    """
    try:
        cls = SYSTEM_REGISTRY[name]
    except KeyError:
        raise ValueError(f"未知系统: {name}, 可用系统: {available_systems()}") from None
    return cls(**dict(params or {}))


def available_systems() -> List[str]:
    return sorted(SYSTEM_REGISTRY)


@register_system
class VanDerPol(ControlAffineSystem):
    """受迫 Van der Pol 振子: ẋ = y, ẏ = μ(1 - x²)y - x + u"""

    name = "vanderpol"
    d = 2
    m = 1
    default_params = {"mu": 1.0}

    def drift(self, x):
        mu = self.params["mu"]
        p, v = x[..., 0], x[..., 1]
        return np.stack((v, mu * (1.0 - p * p) * v - p), axis=-1)

    def control_matrix(self, x):
        G = np.zeros(x.shape[:-1] + (2, 1))
        G[..., 1, 0] = 1.0
        return G

    def drift_jacobian(self, x):
        mu = self.params["mu"]
        p, v = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 * mu * p * v - 1.0
        J[..., 1, 1] = mu * (1.0 - p * p)
        return J


@register_system
class DampedPendulum(ControlAffineSystem):
    """受迫阻尼摆（单臂机器人）: ẋ = y, ẏ = -(g/l) sin x - β y + u"""

    name = "pendulum"
    d = 2
    m = 1
    default_params = {"g": 9.81, "l": 1.0, "beta": 0.1}

    def __init__(self, **params: float):
        super().__init__(**params)
        if self.params["l"] <= 0:
            raise ValueError(f"摆长 l 必须为正, 实际为 {self.params['l']}")

    def drift(self, x):
        g, l, beta = self.params["g"], self.params["l"], self.params["beta"]
        p, v = x[..., 0], x[..., 1]
        return np.stack((v, -(g / l) * np.sin(p) - beta * v), axis=-1)

    def control_matrix(self, x):
        G = np.zeros(x.shape[:-1] + (2, 1))
        G[..., 1, 0] = 1.0
        return G

    def drift_jacobian(self, x):
        g, l, beta = self.params["g"], self.params["l"], self.params["beta"]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -(g / l) * np.cos(x[..., 0])
        J[..., 1, 1] = -beta
        return J


@register_system
class Integrator1D(ControlAffineSystem):
    """单积分器 ẋ = u，可达集解析已知，用于收敛性检查"""

    name = "integrator_1d"
    d = 1
    m = 1

    def drift(self, x):
        return np.zeros_like(x)

    def control_matrix(self, x):
        return np.ones(x.shape[:-1] + (1, 1))

    def drift_jacobian(self, x):
        return np.zeros(x.shape[:-1] + (1, 1))


@register_system
class DoubleIntegrator(ControlAffineSystem):
    """双积分器 ẍ = u"""

    name = "double_integrator"
    d = 2
    m = 1

    def drift(self, x):
        return np.stack((x[..., 1], np.zeros_like(x[..., 0])), axis=-1)

    def control_matrix(self, x):
        G = np.zeros(x.shape[:-1] + (2, 1))
        G[..., 1, 0] = 1.0
        return G

    def drift_jacobian(self, x):
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        return J


@register_system
class Linear1D(ControlAffineSystem):
    """标量线性系统 ẋ = a·x + u"""

    name = "linear_1d"
    d = 1
    m = 1
    default_params = {"a": -0.5}

    def drift(self, x):
        return self.params["a"] * x

    def control_matrix(self, x):
        return np.ones(x.shape[:-1] + (1, 1))

    def drift_jacobian(self, x):
        return np.full(x.shape[:-1] + (1, 1), self.params["a"])


@register_system
class Unicycle(ControlAffineSystem):
    """运动学独轮车 (px, py, θ)，控制 (v, ω)；控制场依赖状态"""

    name = "unicycle"
    d = 3
    m = 2
    constant_control_fields = False

    def drift(self, x):
        return np.zeros_like(x)

    def control_matrix(self, x):
        theta = x[..., 2]
        G = np.zeros(x.shape[:-1] + (3, 2))
        G[..., 0, 0] = np.cos(theta)
        G[..., 1, 0] = np.sin(theta)
        G[..., 2, 1] = 1.0
        return G

    def drift_jacobian(self, x):
        return np.zeros(x.shape[:-1] + (3, 3))

    def control_matrix_jacobian(self, x):
        theta = x[..., 2]
        dG = np.zeros(x.shape[:-1] + (3, 2, 3))
        dG[..., 0, 0, 2] = -np.sin(theta)
        dG[..., 1, 0, 2] = np.cos(theta)
        return dG


def _check_dims(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1:] != (system.d,):
        raise ValueError(f"状态维度不匹配: 期望 d={system.d}, 实际形状 {x.shape}")
    if u.shape[-1:] != (system.m,):
        raise ValueError(f"控制维度不匹配: 期望 m={system.m}, 实际形状 {u.shape}")
    return x, u


def rhs(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """不做维度检查的 f(x, u)，供积分器内层循环使用"""
    return system.drift(x) + np.einsum("...ij,...j->...i", system.control_matrix(x), u)


def state_jacobian(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """不做维度检查的 ∂f/∂x(x, u)"""
    A = system.drift_jacobian(x)
    if not system.constant_control_fields:
        A = A + np.einsum("...jkl,...k->...jl", system.control_matrix_jacobian(x), u)
    return A


def eval_rhs(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    计算右端项 f0(x) + Σ u_i f_i(x)

    Args:
        system: 控制仿射系统
        x: 状态，形状 (..., d)
        u: 控制，形状 (..., m)

    Returns:
        ẋ，形状 (..., d)
    """
    x, u = _check_dims(system, x, u)
    return rhs(system, x, u)


def eval_state_jacobian(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    计算状态雅可比 ∂f0/∂x + Σ u_i ∂f_i/∂x

    Args:
        system: 控制仿射系统
        x: 状态，形状 (..., d)
        u: 控制，形状 (..., m)

    Returns:
        雅可比矩阵，形状 (..., d, d)
    """
    x, u = _check_dims(system, x, u)
    return state_jacobian(system, x, u)


def finite_difference_jacobian(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """中心差分近似 ∂f/∂x，用于校验解析雅可比"""
    x, u = _check_dims(system, x, u)
    J = np.empty((system.d, system.d))
    for col in range(system.d):
        e = np.zeros(system.d)
        e[col] = step
        J[:, col] = (rhs(system, x + e, u) - rhs(system, x - e, u)) / (2.0 * step)
    return J


def linear_growth_constant(system: ControlAffineSystem, box: BoxSet,
                           samples: int = 1000, seed: int = 0) -> float:
    """
    在给定盒子上估计线性增长常数 C，使 ‖f_i(x)‖ <= C(1 + ‖x‖) 对 i=0..m 成立

    Args:
        system: 控制仿射系统
        box: 检查区域（状态空间）
        samples: 采样点数
        seed: 随机种子

    Returns:
        采样点上的最大比值
    """
    if box.dim != system.d:
        raise ValueError(f"检查区域维度 {box.dim} 与系统状态维度 {system.d} 不一致")
    rng = np.random.default_rng(seed)
    x = np.vstack([box.sample(rng, samples), box.lower, box.upper])
    denom = 1.0 + np.linalg.norm(x, axis=-1)
    norms = [np.linalg.norm(system.drift(x), axis=-1)]
    G = system.control_matrix(x)
    norms.extend(np.linalg.norm(G[..., i], axis=-1) for i in range(system.m))
    C = float(max(np.max(n / denom) for n in norms))
    logger.debug(f"线性增长常数估计: system={system.name}, C={C:.6g}")
    return C
