"""
相互作用核模块
核 K_δ = η_δ * η_δ 为磨光子的自卷积：
  - gaussian: η_δ 为方差 δ² 的高斯，K_δ 有闭式
  - bump: η_δ 为紧支撑 bump 函数，K_δ 在 δ=1 处按半径制表后插值
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma

logger = logging.getLogger(__name__)

KERNEL_FAMILIES = ("gaussian", "bump")
BUMP_TABLE_NODES = 2048
BUMP_QUADRATURE_ORDER = 128


def _sphere_area(n: int) -> float:
    """R^{n+1} 中单位球面 S^n 的面积"""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / gamma((n + 1) / 2.0)


def _bump_profile(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_normalizer(d: int) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(BUMP_QUADRATURE_ORDER)
    r = 0.5 * (nodes + 1.0)
    mass = _sphere_area(d - 1) * 0.5 * np.sum(weights * _bump_profile(r) * r ** (d - 1))
    return 1.0 / float(mass)


@dataclass(frozen=True)
class _BumpTable:
    """δ=1 时 K_1(r) 在 [0, 2] 上的三次样条表"""

    spline: CubicSpline
    derivative: CubicSpline
    peak: float


def _bump_self_convolution(d: int, radii: np.ndarray) -> np.ndarray:
    """数值计算 (η*η)(r e1)，积分区域为两个单位球的交（透镜）"""
    c = _bump_normalizer(d)
    nodes, weights = np.polynomial.legendre.leggauss(BUMP_QUADRATURE_ORDER)
    values = np.zeros_like(radii)
    for idx, r in enumerate(radii):
        lo = r - 1.0
        if lo >= 1.0:
            continue
        s = lo + (1.0 - lo) * 0.5 * (nodes + 1.0)
        ws = (1.0 - lo) * 0.5 * weights
        if d == 1:
            values[idx] = np.sum(ws * c * _bump_profile(s) * c * _bump_profile(s - r))
            continue
        rho_max = np.sqrt(np.clip(np.minimum(1.0 - s * s, 1.0 - (s - r) ** 2), 0.0, None))
        rho = rho_max[:, None] * 0.5 * (nodes[None, :] + 1.0)
        wr = rho_max[:, None] * 0.5 * weights[None, :]
        f = (c * _bump_profile(np.sqrt(s[:, None] ** 2 + rho ** 2))
             * c * _bump_profile(np.sqrt((s[:, None] - r) ** 2 + rho ** 2)))
        inner = np.sum(wr * _sphere_area(d - 2) * rho ** (d - 2) * f, axis=1)
        values[idx] = np.sum(ws * inner)
    return values


@lru_cache(maxsize=None)
def _bump_table(d: int) -> _BumpTable:
    logger.info(f"🧮 制表 bump 自卷积核: d={d}, 节点数={BUMP_TABLE_NODES}")
    radii = np.linspace(0.0, 2.0, BUMP_TABLE_NODES)
    values = _bump_self_convolution(d, radii)
    values[-1] = 0.0
    spline = CubicSpline(radii, values, bc_type=((1, 0.0), (1, 0.0)))
    return _BumpTable(spline=spline, derivative=spline.derivative(), peak=float(values[0]))


@dataclass(frozen=True)
class KernelSpec:
    """
    核的族、带宽与维度

    Args:
        family: "gaussian" 或 "bump"
        delta: 带宽 δ > 0
        d: 状态维度
    """

    family: str = "gaussian"
    delta: float = 0.2
    d: int = 2
    _table: Optional[_BumpTable] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"不支持的核族: {self.family}, 可选: {list(KERNEL_FAMILIES)}")
        delta = float(self.delta)
        if not math.isfinite(delta) or delta <= 0:
            raise ValueError(f"核带宽 delta 必须为正, 实际为 {self.delta!r}")
        if isinstance(self.d, bool) or not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"核维度 d 必须是正整数, 实际为 {self.d!r}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "d", int(self.d))
        if self.family == "bump":
            object.__setattr__(self, "_table", _bump_table(self.d))

    @property
    def support_radius(self) -> float:
        """核支撑半径；高斯核为无穷"""
        return 2.0 * self.delta if self.family == "bump" else math.inf

    @property
    def peak(self) -> float:
        """K_δ(0)"""
        if self.family == "gaussian":
            return (4.0 * math.pi * self.delta ** 2) ** (-self.d / 2.0)
        return self.delta ** (-self.d) * self._table.peak


def _as_displacement(spec: KernelSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (spec.d,):
        raise ValueError(f"位移维度不匹配: 期望 d={spec.d}, 实际形状 {z.shape}")
    return z


def interaction(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    """
    计算 K_δ(z)

    Args:
        spec: 核参数
        z: 位移，形状 (..., d)

    Returns:
        核值，形状 (...)
    """
    z = _as_displacement(spec, z)
    r2 = np.sum(z * z, axis=-1)
    delta = spec.delta
    if spec.family == "gaussian":
        return (4.0 * math.pi * delta ** 2) ** (-spec.d / 2.0) * np.exp(-r2 / (4.0 * delta ** 2))
    s = np.sqrt(r2) / delta
    out = np.zeros_like(s)
    inside = s < 2.0
    out[inside] = np.maximum(spec._table.spline(s[inside]), 0.0) * delta ** (-spec.d)
    return out


def interaction_grad(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    """
    计算 ∇K_δ(z)

    Args:
        spec: 核参数
        z: 位移，形状 (..., d)

    Returns:
        梯度，形状 (..., d)；z=0 处为零
    """
    z = _as_displacement(spec, z)
    delta = spec.delta
    if spec.family == "gaussian":
        return (-1.0 / (2.0 * delta ** 2)) * z * interaction(spec, z)[..., None]
    r = np.sqrt(np.sum(z * z, axis=-1))
    s = r / delta
    dk_dr = np.zeros_like(r)
    inside = (s > 0.0) & (s < 2.0)
    dk_dr[inside] = spec._table.derivative(s[inside]) * delta ** (-spec.d - 1) / r[inside]
    return dk_dr[..., None] * z


def mollifier(spec: KernelSpec, y: np.ndarray) -> np.ndarray:
    """磨光子 η_δ(y)，满足 K_δ = η_δ * η_δ"""
    y = _as_displacement(spec, y)
    r2 = np.sum(y * y, axis=-1)
    delta = spec.delta
    if spec.family == "gaussian":
        return (2.0 * math.pi * delta ** 2) ** (-spec.d / 2.0) * np.exp(-r2 / (2.0 * delta ** 2))
    return delta ** (-spec.d) * _bump_normalizer(spec.d) * _bump_profile(np.sqrt(r2) / delta)


def gram_matrix(spec: KernelSpec, points: np.ndarray) -> np.ndarray:
    """点集的核矩阵 K_δ(x_i - x_j)，对称半正定"""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError(f"点集形状应为 (N, d), 实际为 {points.shape}")
    return interaction(spec, points[:, None, :] - points[None, :, :])
