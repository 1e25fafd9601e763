"""
粒子目标函数模块
ROT_{ε,δ,N}(x0, u) = (1/N)ΣΣ‖u_i[k]‖²dt + (1/(N²ε)) Σ_i Σ_j K_δ(x_i(T) - x_j(T))
梯度通过离散伴随计算，与离散化后的目标函数精确一致
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.dynamics import BoxSet, ControlAffineSystem
from core.integrate import (
    DiscretizedControl,
    DivergenceError,
    TimeGrid,
    adjoint_batch,
    check_scheme,
    integrate_batch,
)
from core.kernel import KernelSpec, interaction, interaction_grad
from core.parallel import map_chunks

logger = logging.getLogger(__name__)

REDUCTIONS = ("deterministic", "fast")


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N 个粒子的初始状态与控制"""

    x0s: np.ndarray
    controls: np.ndarray
    omega: BoxSet
    u_box: BoxSet

    def __post_init__(self):
        x0s = np.array(self.x0s, dtype=float)
        controls = np.array(self.controls, dtype=float)
        if x0s.ndim != 2 or x0s.shape[0] < 1:
            raise ValueError(f"初始状态形状应为 (N, d) 且 N >= 1, 实际为 {x0s.shape}")
        if controls.ndim != 3 or controls.shape[0] != x0s.shape[0]:
            raise ValueError(f"控制形状应为 ({x0s.shape[0]}, K, m), 实际为 {controls.shape}")
        if self.omega.dim != x0s.shape[1]:
            raise ValueError(f"初始集维度 {self.omega.dim} 与状态维度 {x0s.shape[1]} 不一致")
        if self.u_box.dim != controls.shape[2]:
            raise ValueError(f"控制约束维度 {self.u_box.dim} 与控制维度 {controls.shape[2]} 不一致")
        x0s.setflags(write=False)
        controls.setflags(write=False)
        object.__setattr__(self, "x0s", x0s)
        object.__setattr__(self, "controls", controls)

    @property
    def N(self) -> int:
        return int(self.x0s.shape[0])

    @property
    def d(self) -> int:
        return int(self.x0s.shape[1])

    @property
    def K(self) -> int:
        return int(self.controls.shape[1])

    @property
    def m(self) -> int:
        return int(self.controls.shape[2])

    def is_feasible(self) -> bool:
        return bool(np.all(self.omega.contains(self.x0s)) and np.all(self.u_box.contains(self.controls)))

    def check_feasible(self):
        if not self.is_feasible():
            raise ValueError("粒子集合不可行: 初始状态须在 Ω 内, 控制须在 U 内")

    def control(self, i: int) -> DiscretizedControl:
        return DiscretizedControl(self.controls[i], self.u_box)

    def replace(self, x0s: Optional[np.ndarray] = None,
                controls: Optional[np.ndarray] = None) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.x0s if x0s is None else x0s,
            self.controls if controls is None else controls,
            self.omega, self.u_box,
        )

    def permuted(self, order: Sequence[int]) -> "ParticleEnsemble":
        order = np.asarray(order)
        return self.replace(self.x0s[order], self.controls[order])

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.x0s.tobytes())
        h.update(self.controls.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ObjectiveBreakdown:
    control_energy: float
    interaction_energy: float
    total: float
    epsilon: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise ValueError(f"熵正则参数 epsilon 必须为正, 实际为 {epsilon!r}")
    return epsilon


def control_energy(controls: np.ndarray, grid: TimeGrid) -> float:
    """(1/N) Σ_i Σ_k ‖u_i[k]‖² dt，求和与粒子顺序无关"""
    controls = np.asarray(controls, dtype=float)
    return math.fsum((controls * controls).ravel()) * grid.dt / controls.shape[0]


def interaction_energy(points: np.ndarray, kernel: KernelSpec, epsilon: float,
                       reduction: str = "deterministic", threads: int = 1) -> float:
    """
    (1/(N²ε)) Σ_i Σ_j K_δ(x_i - x_j)

    Args:
        points: 终端点 (N, d)
        kernel: 核参数
        epsilon: 熵正则参数
        reduction: "deterministic" 做与顺序无关的精确舍入求和；"fast" 按切块直接累加
        threads: 核值计算的线程数

    Returns:
        相互作用能
    """
    epsilon = _check_epsilon(epsilon)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != kernel.d:
        raise ValueError(f"点集形状应为 (N, {kernel.d}), 实际为 {points.shape}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"不支持的归约方式: {reduction}, 可选: {list(REDUCTIONS)}")
    N = points.shape[0]
    i, j = np.triu_indices(N, k=1)
    if reduction == "deterministic":
        values = map_chunks(lambda s: interaction(kernel, points[i[s]] - points[j[s]]), len(i), threads)
        pair_sum = math.fsum(np.concatenate(values)) if len(i) else 0.0
    else:
        pair_sum = float(sum(map_chunks(
            lambda s: float(np.sum(interaction(kernel, points[i[s]] - points[j[s]]))), len(i), threads,
        )))
    return (N * kernel.peak + 2.0 * pair_sum) / (N * N * epsilon)


def interaction_terminal_gradient(points: np.ndarray, kernel: KernelSpec, epsilon: float) -> np.ndarray:
    """相互作用能对终端点的梯度 (2/(N²ε)) Σ_j ∇K_δ(x_i - x_j)"""
    epsilon = _check_epsilon(epsilon)
    points = np.asarray(points, dtype=float)
    N = points.shape[0]
    i, j = np.triu_indices(N, k=1)
    g = interaction_grad(kernel, points[i] - points[j])
    out = np.zeros_like(points)
    np.add.at(out, i, g)
    np.add.at(out, j, -g)
    return out * (2.0 / (N * N * epsilon))


class ParticleObjective:
    """
    绑定系统、时间网格、核与 ε 的目标函数

    最近一次前向轨迹按粒子集合指纹缓存，evaluate 之后紧接 gradient 不会重复积分。
    """

    def __init__(self, system: ControlAffineSystem, grid: TimeGrid, kernel: KernelSpec,
                 epsilon: float, scheme: str = "rk4", threads: int = 1,
                 reduction: str = "deterministic"):
        if kernel.d != system.d:
            raise ValueError(f"核维度 {kernel.d} 与系统状态维度 {system.d} 不一致")
        if reduction not in REDUCTIONS:
            raise ValueError(f"不支持的归约方式: {reduction}, 可选: {list(REDUCTIONS)}")
        self.system = system
        self.grid = grid
        self.kernel = kernel
        self.epsilon = _check_epsilon(epsilon)
        self.scheme = check_scheme(scheme)
        self.threads = threads
        self.reduction = reduction
        self._cached_key: Optional[str] = None
        self._cached_states: Optional[np.ndarray] = None

    def _check_ensemble(self, ens: ParticleEnsemble):
        if ens.d != self.system.d or ens.m != self.system.m or ens.K != self.grid.steps:
            raise ValueError(
                f"粒子集合形状 (d={ens.d}, K={ens.K}, m={ens.m}) 与问题 "
                f"(d={self.system.d}, K={self.grid.steps}, m={self.system.m}) 不一致"
            )

    def trajectories(self, ens: ParticleEnsemble) -> np.ndarray:
        """全部粒子的前向轨迹 (N, K+1, d)"""
        self._check_ensemble(ens)
        key = ens.fingerprint()
        if key != self._cached_key:
            try:
                states = integrate_batch(self.system, ens.x0s, ens.controls, self.grid,
                                         self.scheme, threads=self.threads)
            except DivergenceError as e:
                logger.warning(f"⚠️ 前向积分发散: 第 {e.step} 步, 粒子 {list(e.particles)[:10]}")
                raise
            self._cached_key, self._cached_states = key, states
        return self._cached_states

    def terminal_points(self, ens: ParticleEnsemble) -> np.ndarray:
        return self.trajectories(ens)[:, -1].copy()

    def evaluate(self, ens: ParticleEnsemble) -> ObjectiveBreakdown:
        """计算目标函数及其两部分"""
        terminal = self.trajectories(ens)[:, -1]
        ce = control_energy(ens.controls, self.grid)
        ie = interaction_energy(terminal, self.kernel, self.epsilon, self.reduction, self.threads)
        return ObjectiveBreakdown(control_energy=ce, interaction_energy=ie, total=ce + ie,
                                   epsilon=self.epsilon)

    def gradient(self, ens: ParticleEnsemble) -> Tuple[np.ndarray, np.ndarray]:
        """
        离散目标函数的精确梯度

        Args:
            ens: 粒子集合

        Returns:
            (对控制的梯度 (N, K, m), 对初始状态的梯度 (N, d))
        """
        states = self.trajectories(ens)
        lam_T = interaction_terminal_gradient(states[:, -1], self.kernel, self.epsilon)
        sweep = adjoint_batch(self.system, states, ens.controls, lam_T, self.grid,
                              self.scheme, threads=self.threads)
        grad_u = ens.controls * (2.0 * self.grid.dt / ens.N) + sweep.control_sensitivity
        return grad_u, sweep.costates[:, 0].copy()


def evaluate(ens: ParticleEnsemble, system: ControlAffineSystem, grid: TimeGrid,
             kernel: KernelSpec, epsilon: float, scheme: str = "rk4") -> ObjectiveBreakdown:
    """便捷函数：一次性计算目标函数"""
    return ParticleObjective(system, grid, kernel, epsilon, scheme).evaluate(ens)


def gradient(ens: ParticleEnsemble, system: ControlAffineSystem, grid: TimeGrid,
             kernel: KernelSpec, epsilon: float, scheme: str = "rk4") -> Tuple[np.ndarray, np.ndarray]:
    """便捷函数：一次性计算梯度"""
    return ParticleObjective(system, grid, kernel, epsilon, scheme).gradient(ens)


@dataclass
class GradientCheck:
    """有限差分抽检结果"""

    coordinates: List[int]
    analytic: List[float]
    finite_difference: List[float]
    errors: List[float]

    @property
    def max_rel_error(self) -> float:
        return max(self.errors) if self.errors else 0.0


def finite_difference_check(objective: ParticleObjective, ens: ParticleEnsemble,
                            probes: int = 50, fd_step: float = 1e-5, seed: int = 0,
                            include_x0: bool = True, perturbation: float = 0.0) -> GradientCheck:
    """
    在随机抽取的坐标上比较伴随梯度与中心差分

    坐标按 (控制展平, 初始状态展平) 的顺序编号。相对误差为
    |g - fd| / max(|g|, |fd|, floor)，floor 取抽检坐标中最大梯度幅值的 1%。

    Args:
        objective: 目标函数
        ens: 检查点
        probes: 抽检坐标数
        fd_step: 差分步长
        seed: 抽样种子
        include_x0: 是否抽检初始状态坐标
        perturbation: 加到解析梯度上的偏移，用于验证检查本身能发现错误

    Returns:
        GradientCheck
    """
    grad_u, grad_x0 = objective.gradient(ens)
    flat_grad = np.concatenate([grad_u.ravel(), grad_x0.ravel()]) if include_x0 else grad_u.ravel()
    flat_grad = flat_grad + perturbation
    n_u = ens.controls.size
    rng = np.random.default_rng(seed)
    coords = np.sort(rng.choice(flat_grad.size, size=min(probes, flat_grad.size), replace=False))

    def total_at(coord: int, shift: float) -> float:
        controls = ens.controls.copy()
        x0s = ens.x0s.copy()
        if coord < n_u:
            controls.reshape(-1)[coord] += shift
        else:
            x0s.reshape(-1)[coord - n_u] += shift
        return objective.evaluate(ens.replace(x0s, controls)).total

    fd = np.array([(total_at(c, fd_step) - total_at(c, -fd_step)) / (2.0 * fd_step) for c in coords])
    g = flat_grad[coords]
    floor = 1e-2 * float(np.max(np.abs(g))) if g.size else 0.0
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), max(floor, np.finfo(float).tiny))
    errors = np.abs(g - fd) / denom
    return GradientCheck(
        coordinates=coords.tolist(),
        analytic=g.tolist(),
        finite_difference=fd.tolist(),
        errors=errors.tolist(),
    )
