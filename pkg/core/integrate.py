"""
时间离散与前向/伴随积分模块
分段常值控制下的显式 Euler 与经典 RK4，以及与之逐步对应的离散伴随反传
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from core.dynamics import BoxSet, ControlAffineSystem, project_box, rhs, state_jacobian
from core.parallel import map_chunks

logger = logging.getLogger(__name__)

SCHEMES = ("euler", "rk4")


class DivergenceError(RuntimeError):
    """积分过程中出现非有限状态"""

    def __init__(self, step: int, particles: Iterable[int] = (), message: Optional[str] = None):
        self.step = int(step)
        self.particles = tuple(int(i) for i in particles)
        super().__init__(message or f"轨迹发散: 第 {self.step} 步出现非有限状态, 粒子 {list(self.particles)}")


def check_scheme(scheme: str) -> str:
    if scheme not in SCHEMES:
        raise ValueError(f"不支持的积分格式: {scheme}, 可选: {list(SCHEMES)}")
    return scheme


@dataclass(frozen=True)
class TimeGrid:
    """[0, T] 上的 K 步均匀网格"""

    T: float
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ValueError(f"steps 必须是正整数, 实际为 {self.steps!r}")
        T = float(self.T)
        if not math.isfinite(T) or T <= 0:
            raise ValueError(f"时间区间 T 必须为正, 实际为 {self.T!r}")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass(frozen=True, eq=False)
class DiscretizedControl:
    """单个粒子的分段常值控制，values[k] 作用于 [t_k, t_{k+1})"""

    values: np.ndarray
    box: BoxSet

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.box.dim:
            raise ValueError(f"控制形状应为 (K, {self.box.dim}), 实际为 {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def m(self) -> int:
        return int(self.values.shape[1])

    def is_feasible(self) -> bool:
        return bool(np.all(self.box.contains(self.values)))

    def projected(self) -> "DiscretizedControl":
        return DiscretizedControl(project_box(self.values, self.box), self.box)

    @classmethod
    def constant(cls, value, steps: int, box: BoxSet) -> "DiscretizedControl":
        return cls(np.tile(np.asarray(value, dtype=float).reshape(1, -1), (steps, 1)), box)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """离散轨迹，states[k] 是 t_k 时刻的状态"""

    states: np.ndarray
    scheme: str

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def steps(self) -> int:
        return int(self.states.shape[0]) - 1


@dataclass(frozen=True, eq=False)
class AdjointSweep:
    """
    批量伴随反传结果

    costates: (n, K+1, d)，costates[:, k] 是 ∂Φ/∂x_k
    control_sensitivity: (n, K, m)，∂Φ/∂u_k
    """

    costates: np.ndarray
    control_sensitivity: np.ndarray


def _rk4_stages(system, x, u, dt):
    k1 = rhs(system, x, u)
    y2 = x + (0.5 * dt) * k1
    k2 = rhs(system, y2, u)
    y3 = x + (0.5 * dt) * k2
    k3 = rhs(system, y3, u)
    y4 = x + dt * k3
    k4 = rhs(system, y4, u)
    return (x, y2, y3, y4), (k1, k2, k3, k4)


def step_forward(system: ControlAffineSystem, x: np.ndarray, u: np.ndarray, dt: float,
                 scheme: str = "rk4") -> np.ndarray:
    """单步推进，控制在步内冻结"""
    if scheme == "euler":
        return x + dt * rhs(system, x, u)
    _, (k1, k2, k3, k4) = _rk4_stages(system, x, u, dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _vjp(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    # Mᵀ v，逐粒子
    return np.einsum("...ij,...i->...j", M, v)


def _check_batch(system, x0s, controls, grid):
    x0s = np.asarray(x0s, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] != system.d:
        raise ValueError(f"初始状态形状应为 (N, {system.d}), 实际为 {x0s.shape}")
    if controls.shape != (x0s.shape[0], grid.steps, system.m):
        raise ValueError(
            f"控制形状应为 ({x0s.shape[0]}, {grid.steps}, {system.m}), 实际为 {controls.shape}"
        )
    if not np.all(np.isfinite(x0s)):
        raise ValueError("初始状态必须是有限实数")
    return x0s, controls


def _forward_chunk(system, x0s, controls, grid, scheme, store, offset):
    dt = grid.dt
    x = x0s.copy()
    states = np.empty((x.shape[0], grid.steps + 1, x.shape[1])) if store else None
    if store:
        states[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.steps):
            x = step_forward(system, x, controls[:, k], dt, scheme)
            bad = ~np.all(np.isfinite(x), axis=1)
            if bad.any():
                raise DivergenceError(k + 1, offset + np.flatnonzero(bad))
            if store:
                states[:, k + 1] = x
    return states if store else x


def integrate_batch(system: ControlAffineSystem, x0s: np.ndarray, controls: np.ndarray,
                    grid: TimeGrid, scheme: str = "rk4", store: bool = True,
                    threads: int = 1) -> np.ndarray:
    """
    批量前向积分，粒子间相互独立

    Args:
        system: 控制仿射系统
        x0s: 初始状态 (N, d)
        controls: 分段常值控制 (N, K, m)
        grid: 时间网格
        scheme: "euler" 或 "rk4"
        store: True 返回完整轨迹 (N, K+1, d)，否则只返回终端状态 (N, d)
        threads: 粒子切块并行的线程数

    Returns:
        轨迹或终端状态

    Raises:
        DivergenceError: 任一粒子出现非有限状态
    """
    check_scheme(scheme)
    x0s, controls = _check_batch(system, x0s, controls, grid)
    parts = map_chunks(
        lambda s: _forward_chunk(system, x0s[s], controls[s], grid, scheme, store, s.start),
        x0s.shape[0], threads,
    )
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)


def _adjoint_chunk(system, states, controls, lam_T, grid, scheme):
    dt = grid.dt
    n, K = controls.shape[0], controls.shape[1]
    costates = np.empty((n, K + 1, system.d))
    sens = np.empty((n, K, system.m))
    lam = lam_T.copy()
    costates[:, K] = lam
    for k in range(K - 1, -1, -1):
        x, u = states[:, k], controls[:, k]
        if scheme == "euler":
            sens[:, k] = dt * _vjp(system.control_matrix(x), lam)
            lam = lam + dt * _vjp(state_jacobian(system, x, u), lam)
        else:
            ys, _ = _rk4_stages(system, x, u, dt)
            # 逆序穿过 y4 = x + dt·k3, y3 = x + dt/2·k2, y2 = x + dt/2·k1
            bar_k = (dt / 6.0) * lam
            bar_y = _vjp(state_jacobian(system, ys[3], u), bar_k)
            s = _vjp(system.control_matrix(ys[3]), bar_k)
            bar_x = lam + bar_y
            for stage, feed in ((2, dt), (1, 0.5 * dt), (0, 0.5 * dt)):
                weight = dt / 6.0 if stage == 0 else dt / 3.0
                bar_k = weight * lam + feed * bar_y
                bar_y = _vjp(state_jacobian(system, ys[stage], u), bar_k)
                s = s + _vjp(system.control_matrix(ys[stage]), bar_k)
                bar_x = bar_x + bar_y
            sens[:, k] = s
            lam = bar_x
        costates[:, k] = lam
    return AdjointSweep(costates, sens)


def adjoint_batch(system: ControlAffineSystem, states: np.ndarray, controls: np.ndarray,
                  lam_T: np.ndarray, grid: TimeGrid, scheme: str = "rk4",
                  threads: int = 1) -> AdjointSweep:
    """
    批量离散伴随反传：给出 Φ(x_K) 对每步状态与控制的精确导数

    Args:
        system: 控制仿射系统
        states: 前向轨迹 (N, K+1, d)，须由同一 scheme 生成
        controls: 控制 (N, K, m)
        lam_T: 终端协态 ∂Φ/∂x_K，(N, d)
        grid: 时间网格
        scheme: 与前向一致的积分格式
        threads: 粒子切块并行的线程数

    Returns:
        AdjointSweep
    """
    check_scheme(scheme)
    states = np.asarray(states, dtype=float)
    lam_T = np.asarray(lam_T, dtype=float)
    n = states.shape[0]
    if states.shape != (n, grid.steps + 1, system.d):
        raise ValueError(f"轨迹形状应为 (N, {grid.steps + 1}, {system.d}), 实际为 {states.shape}")
    if lam_T.shape != (n, system.d):
        raise ValueError(f"终端协态形状应为 ({n}, {system.d}), 实际为 {lam_T.shape}")
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (n, grid.steps, system.m):
        raise ValueError(f"控制形状应为 ({n}, {grid.steps}, {system.m}), 实际为 {controls.shape}")
    parts = map_chunks(
        lambda s: _adjoint_chunk(system, states[s], controls[s], lam_T[s], grid, scheme),
        n, threads,
    )
    if len(parts) == 1:
        return parts[0]
    return AdjointSweep(
        np.concatenate([p.costates for p in parts], axis=0),
        np.concatenate([p.control_sensitivity for p in parts], axis=0),
    )


def _check_single(system, x0, u, grid) -> Tuple[np.ndarray, np.ndarray]:
    if u.m != system.m:
        raise ValueError(f"控制维度 {u.m} 与系统 m={system.m} 不一致")
    if u.steps != grid.steps:
        raise ValueError(f"控制步数 {u.steps} 与时间网格 K={grid.steps} 不一致")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.d,):
        raise ValueError(f"初始状态形状应为 ({system.d},), 实际为 {x0.shape}")
    return x0, u.values


def integrate_forward(system: ControlAffineSystem, x0: np.ndarray, u: DiscretizedControl,
                      grid: TimeGrid, scheme: str = "rk4") -> Trajectory:
    """单粒子前向积分，返回 K+1 个状态"""
    x0, values = _check_single(system, x0, u, grid)
    states = integrate_batch(system, x0[None], values[None], grid, scheme)
    return Trajectory(states[0], scheme)


def endpoint(system: ControlAffineSystem, x0: np.ndarray, u: DiscretizedControl,
             grid: TimeGrid, scheme: str = "rk4") -> np.ndarray:
    """终端状态 x_K"""
    x0, values = _check_single(system, x0, u, grid)
    return integrate_batch(system, x0[None], values[None], grid, scheme, store=False)[0]


def integrate_adjoint(system: ControlAffineSystem, traj: Trajectory, u: DiscretizedControl,
                      lam_T: np.ndarray, grid: TimeGrid, scheme: str = "rk4") -> np.ndarray:
    """
    单粒子伴随反传

    Args:
        system: 控制仿射系统
        traj: integrate_forward 的结果
        u: 生成该轨迹的控制
        lam_T: 终端协态 (d,)
        grid: 时间网格
        scheme: 须与 traj.scheme 一致

    Returns:
        协态序列 (K+1, d)
    """
    if traj.scheme != scheme:
        raise ValueError(f"伴随格式 {scheme} 与前向轨迹格式 {traj.scheme} 不一致")
    _, values = _check_single(system, traj.states[0], u, grid)
    sweep = adjoint_batch(system, traj.states[None], values[None], np.asarray(lam_T, dtype=float)[None],
                          grid, scheme)
    return sweep.costates[0]
