"""
投影梯度优化模块
在 Ω^N × U^{N·K} 上对 ROT 目标做带 Armijo 回溯的投影梯度下降
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from core.dynamics import BoxSet, ControlAffineSystem, project_box
from core.integrate import DivergenceError, TimeGrid
from core.kernel import KernelSpec
from core.objective import ObjectiveBreakdown, ParticleEnsemble, ParticleObjective

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("uniform_random", "zero_control")
METRICS = ("euclidean", "l2")
STATUSES = ("converged_grad", "converged_obj", "max_iters", "stalled")


@dataclass(frozen=True)
class SolverConfig:
    """
    投影梯度求解参数

    metric 决定下降方向的度量：
      - "euclidean": 直接使用坐标梯度，即 u <- Π_U(u - α∇_u J)
      - "l2": 按 L²(0,T) 与 (1/N) 加权内积的 Riesz 表示缩放梯度（控制乘 N/dt，初始状态乘 N）；
        相互作用项刚度大时 step0=1 的首步会把控制推到盒约束边界
    tol_grad 为 None 时取 1e-6·sqrt(问题规模)
    """

    max_iters: int = 200
    step0: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    tol_grad: Optional[float] = None
    tol_obj: float = 1e-10
    optimize_x0: bool = True
    seed: int = 0
    max_backtracks: int = 40
    metric: str = "euclidean"
    warm_start: bool = True
    log_every: int = 10

    def __post_init__(self):
        if isinstance(self.max_iters, bool) or not isinstance(self.max_iters, int) or self.max_iters < 0:
            raise ValueError(f"max_iters 必须是非负整数, 实际为 {self.max_iters!r}")
        if not self.step0 > 0:
            raise ValueError(f"step0 必须为正, 实际为 {self.step0!r}")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c 必须在 (0, 1) 内, 实际为 {self.armijo_c!r}")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"backtrack 必须在 (0, 1) 内, 实际为 {self.backtrack!r}")
        if self.tol_grad is not None and not self.tol_grad >= 0:
            raise ValueError(f"tol_grad 必须非负, 实际为 {self.tol_grad!r}")
        if not self.tol_obj >= 0:
            raise ValueError(f"tol_obj 必须非负, 实际为 {self.tol_obj!r}")
        if isinstance(self.max_backtracks, bool) or not isinstance(self.max_backtracks, int) or self.max_backtracks < 1:
            raise ValueError(f"max_backtracks 必须是正整数, 实际为 {self.max_backtracks!r}")
        if self.metric not in METRICS:
            raise ValueError(f"不支持的度量: {self.metric}, 可选: {list(METRICS)}")
        if isinstance(self.log_every, bool) or not isinstance(self.log_every, int) or self.log_every < 1:
            raise ValueError(f"log_every 必须是正整数, 实际为 {self.log_every!r}")

    def grad_tolerance(self, problem_size: int) -> float:
        if self.tol_grad is not None:
            return float(self.tol_grad)
        return 1e-6 * math.sqrt(problem_size)


@dataclass(frozen=True)
class IterationRecord:
    """一次被接受的迭代"""

    iter: int
    total: float
    control_energy: float
    interaction_energy: float
    step: float
    grad_norm: float
    armijo_bound: float = 0.0
    backtracks: int = 0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class SolveResult:
    ensemble: ParticleEnsemble
    history: List[IterationRecord]
    status: str
    breakdown: ObjectiveBreakdown
    initial: ObjectiveBreakdown
    grad_norm: float = math.nan
    evaluations: int = 0
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history)


def init_ensemble(system: ControlAffineSystem, grid: TimeGrid, omega: BoxSet, u_box: BoxSet,
                  N: int, strategy: str = "uniform_random", seed: int = 0) -> ParticleEnsemble:
    """
    初始化粒子集合；初始状态总是从 Ω 均匀采样

    Args:
        system: 控制仿射系统
        grid: 时间网格
        omega: 初始集
        u_box: 控制约束集
        N: 粒子数
        strategy: "uniform_random" 控制逐步从 U 均匀采样；"zero_control" 取 0 在 U 上的投影
        seed: 随机种子，相同输入得到逐位相同的结果

    Returns:
        可行的粒子集合
    """
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"粒子数 N 必须是正整数, 实际为 {N!r}")
    if strategy not in INIT_STRATEGIES:
        raise ValueError(f"不支持的初始化策略: {strategy}, 可选: {list(INIT_STRATEGIES)}")
    if omega.dim != system.d or u_box.dim != system.m:
        raise ValueError(
            f"约束集维度 (Ω={omega.dim}, U={u_box.dim}) 与系统 (d={system.d}, m={system.m}) 不一致"
        )
    rng = np.random.default_rng(seed)
    x0s = omega.sample(rng, int(N))
    if strategy == "uniform_random":
        controls = rng.uniform(u_box.lower, u_box.upper, size=(int(N), grid.steps, system.m))
    else:
        controls = project_box(np.zeros((int(N), grid.steps, system.m)), u_box)
    return ParticleEnsemble(x0s, controls, omega, u_box)


class ProjectedGradientSolver:
    """
    投影梯度下降求解器

    每次迭代：计算梯度 → 沿投影路径回溯直到满足
    J(new) <= J(old) + c·<g, new - old>，连续 max_backtracks 次失败则判定停滞。
    """

    def __init__(self, objective: ParticleObjective, config: Optional[SolverConfig] = None):
        self.objective = objective
        self.config = config or SolverConfig()

    def _scales(self, ens: ParticleEnsemble):
        if self.config.metric == "l2":
            return ens.N / self.objective.grid.dt, float(ens.N)
        return 1.0, 1.0

    def run(self, ens0: ParticleEnsemble) -> SolveResult:
        """
        从 ens0 出发求解

        Args:
            ens0: 可行的初始粒子集合

        Returns:
            SolveResult，history 只记录被接受的迭代，目标值单调不增
        """
        cfg = self.config
        ens0.check_feasible()
        objective = self.objective
        scale_u, scale_x = self._scales(ens0)
        size = ens0.controls.size + (ens0.x0s.size if cfg.optimize_x0 else 0)
        tol_grad = cfg.grad_tolerance(size)

        ens = ens0
        current = objective.evaluate(ens)
        initial = current
        evaluations = 1
        history: List[IterationRecord] = []
        status = "max_iters"
        grad_norm = math.nan
        alpha_prev = cfg.step0
        logger.info(f"🚀 开始优化: N={ens.N}, K={ens.K}, 初始目标={current.total:.6e}, tol_grad={tol_grad:.3e}")

        for it in range(1, cfg.max_iters + 1):
            grad_u, grad_x = objective.gradient(ens)
            dir_u = scale_u * grad_u
            pg_u = ens.controls - project_box(ens.controls - dir_u, ens.u_box)
            sq = float(np.sum(pg_u * pg_u))
            if cfg.optimize_x0:
                dir_x = scale_x * grad_x
                pg_x = ens.x0s - project_box(ens.x0s - dir_x, ens.omega)
                sq += float(np.sum(pg_x * pg_x))
            grad_norm = math.sqrt(sq)
            if grad_norm <= tol_grad:
                status = "converged_grad"
                break

            alpha = min(cfg.step0, alpha_prev / cfg.backtrack) if cfg.warm_start else cfg.step0
            accepted = None
            for bt in range(cfg.max_backtracks + 1):
                new_u = project_box(ens.controls - alpha * dir_u, ens.u_box)
                new_x = project_box(ens.x0s - alpha * dir_x, ens.omega) if cfg.optimize_x0 else ens.x0s
                slope = float(np.vdot(grad_u, new_u - ens.controls))
                if cfg.optimize_x0:
                    slope += float(np.vdot(grad_x, new_x - ens.x0s))
                trial_ens = ens.replace(new_x, new_u)
                try:
                    trial = objective.evaluate(trial_ens)
                    evaluations += 1
                except DivergenceError:
                    trial = None
                if trial is not None and trial.total <= current.total + cfg.armijo_c * slope:
                    accepted = (trial_ens, trial, bt, -cfg.armijo_c * slope)
                    break
                alpha *= cfg.backtrack

            if accepted is None:
                status = "stalled"
                logger.warning(f"⚠️ 线搜索连续 {cfg.max_backtracks} 次回溯失败, 第 {it} 次迭代停止")
                break

            trial_ens, trial, backtracks, bound = accepted
            decrease = current.total - trial.total
            ens, current, alpha_prev = trial_ens, trial, alpha
            history.append(IterationRecord(
                iter=it,
                total=trial.total,
                control_energy=trial.control_energy,
                interaction_energy=trial.interaction_energy,
                step=alpha,
                grad_norm=grad_norm,
                armijo_bound=bound,
                backtracks=backtracks,
            ))
            if it % cfg.log_every == 0:
                logger.info(
                    f"📉 迭代 {it}: 目标={trial.total:.6e} (控制={trial.control_energy:.4e}, "
                    f"相互作用={trial.interaction_energy:.4e}), 步长={alpha:.3e}, |PG|={grad_norm:.3e}"
                )
            if decrease <= cfg.tol_obj * max(abs(current.total), np.finfo(float).tiny):
                status = "converged_obj"
                break

        logger.info(f"✅ 优化结束: 状态={status}, 迭代={len(history)}, 目标={current.total:.6e}")
        return SolveResult(
            ensemble=ens,
            history=history,
            status=status,
            breakdown=current,
            initial=initial,
            grad_norm=grad_norm,
            evaluations=evaluations,
        )


def solve(ens0: ParticleEnsemble, system: ControlAffineSystem, grid: TimeGrid, kernel: KernelSpec,
          epsilon: float, config: Optional[SolverConfig] = None, scheme: str = "rk4",
          threads: int = 1, reduction: str = "deterministic") -> SolveResult:
    """便捷函数：构造目标函数并运行投影梯度下降"""
    objective = ParticleObjective(system, grid, kernel, epsilon, scheme, threads, reduction)
    return ProjectedGradientSolver(objective, config).run(ens0)
