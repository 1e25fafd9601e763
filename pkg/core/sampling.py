"""
采样与评估模块
  - 朴素基线：随机分段常值控制的终端点
  - 参考估计：大量随机 rollout 占据的格子（可达集的内逼近）
  - 覆盖率指标与 1D 到均匀分布的 Wasserstein-1 距离
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial import KDTree

from core.dynamics import BoxSet, ControlAffineSystem, project_box
from core.integrate import TimeGrid, integrate_batch
from core.kernel import KernelSpec
from core.objective import ParticleEnsemble, interaction_energy
from core.parallel import map_chunks

logger = logging.getLogger(__name__)

ORACLE_CHUNK = 1000
ORACLE_MAX_DIM = 3
ORACLE_LABEL = "random-rollout under-approximation"


@dataclass(frozen=True, eq=False)
class PointCloud:
    """终端点云"""

    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"点云形状应为 (M, d) 且 M >= 1, 实际为 {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("点云包含非有限值")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def M(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])


def expand_segments(pieces: np.ndarray, steps: int) -> np.ndarray:
    """把 (n, S, m) 的分段控制展开为 (n, K, m)，第 k 步取第 floor(k·S/K) 段"""
    S = pieces.shape[1]
    if S < 1 or S > steps:
        raise ValueError(f"分段数须在 [1, {steps}] 内, 实际为 {S}")
    idx = (np.arange(steps) * S) // steps
    return pieces[:, idx, :]


def baseline_ensemble(system: ControlAffineSystem, grid: TimeGrid, omega: BoxSet, u_box: BoxSet,
                      N: int, segments: Optional[int] = None, seed: int = 0) -> ParticleEnsemble:
    """基线粒子：x0 从 Ω 均匀采样，每段控制从 U 均匀采样"""
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"粒子数 N 必须是正整数, 实际为 {N!r}")
    segments = grid.steps if segments is None else segments
    if not 1 <= segments <= grid.steps:
        raise ValueError(f"baseline 分段数须在 [1, {grid.steps}] 内, 实际为 {segments}")
    rng = np.random.default_rng(seed)
    x0s = omega.sample(rng, int(N))
    pieces = rng.uniform(u_box.lower, u_box.upper, size=(int(N), segments, system.m))
    return ParticleEnsemble(x0s, expand_segments(pieces, grid.steps), omega, u_box)


def baseline_sample(system: ControlAffineSystem, grid: TimeGrid, omega: BoxSet, u_box: BoxSet,
                    N: int, segments: Optional[int] = None, seed: int = 0,
                    scheme: str = "rk4", threads: int = 1) -> PointCloud:
    """
    朴素蒙特卡洛基线

    Args:
        system: 控制仿射系统
        grid: 时间网格
        omega: 初始集
        u_box: 控制约束集
        N: 样本数
        segments: 控制分段数，None 表示每步独立采样
        seed: 随机种子
        scheme: 积分格式
        threads: 线程数

    Returns:
        终端点云
    """
    ens = baseline_ensemble(system, grid, omega, u_box, N, segments, seed)
    terminal = integrate_batch(system, ens.x0s, ens.controls, grid, scheme, store=False, threads=threads)
    return PointCloud(terminal, label="baseline")


@dataclass(frozen=True, eq=False)
class OracleGrid:
    """
    全局格点 floor(p/h) 上被 rollout 终端点占据的格子

    origin 为占据格子的最小下标，occupied[i] 对应全局格子 origin + i。
    point_lower / point_upper 为 rollout 终端点的包围盒。
    """

    h: float
    origin: np.ndarray
    occupied: np.ndarray
    point_lower: np.ndarray
    point_upper: np.ndarray
    rollouts: int
    label: str = ORACLE_LABEL

    @classmethod
    def from_points(cls, points: np.ndarray, h: float, rollouts: Optional[int] = None,
                    label: str = ORACLE_LABEL) -> "OracleGrid":
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"参考点形状应为 (M, d) 且 M >= 1, 实际为 {points.shape}")
        if not h > 0:
            raise ValueError(f"格子边长 h 必须为正, 实际为 {h!r}")
        cells = np.floor(points / h).astype(np.int64)
        origin = cells.min(axis=0)
        shape = tuple(int(s) for s in cells.max(axis=0) - origin + 1)
        occupied = np.zeros(shape, dtype=bool)
        occupied[tuple((cells - origin).T)] = True
        return cls(
            h=float(h),
            origin=origin,
            occupied=occupied,
            point_lower=points.min(axis=0),
            point_upper=points.max(axis=0),
            rollouts=int(points.shape[0] if rollouts is None else rollouts),
            label=label,
        )

    @property
    def d(self) -> int:
        return int(self.origin.shape[0])

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupied))

    @property
    def c_hat(self) -> float:
        """占据格子的总体积，即可达集 Lebesgue 测度的估计"""
        return self.n_occupied * self.h ** self.d

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=float) / self.h).astype(np.int64)

    def is_occupied(self, points: np.ndarray) -> np.ndarray:
        local = self.cell_index(points) - self.origin
        inside = np.all((local >= 0) & (local < np.array(self.occupied.shape)), axis=1)
        hit = np.zeros(local.shape[0], dtype=bool)
        hit[inside] = self.occupied[tuple(local[inside].T)]
        return hit

    def occupied_cells(self) -> np.ndarray:
        """占据格子的全局下标 (n_occupied, d)"""
        return np.argwhere(self.occupied) + self.origin

    def cell_centers(self) -> np.ndarray:
        return (self.occupied_cells() + 0.5) * self.h

    def point_box(self) -> BoxSet:
        return BoxSet(self.point_lower, self.point_upper)


def _oracle_chunk(system, grid, omega, u_box, segments, seed, chunk, n, scheme):
    rng = np.random.default_rng([seed, chunk])
    x0s = omega.sample(rng, ORACLE_CHUNK)[:n]
    shape = (ORACLE_CHUNK, segments, system.m)
    uniform = rng.uniform(u_box.lower, u_box.upper, size=shape)
    held = np.broadcast_to(rng.uniform(u_box.lower, u_box.upper, size=(ORACLE_CHUNK, 1, system.m)), shape)
    bang = np.where(rng.random(shape) < 0.5, u_box.lower, u_box.upper)
    zero = np.broadcast_to(project_box(np.zeros(system.m), u_box), shape)
    # 每 10 个 rollout: 3 个逐段均匀, 3 个整段常值均匀, 3 个 bang-bang, 1 个零控制
    kind = (np.arange(ORACLE_CHUNK) % 10)[:, None, None]
    pieces = np.select([kind < 3, kind < 6, kind < 9], [uniform, held, bang], zero)[:n]
    controls = expand_segments(pieces, grid.steps)
    return integrate_batch(system, x0s, controls, grid, scheme, store=False)


def oracle_reachable(system: ControlAffineSystem, grid: TimeGrid, omega: BoxSet, u_box: BoxSet,
                     M: int, h: float, segments: Optional[int] = None, seed: int = 0,
                     scheme: str = "rk4", threads: int = 1) -> OracleGrid:
    """
    用 M 条随机 rollout 估计可达集

    控制为 逐段均匀 / 整段常值均匀 / bang-bang / 零 四种分段常值策略的固定混合。
    rollout 按 1000 条一块生成，第 c 块使用种子 [seed, c]，因此 M 增大时点集只增不减。

    Args:
        system: 控制仿射系统
        grid: 时间网格
        omega: 初始集
        u_box: 控制约束集
        M: rollout 数
        h: 格子边长
        segments: 控制分段数，None 时取 min(K, 15)
        seed: 随机种子
        scheme: 积分格式
        threads: 线程数

    Returns:
        OracleGrid（内逼近，不是精确可达集）
    """
    if system.d > ORACLE_MAX_DIM:
        raise ValueError(f"参考估计只支持 d <= {ORACLE_MAX_DIM}, 实际 d={system.d}")
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 1:
        raise ValueError(f"rollout 数 M 必须是正整数, 实际为 {M!r}")
    if not h > 0:
        raise ValueError(f"格子边长 h 必须为正, 实际为 {h!r}")
    segments = min(grid.steps, 15) if segments is None else segments
    if not 1 <= segments <= grid.steps:
        raise ValueError(f"oracle 分段数须在 [1, {grid.steps}] 内, 实际为 {segments}")

    n_chunks = -(-int(M) // ORACLE_CHUNK)
    sizes = [min(ORACLE_CHUNK, int(M) - c * ORACLE_CHUNK) for c in range(n_chunks)]
    parts = map_chunks(
        lambda s: [_oracle_chunk(system, grid, omega, u_box, segments, seed, c, sizes[c], scheme)
                   for c in range(s.start, s.stop)],
        n_chunks, threads,
    )
    points = np.concatenate([p for part in parts for p in part], axis=0)
    oracle = OracleGrid.from_points(points, h, rollouts=int(M))
    logger.info(f"🗺️ 参考估计完成: M={M}, h={h:g}, 占据格子={oracle.n_occupied}, ĉ={oracle.c_hat:.4g}")
    return oracle


@dataclass(frozen=True)
class CoverageMetrics:
    interaction_energy: float
    coverage: float
    outside_frac: float
    nn_min: float
    nn_mean: float
    l2_entropy_ratio: float
    c_hat: float
    occupied_cells: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def coverage_metrics(cloud: PointCloud, oracle: OracleGrid, kernel: KernelSpec,
                     epsilon: float) -> CoverageMetrics:
    """
    点云相对参考估计的覆盖率指标

    Args:
        cloud: 终端点云
        oracle: 参考格子
        kernel: 核参数（用于相互作用能）
        epsilon: 熵正则参数

    Returns:
        CoverageMetrics；M=1 时最近邻距离为 inf
    """
    if oracle.n_occupied == 0:
        raise ValueError("参考估计没有任何占据格子")
    if cloud.d != oracle.d or cloud.d != kernel.d:
        raise ValueError(f"维度不一致: 点云 d={cloud.d}, 参考 d={oracle.d}, 核 d={kernel.d}")
    points = cloud.points
    energy = interaction_energy(points, kernel, epsilon)
    hit = oracle.is_occupied(points)
    cells_hit = np.unique(oracle.cell_index(points[hit]), axis=0).shape[0] if hit.any() else 0
    if cloud.M >= 2:
        dist, _ = KDTree(points).query(points, k=2)
        nn = dist[:, 1]
        nn_min, nn_mean = float(nn.min()), float(nn.mean())
    else:
        nn_min = nn_mean = math.inf
    return CoverageMetrics(
        interaction_energy=energy,
        coverage=cells_hit / oracle.n_occupied,
        outside_frac=1.0 - float(np.count_nonzero(hit)) / cloud.M,
        nn_min=nn_min,
        nn_mean=nn_mean,
        l2_entropy_ratio=float(epsilon) * energy * oracle.c_hat,
        c_hat=oracle.c_hat,
        occupied_cells=oracle.n_occupied,
    )


def wasserstein1_1d(cloud: PointCloud, interval: Tuple[float, float]) -> float:
    """
    1D 经验分布到 [a, b] 上均匀分布的 W1 距离（分位数公式，逐段闭式积分）

    Args:
        cloud: d=1 的点云
        interval: (a, b)，a < b

    Returns:
        W1 距离
    """
    if cloud.d != 1:
        raise ValueError(f"W1 到均匀分布只支持 d=1, 实际 d={cloud.d}")
    a, b = float(interval[0]), float(interval[1])
    if not (math.isfinite(a) and math.isfinite(b) and b > a):
        raise ValueError(f"区间须满足 a < b, 实际为 ({a}, {b})")
    x = np.sort(cloud.points[:, 0])
    N = x.shape[0]
    w = 1.0 / N
    L = a + (b - a) * (np.arange(N) / N)
    R = a + (b - a) * ((np.arange(N) + 1) / N)
    mid = 0.5 * (L + R)
    area = np.where(
        x <= L,
        (mid - x) * w,
        np.where(x >= R, (x - mid) * w, w * ((x - L) ** 2 + (R - x) ** 2) / (2.0 * (R - L))),
    )
    return math.fsum(area)
