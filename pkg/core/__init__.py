"""
核心功能模块
包含控制仿射系统、前向/伴随积分、相互作用核、粒子目标函数、投影梯度优化、
采样评估以及实验配置与运行产物
"""

__version__ = "0.1.0"

from core.dynamics import BoxSet, ControlAffineSystem, make_system, project_box, register_system
from core.integrate import DivergenceError, DiscretizedControl, TimeGrid, Trajectory
from core.kernel import KernelSpec
from core.objective import ObjectiveBreakdown, ParticleEnsemble, ParticleObjective
from core.optimizer import ProjectedGradientSolver, SolverConfig, init_ensemble, solve
from core.sampling import OracleGrid, PointCloud, coverage_metrics, oracle_reachable
from core.experiment_config import ConfigError, ExperimentConfig, load_config
from core.report import RunReport

__all__ = [
    'BoxSet',
    'ControlAffineSystem',
    'make_system',
    'project_box',
    'register_system',
    'DivergenceError',
    'DiscretizedControl',
    'TimeGrid',
    'Trajectory',
    'KernelSpec',
    'ObjectiveBreakdown',
    'ParticleEnsemble',
    'ParticleObjective',
    'ProjectedGradientSolver',
    'SolverConfig',
    'init_ensemble',
    'solve',
    'OracleGrid',
    'PointCloud',
    'coverage_metrics',
    'oracle_reachable',
    'ConfigError',
    'ExperimentConfig',
    'load_config',
    'RunReport',
]
