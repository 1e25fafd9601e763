"""
共享测试夹具
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

# 添加项目根目录到Python路径，以便导入模块
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from core.dynamics import BoxSet, make_system
from core.integrate import TimeGrid
from core.kernel import KernelSpec

CONFIG_DIR = project_root / "config"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def vanderpol():
    return make_system("vanderpol")


@pytest.fixture
def pendulum():
    return make_system("pendulum")


@pytest.fixture
def integrator():
    return make_system("integrator_1d")


@pytest.fixture
def unit_square():
    return BoxSet.cube(2)


@pytest.fixture
def unit_interval():
    return BoxSet.cube(1)


@pytest.fixture
def origin_1d():
    return BoxSet([0.0], [0.0])


@pytest.fixture
def short_grid():
    return TimeGrid(2.0, 20)


@pytest.fixture
def smooth_kernel_2d():
    return KernelSpec("gaussian", 0.5, 2)


@pytest.fixture
def write_config(tmp_path):
    """把配置字典写成 JSON 文件，output_dir 默认落在 tmp_path 下"""

    def _write(data, name="config.json"):
        data = dict(data)
        data.setdefault("output_dir", str(tmp_path / "run"))
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)
        return path

    return _write


def small_1d_config(**overrides):
    """ẋ = u, Ω = {0}, U = [-1, 1] 的小规模实验配置"""
    data = {
        "system": {"name": "integrator_1d"},
        "grid": {"T": 1.0, "steps": 10, "scheme": "rk4"},
        "ensemble": {"N": 5, "init": "uniform_random"},
        "kernel": {"family": "gaussian", "delta": 0.2},
        "epsilon": 0.1,
        "boxes": {"omega": {"lower": [0.0], "upper": [0.0]}, "u": {"lower": [-1.0], "upper": [1.0]}},
        "solver": {"max_iters": 20, "log_every": 5},
        "oracle": {"M": 300},
        "parallel": {"threads": 1},
        "seed": 3,
    }
    data.update(overrides)
    return data
