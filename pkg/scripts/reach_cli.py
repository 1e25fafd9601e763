"""
可达集均匀采样命令行入口
子命令: optimize / baseline / gradcheck / sweep / metrics
退出码: 0 成功, 1 检查未通过, 2 配置错误, 3 运行时错误（已写出部分报告）
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# 添加项目根目录到Python路径，以便导入模块
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from core.experiment_config import ConfigError, ExperimentConfig, load_config
from core.integrate import SCHEMES
from scripts.single_run import cmd_baseline, cmd_gradcheck, cmd_metrics, cmd_optimize
from scripts.sweep import cmd_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='实验配置 JSON 文件 (缺省时使用内置默认配置)')
    common.add_argument('--out', help='输出目录 (覆盖配置中的 output_dir)')
    common.add_argument('--seed', type=int, help='随机种子 (覆盖配置)')
    common.add_argument('--threads', type=int, help='线程数, 1 表示逐位确定的串行路径')
    common.add_argument('--scheme', choices=list(SCHEMES), help='积分格式 (覆盖配置)')
    common.add_argument('--verbose', action='store_true', help='输出 DEBUG 日志')

    parser = argparse.ArgumentParser(
        prog='reach-ot',
        description="🎯 基于粒子熵正则最优传输的可达集均匀采样",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  reach-ot optimize --config config/vanderpol.json --threads 1
  reach-ot baseline --config config/pendulum.json --out runs/pendulum_baseline
  reach-ot gradcheck --config config/gradcheck_pendulum.json
  reach-ot sweep --config config/sweep_integrator_1d.json --epsilons 0.5 0.1 0.02 --deltas 0.2 0.1 0.05
  reach-ot metrics --run-dir runs/vanderpol
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('optimize', parents=[common], help='投影梯度求解粒子问题')
    sub.add_parser('baseline', parents=[common], help='随机控制基线采样')
    gradcheck = sub.add_parser('gradcheck', parents=[common], help='伴随梯度有限差分检查')
    gradcheck.add_argument('--probes', type=int, help='抽检坐标数')
    gradcheck.add_argument('--perturb', type=float, default=0.0, help=argparse.SUPPRESS)
    sweep = sub.add_parser('sweep', parents=[common], help='(ε, δ) 网格批量实验')
    sweep.add_argument('--epsilons', type=float, nargs='*', help='ε 列表 (覆盖配置)')
    sweep.add_argument('--deltas', type=float, nargs='*', help='δ 列表 (覆盖配置)')
    metrics = sub.add_parser('metrics', parents=[common], help='由 CSV 复算指标并与报告比对')
    metrics.add_argument('--run-dir', help='运行目录 (默认: 配置中的 output_dir)')
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(seed=args.seed, threads=args.threads,
                                 scheme=args.scheme, output_dir=args.out)


def run(args: argparse.Namespace) -> int:
    """执行子命令并返回退出码"""
    if args.command == 'metrics':
        run_dir = args.run_dir or args.out
        config = _load(args) if args.config else None
        if run_dir is None:
            run_dir = config.output_dir if config else ExperimentConfig().output_dir
        report = cmd_metrics(run_dir, config)
        return EXIT_OK if report.status == 'passed' else EXIT_CHECK_FAILED

    config = _load(args)
    if args.command == 'optimize':
        cmd_optimize(config)
    elif args.command == 'baseline':
        cmd_baseline(config)
    elif args.command == 'gradcheck':
        report = cmd_gradcheck(config, args.probes, args.perturb)
        return EXIT_OK if report.status == 'passed' else EXIT_CHECK_FAILED
    elif args.command == 'sweep':
        cmd_sweep(config, args.epsilons, args.deltas)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，解析命令行参数并映射异常到退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        return run(args)
    except ConfigError as e:
        print(f"❌ 配置错误: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"❌ 运行失败: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
