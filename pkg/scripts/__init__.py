"""
命令行脚本模块
reach_cli 为统一入口，single_run 与 sweep 负责实验编排
"""

# 脚本模块主要用于直接执行，不需要导出特定类或函数
__all__ = []
