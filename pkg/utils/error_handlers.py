from flask import jsonify
from pydantic import ValidationError

import click

from models import (
    AllSamplesGuarded,
    ConfigurationError,
    DivergenceError,
    KeystreamExhausted,
    LengthMismatchError,
    NonConvergedError,
)

# 数值计算本身失败（输入合法但结果不可用）
NUMERICAL_ERRORS = (DivergenceError, NonConvergedError, AllSamplesGuarded, KeystreamExhausted)

# 命令行退出码
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


def handle_workbench_error(error):
    """
    统一处理工作台错误

    根据不同类型的错误返回相应的错误消息和状态码

    参数:
        error: WorkbenchError或pydantic ValidationError实例

    返回:
        tuple: (JSON响应对象, HTTP状态码)
    """
    error_message = str(error)

    if isinstance(error, ValidationError):
        # 请求数据不满足参数模型
        return jsonify({"error": "参数校验失败", "details": error_message}), 400
    elif isinstance(error, (ConfigurationError, LengthMismatchError)):
        # 参数或配置不合法
        return jsonify({"error": "配置错误", "details": error_message}), 400
    elif isinstance(error, NUMERICAL_ERRORS):
        # 发散、不收敛、密钥流不足等
        return jsonify({"error": "数值计算失败", "details": error_message,
                        "type": type(error).__name__}), 422
    else:
        # 其他未预期的错误
        return jsonify({"error": "实验执行失败", "details": error_message}), 500


def exit_code_for(error):
    """
    命令行退出码：用法或配置错误为1，实验层面的失败为2

    参数:
        error: 异常实例

    返回:
        int: 退出码
    """
    if isinstance(error, (click.ClickException, ConfigurationError, ValidationError)):
        return EXIT_USAGE
    return EXIT_FAILURE
