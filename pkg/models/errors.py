"""
工作台异常层次

所有可预期的失败都从 WorkbenchError 派生，方便命令行和HTTP层统一处理。
"""


class WorkbenchError(Exception):
    """工作台所有可预期错误的基类"""


class ConfigurationError(WorkbenchError, ValueError):
    """参数或配置不合法"""


class ConfigParseError(ConfigurationError):
    """
    配置文本解析错误

    属性:
        line: 出错的行号（从1开始）
        column: 出错的列号（从1开始）
    """

    def __init__(self, message, line, column):
        super().__init__(f"第{line}行第{column}列: {message}")
        self.line = line
        self.column = column


class DivergenceError(WorkbenchError):
    """
    轨道发散（某个分量超过发散界或不是有限值）

    属性:
        step: 触发保护的积分步
        orbit: 截止到该步的部分轨道（可能为None）
    """

    def __init__(self, step, orbit=None, message=None):
        super().__init__(message or f"轨道在第{step}步发散")
        self.step = step
        self.orbit = orbit


class LengthMismatchError(WorkbenchError, ValueError):
    """序列长度不满足要求"""


class NonConvergedError(WorkbenchError):
    """Lyapunov指数的滑动平均在末段没有稳定下来"""

    def __init__(self, spectrum, spread):
        super().__init__(f"Lyapunov指数未收敛，末段波动 {spread:.3e}")
        self.spectrum = spectrum
        self.spread = spread


class KeystreamExhausted(WorkbenchError):
    """密钥流比特不足"""

    def __init__(self, needed, available):
        super().__init__(f"密钥流不足: 需要{needed}比特，只有{available}比特")
        self.needed = needed
        self.available = available


class AllSamplesGuarded(WorkbenchError):
    """NMSE窗口内的所有样本都被排除"""


class ExhaustedAttempts(WorkbenchError):
    """拒绝采样在最大次数内没有找到合格配置"""

    def __init__(self, attempts):
        super().__init__(f"尝试{attempts}次后仍未找到同步且通过准入规则的配置")
        self.attempts = attempts


class ProtocolError(WorkbenchError):
    """协议前置条件不满足（例如双方控制参数不一致）"""
