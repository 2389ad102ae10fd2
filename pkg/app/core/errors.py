"""
异常体系 - 所有模块抛出的错误都派生自 ChaothermError
"""
from typing import Any


class ChaothermError(Exception):
    """chaotherm 基础异常"""


class ParameterError(ChaothermError, ValueError):
    """参数非法或前置条件不满足"""


class RangeError(ChaothermError, IndexError):
    """窗口或索引超出谱范围，或窗口为空"""


class EmptySpectrumError(ChaothermError):
    """能级数为 0"""


class OrderingError(ChaothermError, ValueError):
    """输入能级未排序"""


class ShapeError(ChaothermError, ValueError):
    """矩阵维度不匹配"""


class InsufficientDataError(ChaothermError):
    """样本量不足以计算统计量"""


class DegenerateInputError(ChaothermError):
    """输入退化（例如全零变换矩阵）"""


class ConfigError(ChaothermError):
    """运行配置无法解析或校验失败"""


class NumericError(ChaothermError):
    """
    数值计算失败

    Args:
        message: 错误描述
        diagnostics: 诊断信息（维度、范数、条件数估计等）
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({details})"
