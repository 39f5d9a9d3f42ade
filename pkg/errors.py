# -*- coding: utf-8 -*-
"""
错误类型
=================================

ValidationError 及其子类 -> 命令行退出码 2
NumericError                -> 命令行退出码 3
"""


class RenoirError(Exception):
    """所有renoir错误的基类"""


class ValidationError(RenoirError, ValueError):
    """前置条件或不变量被违反"""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def __str__(self):
        msg = super().__str__()
        if self.field:
            return f"{self.field}: {msg}"
        return msg


class ConfigError(ValidationError):
    """实验配置错误（字段缺失、类型不符、文件不存在）"""


class UnsupportedPathError(ValidationError):
    """请求了不支持的计算路径"""


class ModelFileError(ValidationError):
    """模型文件损坏、截断或版本不符"""

    def __init__(self, message, offset=None, field=None):
        super().__init__(message, field=field)
        self.offset = offset

    def __str__(self):
        msg = super().__str__()
        if self.offset is not None:
            return f"{msg} (offset {self.offset})"
        return msg


class DataFormatError(ValidationError):
    """CSV数据格式错误"""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.column is not None:
            where.append(f"column {self.column}")
        return f"{msg} ({', '.join(where)})" if where else msg


class NumericError(RenoirError, ArithmeticError):
    """运行期数值失败（损失发散、矩阵奇异等）"""
