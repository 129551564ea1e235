#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义模块
隐藏查询抽取引擎各组件共用的异常层次
"""

from typing import Optional, Tuple


class HqeError(Exception):
    """引擎异常基类"""


class ConfigError(HqeError):
    """配置文件缺失或不合法"""


class ScopeError(HqeError):
    """超出引擎处理范围（例如辅助表过多）"""


class SchemaError(HqeError):
    """模式定义错误"""


class DataLoadError(HqeError):
    """数据文件加载错误"""


class DomainError(HqeError):
    """取值超出属性域"""


class UnknownTableError(HqeError):
    """引用了目录中不存在的表"""


class NameCollisionError(HqeError):
    """重命名时目标名称已被占用"""


class MutationOrderError(HqeError):
    """撤销令牌未按后进先出顺序回滚"""


class SqlError(HqeError):
    """SQL 处理错误基类，code 区分错误类别"""

    code = 'sql'

    def __init__(self, message: str, span: Optional[Tuple[int, int]] = None,
                 construct: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.span = span
        self.construct = construct

    def __str__(self):
        if self.span is not None:
            return f"[{self.code}] {self.message} (位置 {self.span[0]}-{self.span[1]})"
        return f"[{self.code}] {self.message}"


class SqlSyntaxError(SqlError):
    """语法错误"""

    code = 'syntax'


class UnsupportedFeatureError(SqlError):
    """语法正确但不在支持的子集内"""

    code = 'unsupported'


class ResolutionError(SqlError):
    """表或列无法解析（EbE 依赖此信号）"""

    code = 'resolution'


class TypeMismatchError(SqlError):
    """类型不兼容"""

    code = 'type'


class ExecutionError(SqlError):
    """执行期错误"""

    code = 'execution'


class OracleFailure(HqeError):
    """黑盒调用超时或协议错误"""


class MinimizationFailure(HqeError):
    """无法得到保持 FIT 的最小化数据库"""


class AssumptionViolation(HqeError):
    """并集抽取的前提假设不成立"""


class NonMonotoneSatisfaction(HqeError):
    """满足区域不是单一区间（暗示析取）"""

    def __init__(self, column, lb, ub):
        super().__init__(f"列 {column} 的满足区域不连续")
        self.column = column
        self.lb = lb
        self.ub = ub


class LiteralBudgetExceeded(HqeError):
    """IN 列表字面量超出预算"""


class PromptError(HqeError):
    """提示词槽位缺失或类型未知"""


class LlmTransportError(HqeError):
    """大模型接口调用失败"""


class FkTopologyError(HqeError):
    """外键拓扑无法满足（例如存在环）"""
