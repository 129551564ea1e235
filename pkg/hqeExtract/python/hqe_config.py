#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置模块
TOML / YAML 配置文件的 pydantic 模型，每个段落一个模型，相对路径按配置文件所在目录解析
"""

import logging
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from hqe_errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config')
DEFAULT_CONFIG_PATH = os.path.join(DEFAULT_CONFIG_DIR, 'hqe_config.toml')


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class SchemaConfig(_Section):
    ddl: Optional[str] = None
    domains: Optional[str] = None


class DataConfig(_Section):
    dir: Optional[str] = None


class OracleConfig(_Section):
    hidden_sql: Optional[str] = None
    command: Optional[str] = None
    timeout: float = 60.0


class LlmConfig(_Section):
    endpoint: Optional[str] = None
    model: str = 'gpt-4o'
    api_key_env: str = 'HQE_LLM_API_KEY'
    description: Optional[str] = None
    mock_transcript: Optional[str] = None
    temperature: float = 0.0
    max_retries: int = Field(3, ge=0)
    backoff_seconds: float = Field(1.0, ge=0)
    request_timeout: float = 120.0


class LimitsConfig(_Section):
    max_aux_tables: int = Field(12, ge=1)
    max_in_literals: int = Field(16, ge=1)
    rcp_threshold: int = Field(6, ge=1)
    max_rounds: int = Field(18, ge=1)
    combinatorial_cap: int = Field(10000, ge=1)
    limit_probe_ceiling: int = Field(1000, ge=2)
    max_tie_group: int = Field(6, ge=2)
    optional_pair_probes: int = Field(64, ge=1)


class CheckerConfig(_Section):
    trials: int = Field(30, ge=1)
    seed: int = 0
    n_jobs: int = 1
    default_rows: int = Field(8, ge=1)
    rows: Dict[str, int] = Field(default_factory=dict)
    hot_fraction: float = Field(0.6, ge=0.0, le=1.0)
    hot_pool: int = Field(4, ge=1)
    # 列 -> [下界, 上界]，覆盖该列的取值窗口
    value_windows: Dict[str, Tuple[Any, Any]] = Field(default_factory=dict)
    date_window: Optional[Tuple[str, str]] = None
    text_vocabulary: Dict[str, list] = Field(default_factory=dict)


class HqeConfig(_Section):
    """完整配置"""

    schema_: SchemaConfig = Field(default_factory=SchemaConfig, alias='schema')
    data: DataConfig = Field(default_factory=DataConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    llm: LlmConfig = Field(default_factory=LlmConfig)
    limits: LimitsConfig = Field(default_factory=LimitsConfig)
    checker: CheckerConfig = Field(default_factory=CheckerConfig)
    base_dir: str = '.'

    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    def resolve(self, path: Optional[str]) -> Optional[str]:
        """相对路径按配置文件目录解析"""
        if path is None or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.base_dir, path))

    def description_text(self) -> str:
        """自然语言描述：可以直接写在配置里，也可以是文件路径"""
        text = self.llm.description or ''
        path = self.resolve(text) if text else None
        if path and os.path.isfile(path):
            with open(path, 'r', encoding='utf-8') as f:
                return f.read().strip()
        return text.strip()


def _read_raw(path: str) -> Dict[str, Any]:
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext in ('.yaml', '.yml'):
            with open(path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}")


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> HqeConfig:
    """
    加载配置

    Args:
        path: 配置文件路径（.toml / .yaml），为空时使用 hqeExtract/config/hqe_config.toml
        overrides: 命令行覆盖项，形如 {'oracle': {'command': ...}}

    Returns:
        校验后的配置对象
    """
    path = path or DEFAULT_CONFIG_PATH
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    raw = _read_raw(path)
    for section, values in (overrides or {}).items():
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            raw.setdefault(section, {}).update(values)
    raw['base_dir'] = os.path.dirname(os.path.abspath(path))
    try:
        config = HqeConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"配置文件 {path} 校验失败: {e}")
    logger.info(f"加载配置: {path}")
    return config
