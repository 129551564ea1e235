#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具：mini-TPCH 模式、运行示例数据库与内嵌黑盒句柄
"""

import os

import pytest

from hqe_config import load_config
from oracle import make_oracle
from relcore import load_database, load_domain_sidecar, parse_ddl

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)
CONFIG_PATH = os.path.join(ROOT, 'config', 'hqe_config.toml')
DOMAINS_PATH = os.path.join(ROOT, 'config', 'mini_tpch_domains.json')
EXAMPLE_DIR = os.path.join(ROOT, 'data', 'running_example')
DDL_PATH = os.path.join(EXAMPLE_DIR, 'schema.sql')


def read_text(path: str) -> str:
    with open(path, 'r', encoding='utf-8') as f:
        return f.read().strip()


@pytest.fixture(scope='session')
def hidden_sql() -> str:
    return read_text(os.path.join(EXAMPLE_DIR, 'hidden_query.sql'))


@pytest.fixture(scope='session')
def catalog():
    return parse_ddl(read_text(DDL_PATH), load_domain_sidecar(DOMAINS_PATH))


@pytest.fixture
def db():
    """运行示例的 D_I（每个测试一份新副本）"""
    return load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH)


@pytest.fixture
def config():
    return load_config(CONFIG_PATH)


@pytest.fixture
def oracle_for():
    """按 SQL 文本构造内嵌黑盒，测试结束时关闭"""
    handles = []

    def factory(sql: str, journal=None):
        h = make_oracle(sql, journal=journal)
        handles.append(h)
        return h

    yield factory
    for h in handles:
        h.close()


@pytest.fixture
def running_oracle(oracle_for, hidden_sql):
    return oracle_for(hidden_sql)
