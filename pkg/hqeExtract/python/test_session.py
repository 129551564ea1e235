#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
会话编排测试：会话目录产物、完整流水线、日志重放与随机实例导出
"""

import json
import os

import pytest

from conftest import CONFIG_PATH
from hqe_config import load_config
from session import Session


@pytest.fixture
def quick_config():
    return load_config(CONFIG_PATH, overrides={'checker': {'trials': 3}})


@pytest.fixture
def session(quick_config, tmp_path):
    s = Session(quick_config, out_dir=str(tmp_path))
    yield s
    s.close()


def test_seed_only_artifacts(session):
    report = session.run_extract(seed_only=True)
    assert report.status == 'seed_only'
    files = os.listdir(session.session_dir)
    for name in ('seed.sql', 'report.json', 'journal.jsonl', 'hqe.log'):
        assert name in files
    with open(os.path.join(session.session_dir, 'report.json'), 'r', encoding='utf-8') as f:
        saved = json.load(f)
    assert saved['seed_sql'] == report.seed_sql
    assert saved['extraction']['r_h_rows'] == 7
    assert report.phases['xre'].invocations > 0
    assert report.final_sql is None


def test_full_pipeline(session):
    """运行示例：XRE 种子 → 模拟对话 → 检查器通过"""
    report = session.run_extract()
    assert report.status == 'success'
    assert report.final_sql
    assert report.prompt_sequence[0] == 'IP'
    assert report.checker.passed_all
    assert report.phases['checker'].invocations == 3
    assert os.path.exists(os.path.join(session.session_dir, 'final.sql'))
    assert os.path.isdir(os.path.join(session.session_dir, 'prompts'))


def test_session_dirs_do_not_collide(quick_config, tmp_path):
    first = Session(quick_config, out_dir=str(tmp_path))
    second = Session(quick_config, out_dir=str(tmp_path))
    try:
        assert first.session_dir != second.session_dir
    finally:
        first.close()
        second.close()


def test_check_given_sql(session, hidden_sql):
    verdict = session.run_check(hidden_sql)
    assert verdict.status == 'pass'
    assert session.report.status == 'success'


def test_replay_session_journal(quick_config, tmp_path):
    recorded = Session(quick_config, out_dir=str(tmp_path / 'a'))
    try:
        recorded.run_extract(seed_only=True)
    finally:
        recorded.close()
    replayer = Session(quick_config, out_dir=str(tmp_path / 'b'))
    try:
        report = replayer.run_replay(os.path.join(recorded.session_dir, 'journal.jsonl'))
    finally:
        replayer.close()
    assert report.ok
    assert report.invocations > 0
    assert report.matched == report.invocations
    assert os.path.exists(os.path.join(replayer.session_dir, 'replay.json'))


def test_gen_db_writes_csv(session, tmp_path):
    out = tmp_path / 'random'
    written = session.run_gen_db(5, str(out))
    assert len(written) == 8
    assert sorted(os.listdir(out)) == sorted(os.path.basename(p) for p in written)
    assert session.journal.of_kind('mutation')[-1].field('op') == 'generate'
