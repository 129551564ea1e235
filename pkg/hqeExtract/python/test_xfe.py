#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
提示-反馈循环测试（脚本化对话客户端，不访问网络）
"""

import json
import os

import pytest

from conftest import DDL_PATH, DOMAINS_PATH, EXAMPLE_DIR, read_text
from hqe_config import LimitsConfig
from journal import SessionJournal
from llm_client import ScriptedChatClient, extract_sql
from minisql import parse_sql
from relcore import ResultSet, load_database
from test_xfe_alignment import SEED_SQL
from xfe import SynthesisStatus, Verdict, refine_loop, results_match
from xfe_prompts import PromptBundle

TRANSCRIPT = os.path.join(EXAMPLE_DIR, 'mock_transcript.jsonl')


def transcript_sql(index):
    with open(TRANSCRIPT, 'r', encoding='utf-8') as f:
        lines = [line for line in f if line.strip()]
    return extract_sql(json.loads(lines[index])['reply_sql'])


@pytest.fixture
def seed():
    return parse_sql(SEED_SQL)


@pytest.fixture
def bundle():
    return PromptBundle(description='List every customer and supplier worth contacting.',
                        schema_ddl=read_text(DDL_PATH), seed_sql=SEED_SQL, r_h_rows=7, r_s_rows=6)


def test_running_example_converges(running_oracle, db, seed, bundle, tmp_path):
    """模拟对话：多出 nation 触发 CCP，内连接少两行触发 RCP.v1，第三轮结果一致"""
    client = ScriptedChatClient.from_file(TRANSCRIPT)
    outcome = refine_loop(client, running_oracle, db, seed, bundle, prompts_dir=str(tmp_path))
    assert outcome.status is SynthesisStatus.SUCCESS
    assert outcome.prompt_sequence == ['IP', 'CCP', 'RCP.v1']
    assert [c.verdict for c in outcome.candidates] == [Verdict.MISALIGNED, Verdict.CARDINALITY_MISMATCH,
                                                       Verdict.RESULT_MATCH]
    assert outcome.candidates[1].rows == 5
    assert outcome.rounds == 3
    assert 'LEFT OUTER JOIN' in outcome.rendered.text
    assert running_oracle.phase_counts['xfe'] == 1
    assert len(client.requests) == 3
    assert 'round-01-IP.txt' in os.listdir(tmp_path)
    assert 'round-02-CCP.txt' in os.listdir(tmp_path)


def test_duplicate_candidate_falls_back(running_oracle, db, seed, bundle):
    """重复上一轮的错误查询即转入组合合成"""
    sql = transcript_sql(1)
    outcome = refine_loop(ScriptedChatClient.from_replies([sql, sql]), running_oracle, db, seed, bundle)
    assert outcome.status is SynthesisStatus.FALLBACK
    assert outcome.reason == 'duplicate'
    assert outcome.prompt_sequence == ['IP', 'RCP.v1']
    assert outcome.candidates[1].verdict is Verdict.DUPLICATE
    assert outcome.last_query is not None


def test_trial_threshold_falls_back(running_oracle, db, seed, bundle):
    client = ScriptedChatClient.from_replies([SEED_SQL])
    outcome = refine_loop(client, running_oracle, db, seed, bundle, limits=LimitsConfig(rcp_threshold=1))
    assert outcome.status is SynthesisStatus.FALLBACK
    assert outcome.reason == 'threshold'
    assert outcome.candidates[0].verdict is Verdict.CARDINALITY_MISMATCH
    assert outcome.candidates[0].rows == 6


def test_parse_error_gets_syntax_feedback(running_oracle, db, seed, bundle):
    client = ScriptedChatClient.from_replies(['SELEC name FROM', SEED_SQL])
    outcome = refine_loop(client, running_oracle, db, seed, bundle, limits=LimitsConfig(max_rounds=2))
    assert outcome.candidates[0].verdict is Verdict.PARSE_ERROR
    assert outcome.prompt_sequence == ['IP', 'CCP']
    assert outcome.status is SynthesisStatus.FALLBACK
    assert outcome.reason == 'max_rounds'


def test_transport_failure(running_oracle, db, seed, bundle):
    outcome = refine_loop(ScriptedChatClient.from_replies([]), running_oracle, db, seed, bundle)
    assert outcome.status is SynthesisStatus.FAILURE
    assert outcome.reason == 'transport'


def test_rounds_are_journaled(running_oracle, seed, bundle):
    journal = SessionJournal()
    db = load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH, journal=journal)
    refine_loop(ScriptedChatClient.from_file(TRANSCRIPT), running_oracle, db, seed, bundle)
    rounds = journal.of_kind('llm_round')
    assert [r.field('prompt_kind') for r in rounds] == ['IP', 'CCP', 'RCP.v1']
    assert rounds[-1].field('verdict') == 'result_match'
    assert rounds[0].field('violations')


def test_results_match_respects_order(db, running_oracle):
    r_h = running_oracle.invoke_result(db)
    reversed_rows = ResultSet(r_h.columns, list(reversed(r_h.rows)), ordered=True)
    assert results_match(reversed_rows, r_h)
    assert not results_match(reversed_rows, r_h, ordered=True)
