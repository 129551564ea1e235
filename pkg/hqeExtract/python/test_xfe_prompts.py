#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
提示词模板测试
"""

import re

import pytest

from hqe_errors import PromptError
from xfe_prompts import (GUIDELINES, ROLE_LINE, ClauseFix, PromptBundle, build_feedback_prompt,
                         build_initial_prompt, render_guidelines)


@pytest.fixture
def bundle():
    return PromptBundle(description='List the people.', schema_ddl='CREATE TABLE customer (c_custkey INTEGER);',
                        seed_sql='SELECT c_name FROM customer', r_h_rows=7, r_s_rows=5)


def test_initial_prompt_slots_and_order(bundle):
    text = build_initial_prompt(bundle)
    assert text.startswith(ROLE_LINE)
    positions = [text.index(s) for s in ('List the people.', 'CREATE TABLE customer', 'SELECT c_name FROM customer',
                                         'produces 5 rows', 'G1.', 'G15.')]
    assert positions == sorted(positions)
    assert text.endswith("Return only the final SQL query.")


def test_initial_prompt_is_deterministic(bundle):
    assert build_initial_prompt(bundle) == build_initial_prompt(bundle)


def test_guidelines_grouped_in_fixed_order():
    text = render_guidelines()
    ids = [m.group(1) for m in re.finditer(r'^(G\d+)\. ', text, re.MULTILINE)]
    assert ids == [gid for gid, _, _ in GUIDELINES]
    assert text.count('Basic Guidelines:') == 1


def test_missing_slot_rejected(bundle):
    with pytest.raises(PromptError):
        build_initial_prompt(PromptBundle('', bundle.schema_ddl, bundle.seed_sql, 7, 5))


def test_result_cardinality_prompt():
    text = build_feedback_prompt('RCP.v1', 'SELECT 1 FROM t', r_e_rows=5, r_h_rows=7)
    assert 'SELECT 1 FROM t' in text
    assert 'following number of rows: 5' in text
    assert 'actual result cardinality: 7' in text


def test_content_mismatch_prompt():
    text = build_feedback_prompt('RCP.v2', 'SELECT 1 FROM t')
    assert text.endswith("Its result does not match with actual result. Fix the query.")


def test_clause_correction_prompt():
    text = build_feedback_prompt('CCP', 'SELECT 1 FROM t',
                                 fixes=[ClauseFix('G5', 'FROM clause', 'Tables absent from the seed query: nation.')])
    assert "Fix its FROM clause as per the seed query (G5). Tables absent from the seed query: nation." in text
    with pytest.raises(PromptError):
        build_feedback_prompt('CCP', 'SELECT 1 FROM t')


def test_unknown_prompt_kind():
    with pytest.raises(PromptError):
        build_feedback_prompt('XYZ', 'SELECT 1 FROM t')
