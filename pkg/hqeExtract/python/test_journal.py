#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
会话日志测试：追加写入、读取与重放
"""

import pytest

from conftest import DDL_PATH, DOMAINS_PATH, EXAMPLE_DIR
from hqe_errors import DataLoadError
from journal import SessionJournal, load_journal, replay_records
from relcore import load_database


def _record_session(journal, oracle_for, hidden_sql):
    """在带日志的 D_I 上做一串变更与调用"""
    db = load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH, journal=journal)
    h = oracle_for(hidden_sql, journal=journal)
    h.invoke(db)
    t1 = db.apply('void', tables=['nation'])
    h.invoke(db)
    t2 = db.apply('set', table='customer', column='c_acctbal', value='20000.00', row=0)
    h.invoke(db)
    db.revert(t2)
    db.commit(t1)
    child = db.derive(keep={'customer': [0], 'orders': [5]}, label='D1')
    h.invoke(child)
    child.apply('rename', table='supplier', dummy='hqe_dummy_supplier')
    h.invoke(child)
    return h


def test_unknown_record_kind_rejected():
    with pytest.raises(ValueError):
        SessionJournal().record('nonsense')


def test_journal_written_as_jsonl(tmp_path, oracle_for, hidden_sql):
    path = tmp_path / 'journal.jsonl'
    with SessionJournal(str(path)) as journal:
        journal.set_phase('xre')
        _record_session(journal, oracle_for, hidden_sql)
        count = len(journal.records)
    records = load_journal(str(path))
    assert len(records) == count
    assert [r.seq for r in records] == list(range(count))
    assert records[0].kind == 'phase'
    assert sum(1 for r in records if r.kind == 'invoke') == 5


def test_replay_matches_every_invocation(oracle_for, hidden_sql):
    """从新加载的 D_I 重放，全部状态摘要与结果摘要一致"""
    journal = SessionJournal()
    _record_session(journal, oracle_for, hidden_sql)
    base = load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH)
    fresh = oracle_for(hidden_sql)
    report = replay_records(journal.records, base, fresh.invoke)
    assert report.invocations == 5
    assert report.matched == 5
    assert report.ok


def test_replay_detects_different_query(oracle_for, hidden_sql):
    journal = SessionJournal()
    _record_session(journal, oracle_for, hidden_sql)
    base = load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH)
    other = oracle_for("SELECT c_name AS name, c_phone AS phone FROM customer")
    report = replay_records(journal.records, base, other.invoke)
    assert not report.ok
    assert report.result_mismatches


def test_load_journal_reports_bad_line(tmp_path):
    path = tmp_path / 'broken.jsonl'
    path.write_text('{"seq": 0, "kind": "phase", "ts": 1.0}\nnot json\n', encoding='utf-8')
    with pytest.raises(DataLoadError):
        load_journal(str(path))
