#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
大模型客户端测试：SQL 提取、脚本回放与 HTTP 重试
"""

import pytest
import requests

from hqe_errors import LlmTransportError
from llm_client import (HttpChatClient, ScriptedChatClient, TranscriptEntry, extract_sql, make_client,
                        request_digest)


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.exceptions.HTTPError(f"{self.status} error")

    def json(self):
        return self.payload


def reply(content):
    return FakeResponse({'choices': [{'message': {'role': 'assistant', 'content': content}}]})


@pytest.mark.parametrize('text, expected', [
    ("SELECT 1 FROM t;", "SELECT 1 FROM t"),
    ("Here it is:\n```sql\nSELECT a FROM t;\n```\nDone.", "SELECT a FROM t"),
    ("```\nSELECT b FROM t\n```", "SELECT b FROM t"),
    ("  SELECT c FROM t ; ", "SELECT c FROM t"),
])
def test_extract_sql(text, expected):
    assert extract_sql(text) == expected


def test_scripted_client_by_round():
    client = ScriptedChatClient.from_replies(['SELECT 1 FROM t', 'SELECT 2 FROM t'])
    assert client.complete([{'role': 'user', 'content': 'x'}], 2) == 'SELECT 2 FROM t'
    with pytest.raises(LlmTransportError):
        client.complete([{'role': 'user', 'content': 'x'}], 3)


def test_scripted_client_prefers_request_digest():
    messages = [{'role': 'user', 'content': 'exact prompt'}]
    client = ScriptedChatClient([
        TranscriptEntry(round=1, reply_sql='SELECT by_round FROM t'),
        TranscriptEntry(round=9, reply_sql='SELECT by_digest FROM t', request_digest=request_digest(messages)),
    ])
    assert client.complete(messages, 1) == 'SELECT by_digest FROM t'
    assert client.requests == [request_digest(messages)]


def test_transcript_file_errors(tmp_path):
    path = tmp_path / 'bad.jsonl'
    path.write_text('{"round": "x"}\n', encoding='utf-8')
    with pytest.raises(LlmTransportError):
        ScriptedChatClient.from_file(str(path))
    with pytest.raises(LlmTransportError):
        ScriptedChatClient.from_file(str(tmp_path / 'missing.jsonl'))


def test_http_client_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv('HQE_TEST_KEY', 'secret')
    client = HttpChatClient('http://llm.invalid/v1/chat/completions', api_key_env='HQE_TEST_KEY',
                            backoff_seconds=0)
    calls = []

    def fake_post(url, json=None, timeout=None):
        calls.append(json)
        if len(calls) == 1:
            raise requests.exceptions.ConnectionError('refused')
        return reply('SELECT 1 FROM t')

    monkeypatch.setattr(client.session, 'post', fake_post)
    assert client.complete([{'role': 'user', 'content': 'hi'}], 1) == 'SELECT 1 FROM t'
    assert len(calls) == 2
    assert calls[0]['temperature'] == 0.0
    assert client.session.headers['Authorization'] == 'Bearer secret'


def test_http_client_gives_up(monkeypatch):
    client = HttpChatClient('http://llm.invalid/v1', max_retries=2, backoff_seconds=0)
    monkeypatch.setattr(client.session, 'post', lambda url, json=None, timeout=None: FakeResponse({}, 503))
    with pytest.raises(LlmTransportError):
        client.complete([{'role': 'user', 'content': 'hi'}], 4)


def test_make_client_uses_transcript(config):
    client = make_client(config.llm, config.resolve(config.llm.mock_transcript))
    assert isinstance(client, ScriptedChatClient)
    assert len(client.entries) == 3


def test_make_client_requires_endpoint(config):
    with pytest.raises(LlmTransportError):
        make_client(config.llm.model_copy(update={'endpoint': None}))
