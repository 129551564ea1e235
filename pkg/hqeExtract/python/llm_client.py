#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
大模型客户端模块
提供对话补全接口的 HTTP 客户端与按脚本回放的模拟客户端
"""

import hashlib
import json
import logging
import os
import re
import time
from typing import Dict, List, Optional, Sequence

import requests
from pydantic import BaseModel, ValidationError

from hqe_errors import LlmTransportError

logger = logging.getLogger(__name__)

Message = Dict[str, str]

_FENCE_RE = re.compile(r"```(?:sql|SQL)?\s*(.*?)```", re.DOTALL)


def extract_sql(reply: str) -> str:
    """从回复中取出 SQL：去掉 Markdown 代码块标记与结尾分号"""
    text = reply or ''
    m = _FENCE_RE.search(text)
    if m:
        text = m.group(1)
    return text.strip().rstrip(';').strip()


def request_digest(messages: Sequence[Message]) -> str:
    """最后一条用户消息的摘要，用于按内容匹配脚本回复"""
    content = messages[-1]['content'] if messages else ''
    return hashlib.sha256(content.encode('utf-8')).hexdigest()


class HttpChatClient:
    """对话补全 HTTP 客户端"""

    def __init__(self, endpoint: str, model: str = 'gpt-4o', api_key_env: str = 'HQE_LLM_API_KEY',
                 temperature: float = 0.0, max_retries: int = 3, backoff_seconds: float = 1.0,
                 timeout: float = 120.0):
        """
        初始化客户端

        Args:
            endpoint: 对话补全接口地址
            model: 模型名称
            api_key_env: 保存 API 密钥的环境变量名
            temperature: 采样温度
            max_retries: 传输失败时的最大重试次数
            backoff_seconds: 重试退避基数（指数增长）
            timeout: 单次请求超时（秒）
        """
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout
        self.session = requests.Session()
        self.session.headers.update({
            'Content-Type': 'application/json',
            'Accept': 'application/json'
        })
        api_key = os.environ.get(api_key_env)
        if api_key:
            self.session.headers['Authorization'] = f"Bearer {api_key}"
        else:
            logger.warning(f"环境变量 {api_key_env} 未设置，请求将不带 API 密钥")

    def complete(self, messages: List[Message], round_no: int) -> str:
        """
        发送对话并返回回复文本

        Args:
            messages: 完整对话历史
            round_no: 轮次编号（仅用于日志）

        Returns:
            回复文本
        """
        body = {'model': self.model, 'messages': messages, 'temperature': self.temperature}
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self.session.post(self.endpoint, json=body, timeout=self.timeout)
                response.raise_for_status()
                data = response.json()
                return data['choices'][0]['message']['content']
            except (requests.exceptions.RequestException, ValueError, KeyError, IndexError, TypeError) as e:
                last_error = e
                if attempt < self.max_retries:
                    delay = self.backoff_seconds * (2 ** attempt)
                    logger.warning(f"第 {round_no} 轮请求失败（第 {attempt + 1} 次）: {e}，{delay:.1f}s 后重试")
                    time.sleep(delay)
        raise LlmTransportError(f"第 {round_no} 轮请求失败，已重试 {self.max_retries} 次: {last_error}")

    def close(self):
        self.session.close()


class TranscriptEntry(BaseModel):
    round: int
    reply_sql: str
    request_digest: Optional[str] = None


class ScriptedChatClient:
    """按脚本回放回复的模拟客户端：优先按请求摘要匹配，否则按轮次"""

    def __init__(self, entries: Sequence[TranscriptEntry]):
        self.entries = list(entries)
        self.by_digest = {e.request_digest: e for e in self.entries if e.request_digest}
        self.by_round = {e.round: e for e in self.entries}
        self.requests: List[str] = []

    @classmethod
    def from_file(cls, path: str) -> 'ScriptedChatClient':
        entries = []
        line_no = 0
        try:
            with open(path, 'r', encoding='utf-8') as f:
                for line_no, line in enumerate(f, 1):
                    line = line.strip()
                    if line:
                        entries.append(TranscriptEntry.model_validate(json.loads(line)))
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise LlmTransportError(f"无法读取模拟对话脚本 {path}（第 {line_no} 行附近）: {e}")
        logger.info(f"加载模拟对话脚本 {path}: {len(entries)} 条回复")
        return cls(entries)

    @classmethod
    def from_replies(cls, replies: Sequence[str]) -> 'ScriptedChatClient':
        return cls([TranscriptEntry(round=i, reply_sql=r) for i, r in enumerate(replies, 1)])

    def complete(self, messages: List[Message], round_no: int) -> str:
        digest = request_digest(messages)
        self.requests.append(digest)
        entry = self.by_digest.get(digest) or self.by_round.get(round_no)
        if entry is None:
            raise LlmTransportError(f"模拟对话脚本没有第 {round_no} 轮的回复")
        return entry.reply_sql

    def close(self):
        pass


def make_client(llm_config, transcript_path: Optional[str] = None):
    """按配置构造客户端：有模拟脚本时使用脚本回放"""
    if transcript_path:
        return ScriptedChatClient.from_file(transcript_path)
    if not llm_config.endpoint:
        raise LlmTransportError("未配置大模型接口地址，也未提供模拟对话脚本")
    return HttpChatClient(llm_config.endpoint, llm_config.model, llm_config.api_key_env,
                          llm_config.temperature, llm_config.max_retries, llm_config.backoff_seconds,
                          llm_config.request_timeout)
