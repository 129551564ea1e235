#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
隐藏查询抽取命令行工具
子命令: extract / seed-only / check / replay / gen-db / corpus
退出码: 0 成功；1 抽取失败；2 检查器发现反例；3 配置或适用范围错误
"""

import argparse
import logging
import os
import sys

from corpus import corpus_passed, run_corpus, summarize
from hqe_config import load_config
from hqe_errors import (ConfigError, DataLoadError, HqeError, PromptError, SchemaError, ScopeError,
                        UnsupportedFeatureError)
from session import Session, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_COUNTEREXAMPLE = 2
EXIT_CONFIG = 3

CONFIG_ERRORS = (ConfigError, ScopeError, SchemaError, DataLoadError, PromptError, UnsupportedFeatureError)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='配置文件（.toml / .yaml），默认 hqeExtract/config/hqe_config.toml')
    common.add_argument('--oracle-cmd', help='外部黑盒命令（覆盖 oracle.command）')
    common.add_argument('--mock-transcript', help='模拟大模型对话脚本（JSONL）')
    common.add_argument('--max-trials', type=int, help='检查器试验次数')
    common.add_argument('--seed', type=int, help='检查器 / 随机实例的起始种子')
    common.add_argument('--out-dir', help='会话目录的父目录，默认当前目录')
    common.add_argument('--verbose', action='store_true', help='输出 DEBUG 日志')

    parser = argparse.ArgumentParser(description='隐藏查询抽取工具')
    subparsers = parser.add_subparsers(dest='command', help='可用命令')

    extract_parser = subparsers.add_parser('extract', parents=[common], help='完整流水线 XRE → XFE → 检查')
    extract_parser.add_argument('--no-check', action='store_true', help='跳过结果等价检查')

    subparsers.add_parser('seed-only', parents=[common], help='只运行 XRE，输出种子查询')

    check_parser = subparsers.add_parser('check', parents=[common], help='检查给定 SQL 与黑盒是否结果等价')
    check_parser.add_argument('sql', help='SQL 文件路径或 SQL 文本')

    replay_parser = subparsers.add_parser('replay', parents=[common], help='按会话日志重放并核对结果摘要')
    replay_parser.add_argument('journal', help='journal.jsonl 路径')

    gen_parser = subparsers.add_parser('gen-db', parents=[common], help='生成随机实例并写出 CSV')
    gen_parser.add_argument('output', nargs='?', help='输出目录，默认会话目录下的 random-db')

    corpus_parser = subparsers.add_parser('corpus', parents=[common], help='运行内置隐藏查询语料')
    corpus_parser.add_argument('--suites', nargs='+', default=['flat', 'nested', 'mutants', 'running'],
                               choices=['flat', 'nested', 'mutants', 'running'], help='要运行的套件')
    corpus_parser.add_argument('--count', type=int, default=20, help='平坦 / 嵌套套件各生成的查询数')
    corpus_parser.add_argument('--csv', help='把结果表写到 CSV 文件')
    return parser


def _read_sql_arg(value: str) -> str:
    if os.path.isfile(value):
        with open(value, 'r', encoding='utf-8') as f:
            return f.read()
    return value


def run(args) -> int:
    """执行一个子命令并返回退出码"""
    config = load_config(args.config, overrides={
        'oracle': {'command': args.oracle_cmd},
        'llm': {'mock_transcript': os.path.abspath(args.mock_transcript) if args.mock_transcript else None},
        'checker': {'trials': args.max_trials, 'seed': args.seed},
    })
    session = Session(config, out_dir=args.out_dir)
    try:
        if args.command in ('extract', 'seed-only'):
            report = session.run_extract(seed_only=args.command == 'seed-only',
                                         check=not getattr(args, 'no_check', False))
            print(f"会话目录: {session.session_dir}")
            print(f"种子查询: {report.seed_sql}")
            if report.final_sql:
                print(f"最终查询（{report.final_source}）: {report.final_sql}")
            print(f"状态: {report.status}")
            if report.status == 'failure':
                return EXIT_FAILURE
            if report.status == 'counterexample':
                return EXIT_COUNTEREXAMPLE
            return EXIT_OK

        elif args.command == 'check':
            verdict = session.run_check(_read_sql_arg(args.sql))
            print(f"检查结论: {verdict.status}（{verdict.passed}/{verdict.trials_run} 个试验一致）")
            if verdict.counterexample is not None:
                print(f"反例: 种子 {verdict.counterexample.db_seed}，目录 {verdict.counterexample.bundle_dir}")
                return EXIT_COUNTEREXAMPLE
            return EXIT_OK

        elif args.command == 'replay':
            report = session.run_replay(args.journal)
            print(f"重放 {report.invocations} 次调用，{report.matched} 次摘要一致，"
                  f"{len(report.state_mismatches) + len(report.result_mismatches)} 处不一致")
            return EXIT_OK if report.ok else EXIT_FAILURE

        elif args.command == 'gen-db':
            output = args.output or os.path.join(session.session_dir, 'random-db')
            seed = args.seed if args.seed is not None else config.checker.seed
            written = session.run_gen_db(seed, output)
            print(f"已写出 {len(written)} 个 CSV 到 {output}")
            return EXIT_OK

        elif args.command == 'corpus':
            frame = run_corpus(session, suites=args.suites, count=args.count,
                               seed=args.seed if args.seed is not None else 0)
            columns = ['suite', 'name', 'kind', 'status', 'detail', 'invocations', 'seconds']
            print(frame[columns].to_string(index=False))
            print(summarize(frame))
            if args.csv:
                frame.to_csv(args.csv, index=False)
            return EXIT_OK if corpus_passed(frame) else EXIT_FAILURE
        return EXIT_FAILURE
    finally:
        session.close()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    setup_logging(args.verbose)
    try:
        return run(args)
    except CONFIG_ERRORS as e:
        logger.error(f"配置或适用范围错误: {e}")
        print(f"操作失败: {e}")
        return EXIT_CONFIG
    except HqeError as e:
        logger.error(f"抽取失败: {e}")
        print(f"操作失败: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
