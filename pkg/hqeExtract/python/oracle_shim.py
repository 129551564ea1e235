#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
外部黑盒示例封装
按行协议读取 "RUN <workspace>"，在工作目录的 schema.sql 与 CSV 上执行给定的 SQL 文件，
结果写入工作目录下的 result.csv 并回复 "OK <csv>"，失败时回复 "ERR <code> <message>"

用法: python oracle_shim.py hidden.sql
"""

import os
import sys

from hqe_errors import HqeError, SqlError
from minisql import parse_sql
from relcore import load_database
from sql_executor import execute


def serve(sql_path: str):
    with open(sql_path, 'r', encoding='utf-8') as f:
        query = parse_sql(f.read())
    for line in sys.stdin:
        line = line.strip()
        if not line.startswith('RUN '):
            print(f"ERR protocol 无法识别的请求", flush=True)
            continue
        workspace = line[4:].strip()
        try:
            db = load_database(os.path.join(workspace, 'schema.sql'), workspace)
            result = execute(query, db)
            out = os.path.join(workspace, 'result.csv')
            result.to_frame().to_csv(out, index=False)
            print(f"OK {out}", flush=True)
        except SqlError as e:
            print(f"ERR {e.code} {e.message}", flush=True)
        except HqeError as e:
            print(f"ERR protocol {e}", flush=True)


if __name__ == '__main__':
    if len(sys.argv) != 2:
        print(__doc__)
        sys.exit(3)
    serve(sys.argv[1])
