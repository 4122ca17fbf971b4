"""Append-only metrics log: one flat JSON record per line.

Floats are written as ASCII decimal with 17 significant digits, enough to
round-trip any float64 exactly, so a reader in any language can reconstruct
the run losslessly. Records carry no wall-clock or environment fields; two
runs of the same config and seed produce byte-identical files.
"""

from __future__ import annotations

import json
from typing import Iterator


def format_float(x: float) -> str:
    return format(x, ".17g")


def _render_value(v) -> str:
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"unsupported metrics value type {type(v).__name__}")


def render_record(record: dict) -> str:
    body = ", ".join(f"{json.dumps(k)}: {_render_value(v)}" for k, v in record.items())
    return "{" + body + "}"


class MetricsWriter:
    """Appends records to a file, one per line, in call order."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(render_record(record) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_records(path: str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
