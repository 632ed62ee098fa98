from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import Issue

SCHEMA_VERSION = 1


def iter_records(path: str | Path) -> Iterator[tuple[int, dict[str, Any] | None, Issue | None]]:
    """Yield ``(line_no, record, issue)`` for each non-blank line.

    Exactly one of ``record``/``issue`` is set. Opening the file is not
    guarded, so a missing path surfaces as ``OSError``.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield line_no, None, Issue(str(path), line_no, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                yield line_no, None, Issue(str(path), line_no, "record is not a JSON object")
                continue
            yield line_no, obj, None


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    return n


def check_version(rec: dict[str, Any], source: str, line: int) -> Issue | None:
    version = rec.get("schema_version")
    if version != SCHEMA_VERSION:
        return Issue(source, line, f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return None
