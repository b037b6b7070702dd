"""Newline-delimited record IO.

Every inter-stage artifact is a JSON-lines file; gzip-compressed variants
are recognized by the ``.gz`` suffix.
"""

from __future__ import annotations

import gzip
import json
from pathlib import Path
from typing import Any, IO, Iterable, Iterator

from .errors import DataError


def open_text(path: str | Path, mode: str = "rt") -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, encoding="utf-8", errors="replace")
    return open(path, mode, encoding="utf-8", errors="replace")


def read_records(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield one parsed object per non-blank line.

    Raises DataError on the first malformed line; callers that must survive
    corruption use :func:`read_records_lenient`.
    """
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc


def read_records_lenient(path: str | Path) -> Iterator[dict[str, Any] | None]:
    """Like read_records but yields None for malformed lines instead of raising."""
    with open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                yield None
                continue
            yield obj if isinstance(obj, dict) else None


def dump_record(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    """Write records as one JSON object per line; returns the count written."""
    n = 0
    with open_text(path, "wt") as fh:
        for record in records:
            fh.write(dump_record(record))
            fh.write("\n")
            n += 1
    return n


def write_json(path: str | Path, obj: Any) -> None:
    """Pretty, key-sorted JSON for reports; deterministic bytes for equal input."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
