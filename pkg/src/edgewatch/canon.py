"""Canonical object notation shared by the wire protocol, config files,
spools, and store logs.

One object per line: UTF-8 JSON with sorted keys, no insignificant
whitespace, and no non-finite numbers.  Python's float repr is the
shortest round-tripping decimal form, so reals survive a dumps/loads
cycle bit-exactly.
"""

from __future__ import annotations

import json
import math
from typing import Any


class CanonError(ValueError):
    """Value cannot be represented in canonical notation."""


def dumps(obj: Any) -> str:
    """Serialize to a single canonical line (no trailing newline)."""
    try:
        return json.dumps(
            obj, sort_keys=True, separators=(",", ":"),
            allow_nan=False, ensure_ascii=False,
        )
    except (TypeError, ValueError) as exc:
        raise CanonError(str(exc)) from exc


def dump_line(obj: Any) -> bytes:
    """Serialize to one newline-terminated UTF-8 line."""
    return dumps(obj).encode("utf-8") + b"\n"


def loads(text: str | bytes) -> Any:
    """Parse canonical (or any JSON) text; rejects non-finite numbers."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CanonError(f"not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CanonError(f"malformed object notation: {exc}") from exc
    _reject_non_finite(obj)
    return obj


def _reject_non_finite(obj: Any) -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise CanonError("non-finite number")
    elif isinstance(obj, list):
        for item in obj:
            _reject_non_finite(item)
    elif isinstance(obj, dict):
        for value in obj.values():
            _reject_non_finite(value)


def read_log(path) -> list[Any]:
    """Read every complete line of an append-only canonical log.

    A truncated final line (crash mid-append) is skipped, matching the
    recovery behaviour of the writers.
    """
    records = []
    with open(path, "rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n"):
                break
            line = raw.strip()
            if not line:
                continue
            records.append(loads(line))
    return records
