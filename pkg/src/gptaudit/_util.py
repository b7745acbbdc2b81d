"""Small shared helpers: timestamps, digests, JSON Lines encoding."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from typing import Any, Iterable


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def format_ts(ts: datetime) -> str:
    """RFC 3339 in UTC with microseconds, e.g. ``2026-10-16T09:30:00.000123Z``."""
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_ts(raw: str) -> datetime:
    # fromisoformat on 3.10 does not accept a trailing "Z"
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without offset: {raw!r}")
    return ts.astimezone(timezone.utc)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def json_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def jsonl_bytes(rows: Iterable[Any]) -> bytes:
    return "".join(json_line(r) + "\n" for r in rows).encode("utf-8")
