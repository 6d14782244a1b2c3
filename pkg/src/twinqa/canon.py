"""Canonical JSON serialization and content hashing.

Replay determinism and evidence-bundle fingerprints both depend on one
serialization convention: sorted keys, compact separators, floats rounded
to a fixed precision, timestamps as ISO 8601 UTC with a ``Z`` suffix.
"""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone
from enum import Enum
from typing import Any

FLOAT_DECIMALS = 9


def format_utc(dt: datetime) -> str:
    """Render a timezone-aware datetime as ISO 8601 UTC with ``Z`` suffix."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime cannot be serialized")
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.isoformat().replace("+00:00", "Z")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    """Parse an ISO 8601 timestamp; the result is always UTC-aware."""
    raw = text[:-1] + "+00:00" if text.endswith("Z") else text
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no timezone")
    return dt.astimezone(timezone.utc)


def _canonize(value: Any) -> Any:
    if value is None or isinstance(value, (str, bool, int)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite float in canonical document")
        rounded = round(value, FLOAT_DECIMALS)
        return rounded
    if isinstance(value, datetime):
        return format_utc(value)
    if isinstance(value, Enum):
        return _canonize(value.value)
    if isinstance(value, (list, tuple)):
        return [_canonize(item) for item in value]
    if isinstance(value, (set, frozenset)):
        return sorted(_canonize(item) for item in value)
    if isinstance(value, dict):
        return {str(key): _canonize(item) for key, item in value.items()}
    raise TypeError(f"cannot canonicalize {type(value).__name__}")


def canonical_json(value: Any) -> str:
    return json.dumps(_canonize(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(value: Any) -> str:
    """SHA-256 hex digest of the canonical serialization."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()
