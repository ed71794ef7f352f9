"""Canonical JSON serialization and content digests.

One byte form per value: UTF-8, lexicographically sorted object keys,
compact separators, no NaN/Infinity. All digests, export bundles and wire
bodies are built on top of this so that equality of values implies equality
of bytes.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json(value) -> str:
    return json.dumps(
        value,
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
        allow_nan=False,
    )


def canonical_bytes(value) -> bytes:
    return canonical_json(value).encode("utf-8")


def digest(value) -> str:
    """SHA-256 hex digest of the canonical serialization of ``value``."""
    return hashlib.sha256(canonical_bytes(value)).hexdigest()
