"""Schemaless JSON-like documents and their canonical text form."""

from __future__ import annotations

import json
import math
from typing import Any, Union

# Carrier for context, action, reward and stored-state payloads.
Document = Union[dict, list, str, int, float, bool, None]


def canonical(doc: Document) -> str:
    """Serialize a document deterministically: sorted field names, compact, UTF-8."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def is_finite_number(x: Any) -> bool:
    """True for int/float values that are finite; bools do not count."""
    if isinstance(x, bool):
        return False
    return isinstance(x, (int, float)) and math.isfinite(x)
