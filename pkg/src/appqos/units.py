"""Quantity parsing for the text formats (``20M``, ``1ms``, ``0.5``)."""
from __future__ import annotations

import re

_SUFFIX = {
    "": 1.0,
    "k": 1e3,
    "K": 1e3,
    "M": 1e6,
    "G": 1e9,
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "%": 1e-2,
}
_QTY = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|inf)([A-Za-z%]*)$")


def parse_quantity(text: str) -> float:
    m = _QTY.match(text.strip())
    if not m or m.group(2) not in _SUFFIX:
        raise ValueError(f"bad quantity {text!r}")
    return float(m.group(1)) * _SUFFIX[m.group(2)]


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)
