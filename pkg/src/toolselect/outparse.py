"""Strict parser for the ``{api_name: [NAME]}`` answer format.

Only the outer message and the text around NAME may carry extra
whitespace; every structural character, including the single space after
the colon, must be exactly as rendered. Failures are returned as data.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

KEY = "api_name"
_PREFIX = "{" + KEY + ": ["
_SUFFIX = "]}"

_EXACT = re.compile(r"\{api_name: \[([^\[\]{}]*)\]\}", re.DOTALL)
_LOOSE = re.compile(r"\{([^\[\]{}]*)\[([^\]}]*)\]([^\[\]{}]*)\}", re.DOTALL)
_SPAN = re.compile(r"\[([^\[\]{}]*)\]")


class FailureReason(str, Enum):
    MISSING_BRACE = "missing_brace"
    MISSING_BRACKET = "missing_bracket"
    WRONG_KEY = "wrong_key"
    REORDERED = "reordered"
    EXTRA_PAYLOAD = "extra_payload"
    EMPTY_NAME = "empty_name"


@dataclass(frozen=True)
class ParsedPrediction:
    format_ok: bool
    api_name: str | None = None
    failure_reason: FailureReason | None = None

    @property
    def salvaged(self) -> bool:
        return not self.format_ok and self.api_name is not None


def _salvage(s: str) -> str | None:
    spans = _SPAN.findall(s)
    if len(spans) != 1:
        return None
    name = spans[0].strip()
    return name or None


def _classify(s: str) -> FailureReason:
    if "{" not in s or "}" not in s:
        return FailureReason.MISSING_BRACE
    if "[" not in s or "]" not in s:
        return FailureReason.MISSING_BRACKET
    ob, cb = s.find("{"), s.rfind("}")
    olb, clb = s.find("["), s.rfind("]")
    if not ob < olb < clb < cb:
        return FailureReason.REORDERED
    before, after = s[:olb], s[clb + 1:]
    if KEY not in before and KEY in after:
        return FailureReason.REORDERED
    if ":" not in before and ":" in after:
        return FailureReason.REORDERED
    if _EXACT.search(s):
        return FailureReason.EXTRA_PAYLOAD
    loose = _LOOSE.fullmatch(s)
    if loose is None:
        return FailureReason.EXTRA_PAYLOAD
    key_segment, _, tail = loose.groups()
    if tail.strip():
        return FailureReason.EXTRA_PAYLOAD
    if key_segment != KEY + ": " or tail:
        return FailureReason.WRONG_KEY
    return FailureReason.EXTRA_PAYLOAD


def parse_prediction(raw: str) -> ParsedPrediction:
    """Parse one raw model response.

    Returns ``format_ok=True`` only for an exact match of the answer format.
    On failure the most specific reason is reported, and when the text holds
    exactly one ``[...]`` span its content is salvaged as ``api_name`` so
    accuracy can still be scored.
    """
    s = raw.strip()
    m = _EXACT.fullmatch(s)
    if m:
        name = m.group(1).strip()
        if name:
            return ParsedPrediction(True, name)
        return ParsedPrediction(False, None, FailureReason.EMPTY_NAME)
    return ParsedPrediction(False, _salvage(s), _classify(s))


def render_prediction(api_name: str) -> str:
    """Inverse of :func:`parse_prediction` for valid names."""
    if not api_name or api_name != api_name.strip():
        raise ValueError("api name must be non-empty without surrounding whitespace")
    if any(ch in api_name for ch in "[]{}"):
        raise ValueError(f"api name {api_name!r} may not contain brackets or braces")
    return _PREFIX + api_name + _SUFFIX
