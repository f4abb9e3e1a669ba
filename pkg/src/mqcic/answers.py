"""Extract a True/False verdict from free-form model output.

The last answer marker in the text decides.  Chain-of-thought output tends
to restate the options early, so earlier markers are ignored.
"""

from __future__ import annotations

import re

from .values import TruthValue

_VOCAB = {
    "true": TruthValue.TRUE,
    "yes": TruthValue.TRUE,
    "是": TruthValue.TRUE,
    "correct": TruthValue.TRUE,
    "false": TruthValue.FALSE,
    "no": TruthValue.FALSE,
    "否": TruthValue.FALSE,
}

_WORD = r"(?:true|false|yes|no|correct|是|否)(?![A-Za-z])"
_MARKER = (
    r"(?:final\s+answer|answer|verdict|conclusion)\s*(?:is|:|：|=|was)"
    r"|答案\s*(?:是|为)?\s*[:：]?"
    r"|结论\s*(?:是|为)?\s*[:：]?"
)
_OPENERS = r"[\s:：=\"'“”‘’*`(\[「『]*"

MARKER_RE = re.compile(_MARKER, re.IGNORECASE)
_AFTER_MARKER_RE = re.compile(rf"(?:{_MARKER}){_OPENERS}(?P<word>{_WORD})", re.IGNORECASE)
_BARE_RE = re.compile(rf"^{_OPENERS}(?P<word>{_WORD}){_OPENERS}[.。!！]?{_OPENERS}$", re.IGNORECASE)


def word_value(word: str) -> TruthValue:
    return _VOCAB[word.casefold()]


def parse_final_answer(raw: str) -> TruthValue:
    """Verdict after the last answer marker; Unknown when there is none."""
    if not raw:
        return TruthValue.UNKNOWN
    markers = list(MARKER_RE.finditer(raw))
    if markers:
        m = _AFTER_MARKER_RE.match(raw, markers[-1].start())
        return word_value(m.group("word")) if m else TruthValue.UNKNOWN
    bare = _BARE_RE.match(raw.strip())
    if bare:
        return word_value(bare.group("word"))
    return TruthValue.UNKNOWN
