"""Shared lexical helpers: tokenization, overlap scoring, whole-word matching."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens; splits on every non-alphanumeric run."""
    return _TOKEN_RE.findall(text.lower())


def token_set(text: str) -> set[str]:
    return set(tokenize(text))


def overlap_score(query: str, doc: str) -> float:
    """Fraction of distinct query tokens that occur in the document.

    Always in [0, 1]; 0.0 when the query has no tokens. Adding a token that
    the document contains never lowers the score.
    """
    q = token_set(query)
    if not q:
        return 0.0
    d = token_set(doc)
    return len(q & d) / len(q)


def whole_word_pattern(phrase: str) -> re.Pattern[str]:
    """Case-insensitive whole-word pattern for a (possibly multi-word) phrase.

    Multi-word phrases match as a phrase: "dried ginger" does not match a
    bare "ginger", and "ginger" does not match inside "gingerbread".
    """
    words = phrase.split()
    if not words:
        raise ValueError("empty phrase")
    body = r"\s+".join(re.escape(w) for w in words)
    return re.compile(r"(?<![A-Za-z0-9])" + body + r"(?![A-Za-z0-9])", re.IGNORECASE)


def contains_whole_word(text: str, phrase: str) -> bool:
    return whole_word_pattern(phrase).search(text) is not None


def ws_token_count(text: str) -> int:
    """Whitespace-delimited token count, the default budget counter."""
    return len(text.split())
