"""Tokenization: lowercase, strip markup and symbols, split on whitespace."""

from __future__ import annotations

import re
import unicodedata

_HTML_RE = re.compile(r"<[^>\s][^>]*>")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"(?:^|(?<=\s))(?:@|/?u/)[A-Za-z0-9_-]+")

# Apostrophes and hyphens survive only between word characters ("don't",
# "state-of-the-art"); everything else non-alphanumeric becomes a space,
# which also removes emoji and stray symbols.
_INNER_APOS_RE = re.compile(r"(?<=\w)['’](?=\w)")
_INNER_HYPHEN_RE = re.compile(r"(?<=\w)-(?=\w)")
_APOS_MARK = "\x00"
_HYPHEN_MARK = "\x01"


def tokenize(text: str, lemmatizer=None, stopwords=None) -> list:
    """Split cleaned text into lowercase tokens.

    ``lemmatizer`` is an optional token -> token callable applied last;
    ``stopwords`` is an optional set of tokens to drop after lemmatization.
    """
    t = _HTML_RE.sub(" ", text)
    t = _URL_RE.sub(" ", t)
    t = _MENTION_RE.sub(" ", t)
    t = t.lower()
    t = _INNER_APOS_RE.sub(_APOS_MARK, t)
    t = _INNER_HYPHEN_RE.sub(_HYPHEN_MARK, t)
    chars = []
    for ch in t:
        if ch == _APOS_MARK:
            chars.append("'")
        elif ch == _HYPHEN_MARK:
            chars.append("-")
        elif ch.isalnum() or ch.isspace():
            # reject symbol/emoji codepoints that count as alphanumeric-ish
            if unicodedata.category(ch)[0] in ("L", "N") or ch.isspace():
                chars.append(ch)
            else:
                chars.append(" ")
        else:
            chars.append(" ")
    tokens = "".join(chars).split()
    if lemmatizer is not None:
        tokens = [lemmatizer(tok) for tok in tokens]
    if stopwords:
        tokens = [tok for tok in tokens if tok not in stopwords]
    return tokens
