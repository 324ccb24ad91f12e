"""
English analyzer: word segmentation, lowercasing, possessive stripping,
stopword removal and classic Porter stemming.
"""
from __future__ import annotations

import re
import unicodedata
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, List

from nltk.stem.porter import PorterStemmer

from config.settings import STOPWORDS_PATH

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*")
_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def load_stopwords(path=STOPWORDS_PATH) -> FrozenSet[str]:
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


STOPWORDS = load_stopwords()


@lru_cache(maxsize=200_000)
def stem(token: str) -> str:
    return _stemmer.stem(token, to_lowercase=False)


def tokenize(text: str) -> List[str]:
    """Lowercased word tokens with English possessives stripped (no stopping/stemming)."""
    if not text:
        return []
    text = unicodedata.normalize("NFKC", text).translate(_APOSTROPHES).lower()
    tokens = []
    for token in _TOKEN_RE.findall(text):
        if token.endswith("'s"):
            token = token[:-2]
        if token:
            tokens.append(token)
    return tokens


def analyze(text: str) -> List[str]:
    """Full analysis chain; deterministic, empty input gives []."""
    return [stem(token) for token in tokenize(text) if token not in STOPWORDS]
