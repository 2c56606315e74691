"""Tokenisation helpers and the bundled lexicons."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

# Words that never name an object. Relation words are included so that the
# label backend matches content nouns only.
STOPWORDS = frozenset(
    """
    a an the this that these those it its is are was were be been of and or
    to from with without at by for as there here which who whose one ones
    other another some any all each both very also then than
    between near next beside besides in inside on onto above below under
    underneath beneath over closest nearest farthest furthest close far
    left right front behind back top bottom side middle center centre
    """.split()
)

_IRREGULAR = {"shelves": "shelf", "knives": "knife", "boxes": "box", "glasses": "glass",
              "people": "person", "feet": "foot", "dresses": "dress", "couches": "couch",
              "benches": "bench", "dishes": "dish", "clothes": "clothes"}


def singular(word: str) -> str:
    """Cheap English singularisation, good enough for object nouns."""
    if word in _IRREGULAR:
        return _IRREGULAR[word]
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 4 and word.endswith(("ches", "shes", "xes", "sses")):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> set[str]:
    return {singular(t) for t in tokenize(text) if t not in STOPWORDS}


def _read_lexicon(name: str) -> tuple[str, ...]:
    raw = resources.files("spatialground.data").joinpath(name).read_text()
    out = []
    for line in raw.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            out.append(" ".join(line.split()))
    return tuple(out)


@lru_cache(maxsize=None)
def noun_lexicon() -> frozenset[str]:
    return frozenset(_read_lexicon("nouns.txt"))


@lru_cache(maxsize=None)
def modifier_lexicon() -> frozenset[str]:
    return frozenset(_read_lexicon("modifiers.txt"))


@lru_cache(maxsize=None)
def max_compound_length() -> int:
    return max(len(n.split()) for n in noun_lexicon())
