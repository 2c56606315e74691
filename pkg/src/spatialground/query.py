"""Referring-expression decomposition and the noun-count complexity metric.

``parse_query_rules`` splits an expression into the target noun phrase,
its attributes, and the landmark phrases with their spatial relation::

    >>> q = parse_query_rules("a chair between the dining table and window")
    >>> q.target, [(lm.phrase, lm.relation.value) for lm in q.landmarks]
    ('chair', [('dining table', 'between'), ('window', 'between')])
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .errors import ParseFailure, UpstreamError
from .text import STOPWORDS, max_compound_length, modifier_lexicon, noun_lexicon, singular

if TYPE_CHECKING:
    from .chat import ChatClient

logger = logging.getLogger(__name__)


class SpatialRelation(str, enum.Enum):
    BETWEEN = "between"
    NEAR = "near"
    IN = "in"
    ON = "on"
    ABOVE = "above"
    BELOW = "below"
    CLOSEST = "closest"
    FARTHEST = "farthest"
    UNSUPPORTED = "unsupported"

    @property
    def arity(self) -> int:
        return 2 if self is SpatialRelation.BETWEEN else 1


@dataclass(frozen=True)
class Landmark:
    phrase: str
    relation: SpatialRelation
    # original wording, kept only for UNSUPPORTED relations
    original: str = ""

    def to_dict(self) -> dict:
        d = {"phrase": self.phrase, "relation": self.relation.value}
        if self.original:
            d["original"] = self.original
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Landmark":
        return cls(str(d["phrase"]), SpatialRelation(str(d["relation"]).lower()), str(d.get("original", "")))


@dataclass(frozen=True)
class ParsedQuery:
    target: str
    attributes: tuple[str, ...] = ()
    landmarks: tuple[Landmark, ...] = ()
    raw: str = ""
    source: str = field(default="rules", compare=False)
    retries: int = field(default=0, compare=False)
    degraded: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        validate_parsed(self)

    @property
    def grounding_phrase(self) -> str:
        """Target phrase with its attributes, as handed to the target finder."""
        return " ".join([*self.attributes, self.target])

    def to_dict(self) -> dict:
        return {"target": self.target, "attributes": list(self.attributes),
                "landmarks": [lm.to_dict() for lm in self.landmarks], "raw": self.raw}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, **meta: Any) -> "ParsedQuery":
        return cls(
            target=str(d["target"]).strip(),
            attributes=tuple(str(a).strip() for a in d.get("attributes", ())),
            landmarks=tuple(Landmark.from_dict(lm) for lm in d.get("landmarks", ())),
            raw=str(d.get("raw", "")),
            **meta,
        )

    @classmethod
    def from_json(cls, text: str) -> "ParsedQuery":
        return cls.from_dict(json.loads(text))


def validate_parsed(q: ParsedQuery) -> None:
    if not isinstance(q.target, str) or not q.target.strip():
        raise ValueError("target must be a non-empty phrase")
    for lm in q.landmarks:
        if not isinstance(lm.relation, SpatialRelation):
            raise ValueError(f"unknown relation {lm.relation!r}")
        if not lm.phrase.strip():
            raise ValueError("landmark phrase must be non-empty")
        if lm.phrase.strip().lower() == q.target.strip().lower():
            raise ValueError(f"landmark {lm.phrase!r} repeats the target")
    n_between = sum(lm.relation is SpatialRelation.BETWEEN for lm in q.landmarks)
    if n_between not in (0, 2):
        raise ValueError(f"between needs exactly two landmarks, got {n_between}")


# ---------------------------------------------------------------------------
# Rule parser

_RELATION_WORDS: dict[str, SpatialRelation] = {
    "between": SpatialRelation.BETWEEN,
    "in between": SpatialRelation.BETWEEN,
    "next to": SpatialRelation.NEAR,
    "beside": SpatialRelation.NEAR,
    "near": SpatialRelation.NEAR,
    "close to": SpatialRelation.NEAR,
    "by": SpatialRelation.NEAR,
    "against": SpatialRelation.NEAR,
    "closest to": SpatialRelation.CLOSEST,
    "nearest to": SpatialRelation.CLOSEST,
    "closest": SpatialRelation.CLOSEST,
    "nearest": SpatialRelation.CLOSEST,
    "farthest from": SpatialRelation.FARTHEST,
    "furthest from": SpatialRelation.FARTHEST,
    "farthest": SpatialRelation.FARTHEST,
    "furthest": SpatialRelation.FARTHEST,
    "on top of": SpatialRelation.ON,
    "on": SpatialRelation.ON,
    "atop": SpatialRelation.ON,
    "in": SpatialRelation.IN,
    "inside": SpatialRelation.IN,
    "inside of": SpatialRelation.IN,
    "within": SpatialRelation.IN,
    "above": SpatialRelation.ABOVE,
    "over": SpatialRelation.ABOVE,
    "below": SpatialRelation.BELOW,
    "under": SpatialRelation.BELOW,
    "underneath": SpatialRelation.BELOW,
    "beneath": SpatialRelation.BELOW,
    # view-dependent: no camera pose is available, so these stay unsupported
    "to the left of": SpatialRelation.UNSUPPORTED,
    "to the right of": SpatialRelation.UNSUPPORTED,
    "on the left of": SpatialRelation.UNSUPPORTED,
    "on the right of": SpatialRelation.UNSUPPORTED,
    "on the left side of": SpatialRelation.UNSUPPORTED,
    "on the right side of": SpatialRelation.UNSUPPORTED,
    "left of": SpatialRelation.UNSUPPORTED,
    "right of": SpatialRelation.UNSUPPORTED,
    "in front of": SpatialRelation.UNSUPPORTED,
    "behind": SpatialRelation.UNSUPPORTED,
    "in back of": SpatialRelation.UNSUPPORTED,
    "facing": SpatialRelation.UNSUPPORTED,
    "across from": SpatialRelation.UNSUPPORTED,
    "opposite": SpatialRelation.UNSUPPORTED,
    "opposite to": SpatialRelation.UNSUPPORTED,
}
_RELATION_SEQS = sorted(((tuple(k.split()), v) for k, v in _RELATION_WORDS.items()), key=lambda kv: -len(kv[0]))

_TOK_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[.,;:!?]")
_PUNCT = frozenset(".,;:!?")


@dataclass(frozen=True)
class _Tok:
    text: str
    start: int
    end: int


def _tokens(text: str) -> list[_Tok]:
    return [_Tok(m.group(), m.start(), m.end()) for m in _TOK_RE.finditer(text.lower())]


def _match_relation(words: list[str], i: int) -> tuple[int, SpatialRelation] | None:
    for seq, rel in _RELATION_SEQS:
        if tuple(words[i:i + len(seq)]) == seq:
            return len(seq), rel
    return None


def _match_noun(words: list[str], i: int) -> int:
    """Length of the longest lexicon noun starting at ``words[i]`` (0 if none)."""
    nouns = noun_lexicon()
    for n in range(min(max_compound_length(), len(words) - i), 0, -1):
        chunk = words[i:i + n]
        if chunk[-1] in _PUNCT:
            continue
        cand = " ".join(chunk[:-1] + [singular(chunk[-1])])
        if cand in nouns or " ".join(chunk) in nouns:
            return n
    return 0


def _noun_phrase(words: list[str], lo: int, hi: int) -> tuple[str, tuple[str, ...], int] | None:
    """First noun phrase in ``words[lo:hi]``: (head, attributes, head index).

    Lexicon nouns win; otherwise the first run of content words that are not
    modifiers is taken as an out-of-lexicon head.
    """
    mods = modifier_lexicon()
    head = None
    i = lo
    while i < hi:
        n = _match_noun(words, i)
        if n and i + n <= hi:
            nxt = words[i + n] if i + n < hi else ""
            # "light brown chair": a noun that is also a modifier, directly followed
            # by a modifier or another noun, is acting as a modifier
            if n == 1 and words[i] in mods and (nxt in mods or (nxt and _match_noun(words, i + 1))):
                i += 1
                continue
            # a run of adjacent nouns is one compound ("kitchen cabinet door")
            j = i + n
            while j < hi:
                m = _match_noun(words, j)
                if not m or j + m > hi:
                    break
                j += m
            head = (i, j)
            break
        i += 1
    if head is None:
        fallback = [k for k in range(lo, hi) if words[k] not in STOPWORDS and words[k] not in mods
                    and words[k] not in _PUNCT and not words[k].isdigit()]
        if not fallback:
            return None
        # keep the phrase contiguous up to the next stopword or punctuation
        k = fallback[0]
        j = k + 1
        while j < hi and j in fallback:
            j += 1
        head = (k, j)
    s, e = head
    words_head = words[s:e - 1] + [singular(words[e - 1])]
    attrs = []
    k = s - 1
    while k >= lo and words[k] in mods:
        attrs.append(words[k])
        k -= 1
    return " ".join(words_head), tuple(reversed(attrs)), s


def parse_query_rules(text: str) -> ParsedQuery:
    """Deterministic decomposition of a referring expression.

    Raises:
        ParseFailure: when no head noun can be found for the target.
    """
    if not text or not text.strip():
        raise ParseFailure("empty query", text)
    toks = _tokens(text)
    words = [t.text for t in toks]

    # relation keywords, scanned left to right with longest match
    rels: list[tuple[int, int, SpatialRelation]] = []
    i = 0
    while i < len(words):
        m = _match_relation(words, i)
        if m:
            n, rel = m
            rels.append((i, i + n, rel))
            i += n
        else:
            i += 1

    # the target lives before the first relation keyword that follows a noun
    target_end = len(words)
    for k, (s, _, _) in enumerate(rels):
        if _noun_phrase(words, 0, s) is not None:
            target_end = s
            rels = rels[k:]
            break
    else:
        rels = []
    np_ = _noun_phrase(words, 0, target_end)
    if np_ is None:
        span = (toks[0].start, toks[target_end - 1].end) if toks and target_end else (0, len(text))
        raise ParseFailure(f"no head noun found in {text[span[0]:span[1]]!r}", text, span)
    target, attrs, _ = np_

    landmarks: list[Landmark] = []
    for k, (s, e, rel) in enumerate(rels):
        stop = rels[k + 1][0] if k + 1 < len(rels) else len(words)
        for p in range(e, stop):
            if words[p] in _PUNCT:
                stop = p
                break
        original = " ".join(words[s:e]) if rel is SpatialRelation.UNSUPPORTED else ""
        if rel is SpatialRelation.BETWEEN:
            try:
                split = words.index("and", e, stop)
            except ValueError:
                span = (toks[s].start, toks[stop - 1].end)
                raise ParseFailure("'between' needs two landmarks joined by 'and'", text, span) from None
            parts = [_noun_phrase(words, e, split), _noun_phrase(words, split + 1, stop)]
            if any(p is None for p in parts):
                span = (toks[s].start, toks[stop - 1].end)
                raise ParseFailure("'between' needs two landmark noun phrases", text, span)
            for p in parts:
                landmarks.append(Landmark(_landmark_phrase(p), rel))
        else:
            p = _noun_phrase(words, e, stop)
            if p is None:
                continue
            landmarks.append(Landmark(_landmark_phrase(p), rel, original))

    landmarks = _dedupe_landmarks(landmarks, target)
    return ParsedQuery(target=target, attributes=attrs, landmarks=tuple(landmarks), raw=text)


def _landmark_phrase(np_: tuple[str, tuple[str, ...], int]) -> str:
    head, attrs, _ = np_
    return " ".join([*attrs, head])


def _dedupe_landmarks(landmarks: list[Landmark], target: str) -> list[Landmark]:
    out: list[Landmark] = []
    seen = set()
    for lm in landmarks:
        if lm.phrase == target:
            continue
        key = (lm.phrase, lm.relation)
        if key in seen:
            continue
        seen.add(key)
        out.append(lm)
    # a between pair that lost a member degrades to near
    betweens = [lm for lm in out if lm.relation is SpatialRelation.BETWEEN]
    if len(betweens) == 1:
        out = [Landmark(lm.phrase, SpatialRelation.NEAR) if lm.relation is SpatialRelation.BETWEEN else lm
               for lm in out]
    return out


# ---------------------------------------------------------------------------
# Noun counting


def count_nouns(text: str) -> int:
    """Number of maximal noun phrases whose head is in the noun lexicon.

    Adjacent nouns form one compound, so "dining table" and "kitchen sink"
    count once each.
    """
    words = [t.text for t in _tokens(text)]
    mods = modifier_lexicon()
    count = 0
    in_run = False
    i = 0
    while i < len(words):
        n = _match_noun(words, i)
        if n:
            nxt = words[i + n] if i + n < len(words) else ""
            if n == 1 and words[i] in mods and (nxt in mods or (nxt and _match_noun(words, i + 1))):
                in_run = False
                i += 1
                continue
            if not in_run:
                count += 1
            in_run = True
            i += n
        else:
            in_run = False
            i += 1
    return count


# ---------------------------------------------------------------------------
# LLM parser

PARSER_INSTRUCTION = """\
You decompose referring expressions for a 3D visual grounding system.
Return ONLY a JSON object with this schema:
{"target": "<head noun phrase of the object being referred to>",
 "attributes": ["<colour/shape/material modifiers of the target>", ...],
 "landmarks": [{"phrase": "<landmark noun phrase>", "relation": "<relation>"}, ...]}
relation must be one of: between, near, in, on, above, below, closest, farthest, unsupported.
"between" uses exactly two landmark entries. Use "unsupported" for view-dependent
relations such as left, right, front or behind. Landmarks must differ from the target.
"""


def _extract_json_object(reply: str) -> dict:
    start = reply.find("{")
    end = reply.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("reply contains no JSON object")
    obj = json.loads(reply[start:end + 1])
    if not isinstance(obj, dict):
        raise ValueError("reply JSON is not an object")
    return obj


def parse_query_llm(text: str, client: "ChatClient") -> ParsedQuery:
    """Ask the chat model for the decomposition, validating its reply.

    One retry quotes the validation error back to the model; after a second
    failure (or any upstream error) the rule parser's result is returned with
    ``degraded=True``.
    """
    messages = [
        {"role": "system", "content": PARSER_INSTRUCTION},
        {"role": "user", "content": f"Query: {text}"},
    ]
    retries = 0
    for attempt in range(2):
        try:
            reply = client.chat(messages)
        except UpstreamError as exc:
            logger.warning("LLM parser upstream failure for %r: %s", text, exc)
            break
        try:
            obj = _extract_json_object(reply)
            obj["raw"] = text
            return ParsedQuery.from_dict(obj, source="llm", retries=retries)
        except (ValueError, KeyError, TypeError) as exc:
            if attempt == 0:
                retries += 1
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"Your reply was invalid: {exc}. Reply again with only the JSON object."},
                ]
            else:
                logger.warning("LLM parser gave up on %r: %s", text, exc)
    q = parse_query_rules(text)
    return ParsedQuery(q.target, q.attributes, q.landmarks, q.raw, source="rules", retries=retries, degraded=True)
