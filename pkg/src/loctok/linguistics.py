"""Dependency-parse ingestion and the semantic measures built on it.

This module ingests the 10-column CoNLL-U surface (it is not a parser): token
lines, ``#`` comments, multiword ranges ``a-b`` and empty nodes ``a.b`` are
recognized; everything else is an error with a line number.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .errors import ConlluError

_COLUMNS = 10
_CHUNK_DEPRELS = frozenset({"det", "amod", "compound", "nummod", "poss"})


class SemanticElement(enum.Enum):
    OBJECT = "object"
    ATTRIBUTE = "attribute"
    ACTION = "action"
    PROPER_NOUN = "proper_noun"
    OTHER = "other"


_ELEMENT_BY_UPOS = {
    "NOUN": SemanticElement.OBJECT,
    "ADJ": SemanticElement.ATTRIBUTE,
    "VERB": SemanticElement.ACTION,
    "PROPN": SemanticElement.PROPER_NOUN,
}


@dataclass(frozen=True)
class ParsedToken:
    """One syntactic token: 1-based index, surface form, UPOS, head, deprel.

    ``head`` is the 1-based index of the governing token, 0 for the root.
    """

    index: int
    surface: str
    upos: str
    head: int
    deprel: str

    def __post_init__(self):
        for name, value in (("surface", self.surface), ("upos", self.upos),
                            ("deprel", self.deprel)):
            if not value or "\t" in value or "\n" in value:
                raise ConlluError(f"bad {name} field: {value!r}", 0)
        if self.index < 1:
            raise ConlluError(f"token index {self.index} must be >= 1", 0)
        if self.head < 0:
            raise ConlluError(f"head {self.head} must be >= 0", 0)


@dataclass(frozen=True)
class ParsedSentence:
    """A dependency tree: consecutive 1-based tokens, one root, no cycles."""

    tokens: tuple[ParsedToken, ...]
    sent_id: Union[str, None] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        _validate_tree(self.tokens, line_of=lambda t: 0)

    @property
    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)


def _validate_tree(tokens: Sequence[ParsedToken], line_of) -> None:
    n = len(tokens)
    if n == 0:
        raise ConlluError("sentence has no tokens", 0)
    roots = 0
    for expect, t in enumerate(tokens, start=1):
        if t.index != expect:
            raise ConlluError(
                f"token ids must be consecutive from 1; got {t.index}, wanted {expect}",
                line_of(t),
            )
        if t.head > n:
            raise ConlluError(f"head {t.head} beyond last token {n}", line_of(t))
        if t.head == t.index:
            raise ConlluError(f"token {t.index} is its own head", line_of(t))
        if t.head == 0:
            roots += 1
    if roots != 1:
        raise ConlluError(f"sentence must have exactly one root, got {roots}",
                          line_of(tokens[0]))
    # Walking to the root from every token must terminate: mark visited chains.
    state = [0] * (n + 1)  # 0 unvisited, 1 in progress, 2 done
    for t in tokens:
        i = t.index
        path = []
        while i != 0 and state[i] == 0:
            state[i] = 1
            path.append(i)
            i = tokens[i - 1].head
        if i != 0 and state[i] == 1:
            raise ConlluError(f"dependency cycle through token {i}",
                              line_of(tokens[i - 1]))
        for p in path:
            state[p] = 2


def classify_token(token: ParsedToken) -> SemanticElement:
    """Narrow UPOS mapping: NOUN/ADJ/VERB/PROPN, everything else is OTHER."""
    return _ELEMENT_BY_UPOS.get(token.upos, SemanticElement.OTHER)


def token_complexity(sentence: ParsedSentence, index: int) -> int:
    """Degree of a token in the undirected dependency tree.

    The root's link to the virtual root is not an edge, so a single-token
    sentence has complexity 0.
    """
    if not 1 <= index <= len(sentence.tokens):
        raise IndexError(f"token index {index} outside 1..{len(sentence.tokens)}")
    degree = sum(1 for t in sentence.tokens if t.head == index)
    if sentence.tokens[index - 1].head != 0:
        degree += 1
    return degree


def sentence_complexity(sentence: ParsedSentence) -> float:
    """Mean token complexity over the sentence."""
    n = len(sentence.tokens)
    return sum(token_complexity(sentence, i) for i in range(1, n + 1)) / n


def noun_chunks(sentence: ParsedSentence) -> list[tuple[int, int, int]]:
    """Flat noun phrases as (start, end, head) with 1-based half-open spans.

    A chunk is a NOUN or PROPN head plus the maximal run of tokens immediately
    to its left that attach to it with deprel det/amod/compound/nummod/poss.
    Heads are claimed right to left and a head already inside a chunk does not
    start its own, so chunks never overlap.
    """
    tokens = sentence.tokens
    claimed = [False] * (len(tokens) + 1)
    chunks: list[tuple[int, int, int]] = []
    for t in reversed(tokens):
        if t.upos not in ("NOUN", "PROPN") or claimed[t.index]:
            continue
        start = t.index
        while start > 1:
            prev = tokens[start - 2]
            if prev.head == t.index and prev.deprel in _CHUNK_DEPRELS and not claimed[prev.index]:
                start = prev.index
            else:
                break
        for i in range(start, t.index + 1):
            claimed[i] = True
        chunks.append((start, t.index + 1, t.index))
    chunks.reverse()
    return chunks


def chunk_text(sentence: ParsedSentence, chunk: tuple[int, int, int]) -> str:
    """Surface text of a chunk, tokens joined by single spaces."""
    start, end, _ = chunk
    return " ".join(t.surface for t in sentence.tokens[start - 1 : end - 1])


def _finish_sentence(rows, sent_id):
    if not rows:
        return None
    tokens = []
    for line_no, cols in rows:
        try:
            index = int(cols[0])
        except ValueError:
            raise ConlluError(f"bad token id {cols[0]!r}", line_no) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"bad head {cols[6]!r}", line_no) from None
        try:
            tokens.append(ParsedToken(index, cols[1], cols[3], head, cols[7]))
        except ConlluError as e:
            raise ConlluError(str(e).split(": ", 1)[-1], line_no) from None
    lines = {t.index: line_no for (line_no, cols), t in zip(rows, tokens)}
    _validate_tree(tokens, line_of=lambda t: lines[t.index])
    return ParsedSentence(tuple(tokens), sent_id=sent_id)


def parse_conllu(source: str) -> list[ParsedSentence]:
    """Ingest CoNLL-U text into sentences.

    Skips multiword ranges and empty nodes; errors carry 1-based line numbers.
    """
    sentences: list[ParsedSentence] = []
    rows: list[tuple[int, list[str]]] = []
    sent_id: Union[str, None] = None
    for line_no, line in enumerate(source.splitlines(), start=1):
        if not line.strip():
            done = _finish_sentence(rows, sent_id)
            if done is not None:
                sentences.append(done)
            rows, sent_id = [], None
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sent_id") and "=" in body:
                sent_id = body.split("=", 1)[1].strip()
            continue
        cols = line.split("\t")
        if len(cols) != _COLUMNS:
            raise ConlluError(f"expected {_COLUMNS} tab-separated columns, got {len(cols)}",
                              line_no)
        token_id = cols[0]
        if "-" in token_id or "." in token_id:
            continue  # multiword range or empty node: not part of the tree
        rows.append((line_no, cols))
    done = _finish_sentence(rows, sent_id)
    if done is not None:
        sentences.append(done)
    return sentences


def render_conllu(sentences: Iterable[ParsedSentence]) -> str:
    """Write sentences back out; inverse of :func:`parse_conllu` for what it keeps."""
    blocks = []
    for s in sentences:
        lines = []
        if s.sent_id is not None:
            lines.append(f"# sent_id = {s.sent_id}")
        for t in s.tokens:
            lines.append(
                "\t".join(
                    (str(t.index), t.surface, "_", t.upos, "_", "_", str(t.head),
                     t.deprel, "_", "_")
                )
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""
