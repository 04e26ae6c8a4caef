"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LoctokError(Exception):
    """Base class for every error this package raises on bad input."""


class CoordinateError(LoctokError, ValueError):
    """A coordinate, extent, or bin is outside its legal domain."""


class CodecError(LoctokError, ValueError):
    """A value cannot be represented in the token stream."""


class LexError(CodecError):
    """Raw text failed to lex into a token stream.

    ``offset`` is the UTF-8 byte offset of the offending location token opener.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ParseError(CodecError):
    """A token stream does not match the response grammar of a task.

    ``index`` is the position of the offending item in the normalized stream.
    """

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (stream item {index})")
        self.index = index


class PromptError(LoctokError, ValueError):
    """A task prompt is missing a payload, carries an extra one, or cannot be parsed."""


class ConlluError(LoctokError, ValueError):
    """A CoNLL-U block violates the ingested subset.

    ``line`` is the 1-based line number within the source text.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(LoctokError, ValueError):
    """A corpus record violates the on-disk schema or its invariants."""


class MergeError(LoctokError, ValueError):
    """Original and refined records cannot be merged (id or size mismatch)."""
