"""Prompt and response codec: tasks, location tokens, grammars, round-tripping.

Coordinates travel as ``<loc_B>`` tokens, B in [0, 1000). Every response
serializer/parser pair satisfies ``parse_response(serialize_response(r, t), t)
== r`` for well-formed ``r``; the lexer and renderer satisfy
``lex(stream.render()) == stream`` for normal-form streams.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .errors import CodecError, LexError, ParseError, PromptError
from .geometry import (
    BBox,
    ImageSize,
    Polygon,
    QuadBox,
    QuantizedRegion,
    Region,
    RegionKind,
    dequantize_region,
    quantize_region,
)

LOC_PREFIX = "<loc_"
QUERY_SEPARATOR = "<and>"


class Task(enum.Enum):
    CAPTION = "caption"
    DETAILED_CAPTION = "detailed_caption"
    MORE_DETAILED_CAPTION = "more_detailed_caption"
    REGION_PROPOSAL = "region_proposal"
    OBJECT_DETECTION = "object_detection"
    DENSE_REGION_CAPTION = "dense_region_caption"
    PHRASE_GROUNDING = "phrase_grounding"
    REFERRING_EXPRESSION_COMPREHENSION = "referring_expression_comprehension"
    OPEN_VOCABULARY_DETECTION = "open_vocabulary_detection"
    REFERRING_SEGMENTATION = "referring_segmentation"
    REGION_TO_TEXT = "region_to_text"
    TEXT_DETECTION_RECOGNITION = "text_detection_recognition"


# Tasks whose prompt embeds free text, and tasks whose prompt embeds a box.
_TEXT_PROMPT_TASKS = frozenset(
    {
        Task.PHRASE_GROUNDING,
        Task.REFERRING_EXPRESSION_COMPREHENSION,
        Task.OPEN_VOCABULARY_DETECTION,
    }
)
_REGION_PROMPT_TASKS = frozenset({Task.REFERRING_SEGMENTATION, Task.REGION_TO_TEXT})

# (prefix, suffix) around the payload; fixed prompts have payload-free templates.
_PROMPT_AFFIXES: dict[Task, tuple[str, str]] = {
    Task.PHRASE_GROUNDING: ("Locate the phrases in the caption: ", ""),
    Task.REFERRING_EXPRESSION_COMPREHENSION: ("Locate ", " in the image."),
    Task.OPEN_VOCABULARY_DETECTION: ("Locate ", " in the image."),
    Task.REFERRING_SEGMENTATION: ("What is the polygon mask of region ", ""),
    Task.REGION_TO_TEXT: ("What does the region ", " describe?"),
}

_FIXED_PROMPTS: dict[Task, str] = {
    Task.CAPTION: "What does the image describe?",
    Task.DETAILED_CAPTION: "Describe with a paragraph what is shown in the image.",
    Task.MORE_DETAILED_CAPTION: "Describe in detail what is shown in the image.",
    Task.REGION_PROPOSAL: "Locate the region proposals in the image.",
    Task.OBJECT_DETECTION: "Locate the objects with category name in the image.",
    Task.DENSE_REGION_CAPTION: "Locate the objects in the image, with their descriptions.",
    Task.TEXT_DETECTION_RECOGNITION: "What is the text in the image, with regions?",
}


def join_queries(queries: Sequence[str]) -> str:
    """Join open-vocabulary queries with the query separator token."""
    if not queries:
        raise PromptError("need at least one query")
    for q in queries:
        if not q:
            raise PromptError("queries must be non-empty")
        if QUERY_SEPARATOR in q:
            raise PromptError(f"query may not contain {QUERY_SEPARATOR!r}: {q!r}")
    return QUERY_SEPARATOR.join(queries)


def split_queries(text: str) -> list[str]:
    """Inverse of :func:`join_queries`."""
    return text.split(QUERY_SEPARATOR)


@dataclass(frozen=True)
class TaskPrompt:
    """A task plus its payload: free text, a box region, or nothing."""

    task: Task
    text: Union[str, None] = None
    region: Union[QuantizedRegion, None] = None

    def __post_init__(self):
        if self.task in _TEXT_PROMPT_TASKS:
            if not self.text:
                raise PromptError(f"{self.task.value} prompt needs a text payload")
            if self.region is not None:
                raise PromptError(f"{self.task.value} prompt takes no region payload")
        elif self.task in _REGION_PROMPT_TASKS:
            if self.region is None:
                raise PromptError(f"{self.task.value} prompt needs a region payload")
            if self.region.kind is not RegionKind.BOX:
                raise PromptError(f"{self.task.value} prompt region must be a box")
            if self.text is not None:
                raise PromptError(f"{self.task.value} prompt takes no text payload")
        else:
            if self.text is not None or self.region is not None:
                raise PromptError(f"{self.task.value} prompt takes no payload")


def _render_bins(bins: Iterable[int]) -> str:
    return "".join(f"<loc_{b}>" for b in bins)


def render_prompt(prompt: TaskPrompt) -> str:
    """Render a prompt to its exact string form."""
    task = prompt.task
    if task in _FIXED_PROMPTS:
        return _FIXED_PROMPTS[task]
    prefix, suffix = _PROMPT_AFFIXES[task]
    if task in _TEXT_PROMPT_TASKS:
        return f"{prefix}{prompt.text}{suffix}"
    return f"{prefix}{_render_bins(prompt.region.bins)}{suffix}"


def parse_prompt(text: str, task: Task) -> TaskPrompt:
    """Recover the structured prompt from its rendered string.

    Exact inverse of :func:`render_prompt`: the affixes have fixed lengths, so
    the payload is sliced out unambiguously whatever it contains.
    """
    if task in _FIXED_PROMPTS:
        if text != _FIXED_PROMPTS[task]:
            raise PromptError(f"not the {task.value} prompt: {text!r}")
        return TaskPrompt(task)
    prefix, suffix = _PROMPT_AFFIXES[task]
    if (
        len(text) < len(prefix) + len(suffix) + 1
        or not text.startswith(prefix)
        or not text.endswith(suffix)
    ):
        raise PromptError(f"not the {task.value} prompt: {text!r}")
    payload = text[len(prefix) : len(text) - len(suffix)]
    if task in _TEXT_PROMPT_TASKS:
        return TaskPrompt(task, text=payload)
    stream = lex(payload)
    if len(stream.items) != 4 or any(isinstance(i, TextSpan) for i in stream.items):
        raise PromptError(f"{task.value} prompt region must be exactly 4 location tokens")
    bins = tuple(i.bin for i in stream.items)
    return TaskPrompt(task, region=QuantizedRegion(RegionKind.BOX, bins))


@dataclass(frozen=True)
class TextSpan:
    """A run of plain text between location tokens."""

    text: str


@dataclass(frozen=True)
class LocToken:
    """One quantized coordinate, bin in [0, 1000)."""

    bin: int

    def __post_init__(self):
        if not isinstance(self.bin, int) or not 0 <= self.bin < 1000:
            raise CodecError(f"location bin {self.bin!r} outside [0, 1000)")


StreamItem = Union[TextSpan, LocToken]


@dataclass(frozen=True)
class TokenStream:
    """Normal-form item sequence: no empty spans, no adjacent TextSpans.

    The constructor normalizes any item sequence (merging adjacent spans and
    dropping empty ones), so equality is equality of rendered content.
    """

    items: tuple[StreamItem, ...] = field(default=())

    def __post_init__(self):
        normal: list[StreamItem] = []
        for item in self.items:
            if isinstance(item, TextSpan):
                if not item.text:
                    continue
                if normal and isinstance(normal[-1], TextSpan):
                    normal[-1] = TextSpan(normal[-1].text + item.text)
                    continue
            elif not isinstance(item, LocToken):
                raise CodecError(f"not a stream item: {item!r}")
            normal.append(item)
        object.__setattr__(self, "items", tuple(normal))

    def render(self) -> str:
        return "".join(
            item.text if isinstance(item, TextSpan) else f"<loc_{item.bin}>"
            for item in self.items
        )


_DIGITS = frozenset("0123456789")


def lex(raw: str) -> TokenStream:
    """Split raw text into spans and location tokens.

    Anything starting ``<loc_`` must be a complete, canonical location token
    (digits with no leading zeros, value < 1000, closing ``>``); otherwise a
    :class:`LexError` is raised carrying the UTF-8 byte offset of the ``<``.
    ``<and>`` and other angle-bracketed text are plain text.
    """
    items: list[StreamItem] = []
    pos = 0
    while True:
        hit = raw.find(LOC_PREFIX, pos)
        if hit == -1:
            if pos < len(raw):
                items.append(TextSpan(raw[pos:]))
            break
        if hit > pos:
            items.append(TextSpan(raw[pos:hit]))
        offset = len(raw[:hit].encode("utf-8"))
        j = hit + len(LOC_PREFIX)
        k = j
        while k < len(raw) and raw[k] in _DIGITS:
            k += 1
        digits = raw[j:k]
        if not digits:
            raise LexError("location token has no bin digits", offset)
        if k == len(raw) or raw[k] != ">":
            raise LexError("unterminated location token", offset)
        if len(digits) > 1 and digits[0] == "0":
            raise LexError(f"location bin has leading zeros: {digits!r}", offset)
        value = int(digits)
        if value >= 1000:
            raise LexError(f"location bin {value} outside [0, 1000)", offset)
        items.append(LocToken(value))
        pos = k + 1
    return TokenStream(tuple(items))


RegionLike = Union[QuantizedRegion, Region]


def _as_tuple(seq):
    return tuple(seq)


@dataclass(frozen=True)
class TextResponse:
    """Plain text answer (captioning, region description)."""

    text: str = ""


@dataclass(frozen=True)
class RegionsResponse:
    """Bare boxes with no labels (region proposal)."""

    regions: tuple[RegionLike, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", _as_tuple(self.regions))


@dataclass(frozen=True)
class LabeledRegion:
    """One labeled region; the label precedes its coordinates in the stream."""

    label: str
    region: RegionLike


@dataclass(frozen=True)
class LabeledRegionsResponse:
    """Labeled boxes or quads (detection, dense captions, recognized text)."""

    items: tuple[LabeledRegion, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", _as_tuple(self.items))


@dataclass(frozen=True)
class GroundedPhrase:
    """A phrase and the group of boxes grounding it."""

    phrase: str
    regions: tuple[RegionLike, ...]

    def __post_init__(self):
        object.__setattr__(self, "regions", _as_tuple(self.regions))


@dataclass(frozen=True)
class GroundedTextResponse:
    """Phrase grounding: each phrase owns one or more boxes."""

    items: tuple[GroundedPhrase, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", _as_tuple(self.items))


@dataclass(frozen=True)
class MaskResponse:
    """A single polygon (region-conditioned segmentation)."""

    polygon: RegionLike


TaskResponse = Union[
    TextResponse,
    RegionsResponse,
    LabeledRegionsResponse,
    GroundedTextResponse,
    MaskResponse,
]


class _Family(enum.Enum):
    TEXT = "text"
    REGIONS = "regions"
    LABELED_BOX = "labeled_box"
    LABELED_QUAD = "labeled_quad"
    GROUNDED = "grounded"
    MASK = "mask"


RESPONSE_FAMILY: dict[Task, _Family] = {
    Task.CAPTION: _Family.TEXT,
    Task.DETAILED_CAPTION: _Family.TEXT,
    Task.MORE_DETAILED_CAPTION: _Family.TEXT,
    Task.REGION_TO_TEXT: _Family.TEXT,
    Task.REGION_PROPOSAL: _Family.REGIONS,
    Task.OBJECT_DETECTION: _Family.LABELED_BOX,
    Task.DENSE_REGION_CAPTION: _Family.LABELED_BOX,
    Task.OPEN_VOCABULARY_DETECTION: _Family.LABELED_BOX,
    Task.REFERRING_EXPRESSION_COMPREHENSION: _Family.LABELED_BOX,
    Task.TEXT_DETECTION_RECOGNITION: _Family.LABELED_QUAD,
    Task.PHRASE_GROUNDING: _Family.GROUNDED,
    Task.REFERRING_SEGMENTATION: _Family.MASK,
}

_FAMILY_TYPE = {
    _Family.TEXT: TextResponse,
    _Family.REGIONS: RegionsResponse,
    _Family.LABELED_BOX: LabeledRegionsResponse,
    _Family.LABELED_QUAD: LabeledRegionsResponse,
    _Family.GROUNDED: GroundedTextResponse,
    _Family.MASK: MaskResponse,
}


def _require_quantized(region: RegionLike, kinds: tuple[RegionKind, ...], what: str):
    if not isinstance(region, QuantizedRegion):
        raise CodecError(
            f"{what} must be quantized before serialization; got {type(region).__name__}"
        )
    if region.kind not in kinds:
        names = "/".join(k.value for k in kinds)
        raise CodecError(f"{what} must be a {names} region, got {region.kind.value}")
    return region


def _check_label(text: str, what: str):
    if not text:
        raise CodecError(f"{what} must be non-empty")
    if LOC_PREFIX in text:
        raise CodecError(f"{what} may not contain {LOC_PREFIX!r}: {text!r}")


def serialize_response(response: TaskResponse, task: Union[Task, None] = None) -> TokenStream:
    """Serialize a response to its token stream.

    All regions must be :class:`QuantizedRegion`s (quantize first). When
    ``task`` is given the response variant and region kinds are checked against
    that task's grammar.
    """
    family = RESPONSE_FAMILY[task] if task is not None else None
    if family is not None and not isinstance(response, _FAMILY_TYPE[family]):
        raise CodecError(
            f"{task.value} responses are {_FAMILY_TYPE[family].__name__}, "
            f"got {type(response).__name__}"
        )
    items: list[StreamItem] = []
    if isinstance(response, TextResponse):
        if response.text:
            if LOC_PREFIX in response.text:
                raise CodecError(f"text may not contain {LOC_PREFIX!r}")
            items.append(TextSpan(response.text))
    elif isinstance(response, RegionsResponse):
        for i, region in enumerate(response.regions):
            q = _require_quantized(region, (RegionKind.BOX,), f"region {i}")
            items.extend(LocToken(b) for b in q.bins)
    elif isinstance(response, LabeledRegionsResponse):
        if family is _Family.LABELED_BOX:
            kinds: tuple[RegionKind, ...] = (RegionKind.BOX,)
        elif family is _Family.LABELED_QUAD:
            kinds = (RegionKind.QUAD,)
        else:
            kinds = (RegionKind.BOX, RegionKind.QUAD)
        for i, item in enumerate(response.items):
            _check_label(item.label, f"label {i}")
            q = _require_quantized(item.region, kinds, f"region {i}")
            items.append(TextSpan(item.label))
            items.extend(LocToken(b) for b in q.bins)
    elif isinstance(response, GroundedTextResponse):
        for i, phrase in enumerate(response.items):
            _check_label(phrase.phrase, f"phrase {i}")
            if not phrase.regions:
                raise CodecError(f"phrase {i} has no regions; it would not round-trip")
            items.append(TextSpan(phrase.phrase))
            for region in phrase.regions:
                q = _require_quantized(region, (RegionKind.BOX,), f"phrase {i} region")
                items.extend(LocToken(b) for b in q.bins)
    elif isinstance(response, MaskResponse):
        q = _require_quantized(response.polygon, (RegionKind.POLYGON,), "polygon")
        items.extend(LocToken(b) for b in q.bins)
    else:
        raise CodecError(f"not a response: {response!r}")
    return TokenStream(tuple(items))


def _split_groups(stream: TokenStream):
    """Yield (index, text, loc_run) groups; loc runs before any text raise."""
    items = stream.items
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, LocToken):
            raise ParseError("location tokens before any label", i)
        j = i + 1
        while j < len(items) and isinstance(items[j], LocToken):
            j += 1
        yield i, item.text, [it.bin for it in items[i + 1 : j]]
        i = j


def _labeled_items(stream: TokenStream, width: int, kind: RegionKind):
    out = []
    for index, label, bins in _split_groups(stream):
        if not bins:
            raise ParseError(f"label {label!r} has no location tokens", index)
        if len(bins) % width:
            raise ParseError(
                f"label {label!r} run of {len(bins)} location tokens is not a "
                f"multiple of {width}",
                index,
            )
        for start in range(0, len(bins), width):
            region = QuantizedRegion(kind, tuple(bins[start : start + width]))
            out.append(LabeledRegion(label, region))
    return out


def parse_response(stream: TokenStream, task: Task) -> TaskResponse:
    """Parse a normal-form token stream under a task's response grammar.

    Raises :class:`ParseError` (carrying the offending stream item index) on
    any arity or shape violation; never silently drops tokens.
    """
    family = RESPONSE_FAMILY[task]
    items = stream.items
    if family is _Family.TEXT:
        for i, item in enumerate(items):
            if isinstance(item, LocToken):
                raise ParseError(f"{task.value} responses carry no location tokens", i)
        return TextResponse(items[0].text if items else "")
    if family is _Family.REGIONS:
        for i, item in enumerate(items):
            if isinstance(item, TextSpan):
                raise ParseError(f"{task.value} responses carry no text", i)
        if len(items) % 4:
            raise ParseError(
                f"{len(items)} location tokens is not a multiple of 4", len(items) - 1
            )
        bins = [it.bin for it in items]
        return RegionsResponse(
            tuple(
                QuantizedRegion(RegionKind.BOX, tuple(bins[i : i + 4]))
                for i in range(0, len(bins), 4)
            )
        )
    if family is _Family.LABELED_BOX:
        return LabeledRegionsResponse(tuple(_labeled_items(stream, 4, RegionKind.BOX)))
    if family is _Family.LABELED_QUAD:
        return LabeledRegionsResponse(tuple(_labeled_items(stream, 8, RegionKind.QUAD)))
    if family is _Family.GROUNDED:
        phrases = []
        for index, phrase, bins in _split_groups(stream):
            if not bins:
                raise ParseError(f"phrase {phrase!r} has no location tokens", index)
            if len(bins) % 4:
                raise ParseError(
                    f"phrase {phrase!r} run of {len(bins)} location tokens is not a "
                    "multiple of 4",
                    index,
                )
            regions = tuple(
                QuantizedRegion(RegionKind.BOX, tuple(bins[i : i + 4]))
                for i in range(0, len(bins), 4)
            )
            phrases.append(GroundedPhrase(phrase, regions))
        return GroundedTextResponse(tuple(phrases))
    # mask
    for i, item in enumerate(items):
        if isinstance(item, TextSpan):
            raise ParseError(f"{task.value} responses carry no text", i)
    if len(items) % 2:
        raise ParseError("polygon needs an even number of location tokens", len(items) - 1)
    if len(items) < 6:
        raise ParseError("polygon needs at least 3 vertices (6 location tokens)",
                         max(len(items) - 1, 0))
    bins = tuple(it.bin for it in items)
    return MaskResponse(QuantizedRegion(RegionKind.POLYGON, bins))


def _map_regions(response: TaskResponse, fn) -> TaskResponse:
    if isinstance(response, TextResponse):
        return response
    if isinstance(response, RegionsResponse):
        return RegionsResponse(tuple(fn(r) for r in response.regions))
    if isinstance(response, LabeledRegionsResponse):
        return LabeledRegionsResponse(
            tuple(LabeledRegion(i.label, fn(i.region)) for i in response.items)
        )
    if isinstance(response, GroundedTextResponse):
        return GroundedTextResponse(
            tuple(
                GroundedPhrase(p.phrase, tuple(fn(r) for r in p.regions))
                for p in response.items
            )
        )
    if isinstance(response, MaskResponse):
        return MaskResponse(fn(response.polygon))
    raise CodecError(f"not a response: {response!r}")


def quantize_response(response: TaskResponse, size: ImageSize) -> TaskResponse:
    """Quantize every pixel-space region in a response."""

    def q(region: RegionLike) -> QuantizedRegion:
        if isinstance(region, QuantizedRegion):
            return region
        return quantize_region(region, size)

    return _map_regions(response, q)


def decode_to_pixels(response: TaskResponse, size: ImageSize) -> TaskResponse:
    """Replace every quantized region in a response with bin-center pixel geometry."""

    def d(region: RegionLike) -> Region:
        if isinstance(region, QuantizedRegion):
            return dequantize_region(region, size)
        return region

    return _map_regions(response, d)
