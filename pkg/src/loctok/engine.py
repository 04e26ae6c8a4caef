"""Annotation records and the filter/refine pipeline that cleans them.

A corpus record ties one image to three annotation families: whole-image texts
(with dependency parses), region-text pairs, and text-phrase-region triplets.
Filtering drops noisy members by the configured gates; merging folds a refined
record back into its original. Records are immutable; every constructor
validates, so an invalid record cannot exist in memory.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .errors import MergeError, SchemaError
from .geometry import BBox, ImageSize, Polygon, QuadBox, nms_indices
from .linguistics import (
    ParsedSentence,
    SemanticElement,
    chunk_text,
    classify_token,
    noun_chunks,
    parse_conllu,
    render_conllu,
    token_complexity,
)

SCHEMA_VERSION = 1

# Pronouns and similarly non-visual fillers; matched against the casefolded
# phrase surface.
DEFAULT_BLACKLIST = frozenset(
    """
    i me my mine myself we us our ours ourselves
    you your yours yourself yourselves
    he him his himself she her hers herself it its itself
    they them their theirs themselves
    this that these those which who whom whose what
    someone somebody something anyone anybody anything
    everyone everybody everything nobody nothing
    one ones other others another each either neither both
    all some any none few many several
    """.split()
) | {"no one"}


class Granularity(enum.Enum):
    BRIEF = "brief"
    DETAILED = "detailed"
    MORE_DETAILED = "more_detailed"


class TextSource(enum.Enum):
    SPECIALIST = "specialist"
    HUMAN = "human"
    REFINED = "refined"


class CandidateRole(enum.Enum):
    PHRASE = "phrase"
    BRIEF = "brief"
    NOUN_CHUNK = "noun_chunk"


@dataclass(frozen=True)
class TextAnnotation:
    """One whole-image text at some granularity, optionally with its parse.

    ``parse`` holds the ingested dependency tree; ``parse_ref`` names a
    sentence id in a sidecar file. A record may carry either, both (ref plus
    its resolved tree), or neither.
    """

    granularity: Granularity
    text: str
    source: TextSource
    parse: Union[ParsedSentence, None] = None
    parse_ref: Union[str, None] = None

    def __post_init__(self):
        if not self.text:
            raise SchemaError("text annotation must be non-empty")


@dataclass(frozen=True)
class RegionCandidate:
    """One candidate description of a region."""

    role: CandidateRole
    text: str

    def __post_init__(self):
        if not self.text:
            raise SchemaError("candidate text must be non-empty")


@dataclass(frozen=True)
class RegionTextPair:
    """A region with its candidate texts and a detector confidence."""

    region: Union[BBox, QuadBox]
    texts: tuple[RegionCandidate, ...]
    confidence: float
    selected: Union[int, None] = None

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        if not self.texts:
            raise SchemaError("region-text pair needs at least one candidate")
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence {self.confidence} outside [0, 1]")
        if self.selected is not None and not 0 <= self.selected < len(self.texts):
            raise SchemaError(
                f"selected index {self.selected} outside 0..{len(self.texts) - 1}"
            )

    def hull(self) -> BBox:
        return self.region if isinstance(self.region, BBox) else self.region.hull()


@dataclass(frozen=True)
class PhraseSpan:
    """A phrase's character span [start, end) in its source text."""

    start: int
    end: int
    text: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise SchemaError(f"bad phrase span [{self.start}, {self.end})")
        if not self.text:
            raise SchemaError("phrase text must be non-empty")


@dataclass(frozen=True)
class TripletRegion:
    """One grounded box, optionally with a segmentation mask."""

    box: BBox
    confidence: float
    mask: Union[Polygon, None] = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PhraseRegionTriplet:
    """A phrase of one whole-image text grounded by one or more regions."""

    text_ref: int
    phrase: PhraseSpan
    regions: tuple[TripletRegion, ...]
    phrase_confidence: float

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.text_ref < 0:
            raise SchemaError(f"text_ref {self.text_ref} must be >= 0")
        if not self.regions:
            raise SchemaError("triplet needs at least one region")
        if not 0.0 <= self.phrase_confidence <= 1.0:
            raise SchemaError(
                f"phrase confidence {self.phrase_confidence} outside [0, 1]"
            )

    def key(self) -> tuple[int, tuple[int, int]]:
        """Identity for merging: referenced text plus character span."""
        return (self.text_ref, (self.phrase.start, self.phrase.end))


@dataclass(frozen=True)
class AnnotatedImage:
    """All annotations of one image; validated on construction."""

    id: str
    size: ImageSize
    texts: tuple[TextAnnotation, ...] = ()
    region_texts: tuple[RegionTextPair, ...] = ()
    triplets: tuple[PhraseRegionTriplet, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        object.__setattr__(self, "region_texts", tuple(self.region_texts))
        object.__setattr__(self, "triplets", tuple(self.triplets))
        validate_annotated_image(self)


def _check_in_bounds(points: Iterable[tuple[float, float]], size: ImageSize, path: str):
    for x, y in points:
        if not (0 <= x <= size.width and 0 <= y <= size.height):
            raise SchemaError(f"{path}: point ({x}, {y}) outside image {size.width} x {size.height}")


def _region_points(region) -> list[tuple[float, float]]:
    if isinstance(region, BBox):
        return [(region.x0, region.y0), (region.x1, region.y1)]
    return list(region.vertices)


def validate_annotated_image(img: AnnotatedImage) -> None:
    """Cross-field checks: bounds, text references, span surfaces."""
    if not img.id:
        raise SchemaError("record id must be non-empty")
    for j, pair in enumerate(img.region_texts):
        _check_in_bounds(_region_points(pair.region), img.size, f"region_texts[{j}].region")
    for k, t in enumerate(img.triplets):
        path = f"triplets[{k}]"
        if t.text_ref >= len(img.texts):
            raise SchemaError(
                f"{path}.text_ref {t.text_ref} outside 0..{len(img.texts) - 1}"
            )
        source_text = img.texts[t.text_ref].text
        if t.phrase.end > len(source_text):
            raise SchemaError(f"{path}.phrase span runs past the referenced text")
        surface = source_text[t.phrase.start : t.phrase.end]
        if surface != t.phrase.text:
            raise SchemaError(
                f"{path}.phrase text {t.phrase.text!r} does not match the span "
                f"{surface!r} of its referenced text"
            )
        for m, region in enumerate(t.regions):
            _check_in_bounds(_region_points(region.box), img.size, f"{path}.regions[{m}].box")
            if region.mask is not None:
                _check_in_bounds(region.mask.vertices, img.size, f"{path}.regions[{m}].mask")


@dataclass(frozen=True)
class FilterConfig:
    """Gates for the cleaning pipeline; defaults are the documented ones."""

    max_objects: Union[int, None] = 30
    min_object_complexity: float = 1.0
    min_action_complexity: float = 1.0
    box_confidence_threshold: float = 0.2
    nms_iou_threshold: float = 0.5
    nms_class_aware: bool = True
    phrase_confidence_threshold: float = 0.2
    blacklist: frozenset = DEFAULT_BLACKLIST

    def __post_init__(self):
        if self.max_objects is not None and self.max_objects < 1:
            raise ValueError(f"max_objects must be >= 1 or None, got {self.max_objects}")
        for name in ("box_confidence_threshold", "nms_iou_threshold",
                     "phrase_confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")
        for name in ("min_object_complexity", "min_action_complexity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        object.__setattr__(self, "blacklist", frozenset(w.casefold() for w in self.blacklist))


REASON_EXCESSIVE_OBJECTS = "excessive_objects"
REASON_LOW_OBJECT_COMPLEXITY = "low_object_complexity"
REASON_LOW_ACTION_COMPLEXITY = "low_action_complexity"


@dataclass(frozen=True)
class TextDecision:
    """Outcome of the text gate: keep, or drop with a reason code."""

    keep: bool
    reason: Union[str, None] = None


def filter_text(annotation: TextAnnotation, config: FilterConfig) -> TextDecision:
    """Gate a text on object count and object/action mean complexity.

    The annotation must carry a parse. Complexity gates are vacuous when the
    text has no tokens of that class; means are exact rationals, so a mean
    equal to the threshold passes.
    """
    if annotation.parse is None:
        raise ValueError("text annotation has no parse attached")
    s = annotation.parse
    objects = [t.index for t in s.tokens if classify_token(t) is SemanticElement.OBJECT]
    actions = [t.index for t in s.tokens if classify_token(t) is SemanticElement.ACTION]
    if config.max_objects is not None and len(objects) > config.max_objects:
        return TextDecision(False, REASON_EXCESSIVE_OBJECTS)
    if objects:
        mean = Fraction(sum(token_complexity(s, i) for i in objects), len(objects))
        if mean < config.min_object_complexity:
            return TextDecision(False, REASON_LOW_OBJECT_COMPLEXITY)
    if actions:
        mean = Fraction(sum(token_complexity(s, i) for i in actions), len(actions))
        if mean < config.min_action_complexity:
            return TextDecision(False, REASON_LOW_ACTION_COMPLEXITY)
    return TextDecision(True)


def region_class_key(pair: RegionTextPair) -> str:
    """The class label a pair competes under in class-aware NMS.

    The selected candidate if one is marked, else the first phrase-role
    candidate, else the first candidate; compared as exact strings.
    """
    if pair.selected is not None:
        return pair.texts[pair.selected].text
    for c in pair.texts:
        if c.role is CandidateRole.PHRASE:
            return c.text
    return pair.texts[0].text


def filter_regions_detailed(
    pairs: Sequence[RegionTextPair], config: FilterConfig
) -> tuple[list[RegionTextPair], int, int]:
    """Confidence gate then class-aware NMS; returns (kept, n_low_conf, n_nms).

    Kept pairs come back in descending confidence, ties by input order. Quads
    compete through their axis-aligned hulls.
    """
    survivors = [p for p in pairs if p.confidence >= config.box_confidence_threshold]
    n_low = len(pairs) - len(survivors)
    kept_idx = nms_indices(
        [p.hull() for p in survivors],
        [p.confidence for p in survivors],
        [region_class_key(p) if config.nms_class_aware else None for p in survivors],
        config.nms_iou_threshold,
        config.nms_class_aware,
    )
    kept = [survivors[i] for i in kept_idx]
    return kept, n_low, len(survivors) - len(kept)


def filter_regions(
    pairs: Sequence[RegionTextPair], config: FilterConfig
) -> list[RegionTextPair]:
    """See :func:`filter_regions_detailed`; this returns just the kept pairs."""
    return filter_regions_detailed(pairs, config)[0]


REASON_ORPHANED = "orphaned"
REASON_BLACKLISTED = "blacklisted"
REASON_LOW_PHRASE_CONFIDENCE = "low_phrase_confidence"
REASON_NO_BOXES_LEFT = "no_boxes_left"


@dataclass
class TripletFilterCounts:
    blacklisted: int = 0
    low_phrase_confidence: int = 0
    no_boxes_left: int = 0
    boxes_dropped: int = 0


def filter_triplets(
    triplets: Sequence[PhraseRegionTriplet], config: FilterConfig
) -> tuple[list[PhraseRegionTriplet], TripletFilterCounts]:
    """Drop blacklisted or low-confidence phrases, then low-confidence boxes.

    ``boxes_dropped`` counts boxes removed from triplets that passed the
    phrase-level screen, including boxes of triplets that then died with
    ``no_boxes_left``.
    """
    counts = TripletFilterCounts()
    kept: list[PhraseRegionTriplet] = []
    for t in triplets:
        if t.phrase.text.casefold() in config.blacklist:
            counts.blacklisted += 1
            continue
        if t.phrase_confidence < config.phrase_confidence_threshold:
            counts.low_phrase_confidence += 1
            continue
        regions = tuple(
            r for r in t.regions if r.confidence >= config.box_confidence_threshold
        )
        counts.boxes_dropped += len(t.regions) - len(regions)
        if not regions:
            counts.no_boxes_left += 1
            continue
        kept.append(t if regions == t.regions else replace(t, regions=regions))
    return kept, counts


@dataclass
class FilterCounts:
    """Per-kind keep/drop tallies for one or more filtered records."""

    records: int = 0
    texts_kept: int = 0
    texts_unassessed: int = 0
    texts_excessive_objects: int = 0
    texts_low_object_complexity: int = 0
    texts_low_action_complexity: int = 0
    regions_kept: int = 0
    regions_low_confidence: int = 0
    regions_nms_suppressed: int = 0
    triplets_kept: int = 0
    triplets_orphaned: int = 0
    triplets_blacklisted: int = 0
    triplets_low_phrase_confidence: int = 0
    triplets_no_boxes_left: int = 0
    triplet_boxes_dropped: int = 0

    def update(self, other: "FilterCounts") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TEXT_REASON_FIELD = {
    REASON_EXCESSIVE_OBJECTS: "texts_excessive_objects",
    REASON_LOW_OBJECT_COMPLEXITY: "texts_low_object_complexity",
    REASON_LOW_ACTION_COMPLEXITY: "texts_low_action_complexity",
}


def filter_record(
    img: AnnotatedImage, config: FilterConfig
) -> tuple[AnnotatedImage, FilterCounts]:
    """Apply all three gates to one record.

    Texts without parses pass through unassessed (counted). Dropping a text
    remaps the surviving triplets' ``text_ref`` and orphans triplets whose
    referenced text is gone; orphaning is checked before the phrase gates.
    """
    counts = FilterCounts(records=1)
    kept_texts: list[TextAnnotation] = []
    index_map: dict[int, int] = {}
    for i, ann in enumerate(img.texts):
        if ann.parse is None:
            counts.texts_unassessed += 1
            decision = TextDecision(True)
        else:
            decision = filter_text(ann, config)
        if decision.keep:
            index_map[i] = len(kept_texts)
            kept_texts.append(ann)
        else:
            setattr(counts, _TEXT_REASON_FIELD[decision.reason],
                    getattr(counts, _TEXT_REASON_FIELD[decision.reason]) + 1)
    counts.texts_kept = len(kept_texts)

    kept_pairs, n_low, n_nms = filter_regions_detailed(img.region_texts, config)
    counts.regions_kept = len(kept_pairs)
    counts.regions_low_confidence = n_low
    counts.regions_nms_suppressed = n_nms

    alive: list[PhraseRegionTriplet] = []
    for t in img.triplets:
        if t.text_ref not in index_map:
            counts.triplets_orphaned += 1
            continue
        alive.append(replace(t, text_ref=index_map[t.text_ref]))
    kept_triplets, tcounts = filter_triplets(alive, config)
    counts.triplets_kept = len(kept_triplets)
    counts.triplets_blacklisted = tcounts.blacklisted
    counts.triplets_low_phrase_confidence = tcounts.low_phrase_confidence
    counts.triplets_no_boxes_left = tcounts.no_boxes_left
    counts.triplet_boxes_dropped = tcounts.boxes_dropped

    out = AnnotatedImage(
        id=img.id,
        size=img.size,
        texts=tuple(kept_texts),
        region_texts=tuple(kept_pairs),
        triplets=tuple(kept_triplets),
    )
    return out, counts


def generate_region_text_candidates(
    label: Union[str, None],
    brief: Union[str, None],
    parse: Union[ParsedSentence, None] = None,
) -> list[RegionCandidate]:
    """Candidate texts for a region: label, brief text, then noun chunks.

    ``parse`` is the brief text's dependency tree; its noun chunks become
    noun_chunk candidates in span order. Candidates are deduplicated
    case-insensitively, first occurrence wins (in role order phrase, brief,
    noun_chunk).
    """
    out: list[RegionCandidate] = []
    seen: set[str] = set()

    def push(role: CandidateRole, text: Union[str, None]):
        if not text:
            return
        key = text.casefold()
        if key in seen:
            return
        seen.add(key)
        out.append(RegionCandidate(role, text))

    push(CandidateRole.PHRASE, label)
    push(CandidateRole.BRIEF, brief)
    if parse is not None:
        for chunk in noun_chunks(parse):
            push(CandidateRole.NOUN_CHUNK, chunk_text(parse, chunk))
    return out


def merge_annotations(
    original: AnnotatedImage, refined: AnnotatedImage, config: FilterConfig
) -> AnnotatedImage:
    """Fold a refined record into its original.

    Texts: refined entries are re-tagged source=refined and collapsed to the
    last entry per granularity; each replaces the original's existing
    refined-source text of that granularity in place, or appends, so text
    indices never shift. Region texts: the union (minus exact duplicates of
    original pairs) is re-filtered; originals precede refined pairs, so
    confidence ties keep the original. Triplets: refined triplets replace
    originals sharing (text_ref, span) in place; novel keys append in refined
    order. Applying the same refined record twice equals applying it once.

    Triplet text_ref values are read in the original's index space. Original
    indices never shift, so a refined record that re-states the texts it
    grounds (the normal shape of a refinement pass) stays aligned; a triplet
    whose reference does not line up fails the merged record's validation.
    """
    if original.id != refined.id:
        raise MergeError(f"id mismatch: {original.id!r} vs {refined.id!r}")
    if original.size != refined.size:
        raise MergeError(
            f"size mismatch: {original.size.width} x {original.size.height} vs "
            f"{refined.size.width} x {refined.size.height}"
        )

    by_granularity: dict[Granularity, TextAnnotation] = {}
    for ann in refined.texts:
        by_granularity[ann.granularity] = replace(ann, source=TextSource.REFINED)
    texts = list(original.texts)
    for granularity, ann in by_granularity.items():
        slot = next(
            (i for i, t in enumerate(texts)
             if t.source is TextSource.REFINED and t.granularity is granularity),
            None,
        )
        if slot is None:
            texts.append(ann)
        else:
            texts[slot] = ann

    known = set(original.region_texts)
    pairs = list(original.region_texts) + [
        p for p in refined.region_texts if p not in known
    ]
    region_texts = filter_regions(pairs, config)

    refined_by_key = {t.key(): t for t in refined.triplets}  # last wins per key
    original_keys = {t.key() for t in original.triplets}
    triplets: list[PhraseRegionTriplet] = [
        refined_by_key.get(t.key(), t) for t in original.triplets
    ]
    appended: set = set()
    for t in refined.triplets:
        k = t.key()
        if k in original_keys or k in appended:
            continue
        appended.add(k)
        triplets.append(refined_by_key[k])

    return AnnotatedImage(
        id=original.id,
        size=original.size,
        texts=tuple(texts),
        region_texts=tuple(region_texts),
        triplets=tuple(triplets),
    )


def _num(obj, key, path, required=True):
    v = obj.get(key)
    if v is None:
        if required:
            raise SchemaError(f"{path}: missing {key!r}")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}: expected a number, got {type(v).__name__}")
    return float(v)


def _intval(obj, key, path):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}: expected an integer, got {type(v).__name__}")
    return v


def _strval(obj, key, path):
    v = obj.get(key)
    if not isinstance(v, str):
        raise SchemaError(f"{path}.{key}: expected a string, got {type(v).__name__}")
    return v


def _listval(obj, key, path, default=None):
    v = obj.get(key, default if default is not None else [])
    if not isinstance(v, list):
        raise SchemaError(f"{path}.{key}: expected a list, got {type(v).__name__}")
    return v


def _dictval(obj, key, path):
    v = obj.get(key)
    if not isinstance(v, dict):
        raise SchemaError(f"{path}.{key}: expected an object, got {type(v).__name__}")
    return v


def _enum_value(cls, raw, path):
    try:
        return cls(raw)
    except ValueError:
        valid = ", ".join(m.value for m in cls)
        raise SchemaError(f"{path}: {raw!r} is not one of {valid}") from None


def _coords(raw, path) -> list[float]:
    if not isinstance(raw, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw
    ):
        raise SchemaError(f"{path}: expected a flat list of numbers")
    return [float(v) for v in raw]


def _region_from_flat(values: list[float], path) -> Union[BBox, QuadBox]:
    if len(values) == 4:
        return BBox(*values)
    if len(values) == 8:
        return QuadBox(tuple(zip(values[0::2], values[1::2])))
    raise SchemaError(f"{path}: region needs 4 (box) or 8 (quad) numbers, got {len(values)}")


def _flat_region(region) -> list[float]:
    if isinstance(region, BBox):
        return [region.x0, region.y0, region.x1, region.y1]
    return [c for v in region.vertices for c in v]


def annotated_image_from_record(
    obj: Mapping,
    sidecar: Union[Mapping[str, ParsedSentence], None] = None,
) -> AnnotatedImage:
    """Build a record from its JSON object form.

    ``sidecar`` maps sentence ids to parses for texts carrying ``parse_ref``;
    a missing referenced id is a schema error. Geometry errors surface as the
    underlying CoordinateError.
    """
    if not isinstance(obj, Mapping):
        raise SchemaError(f"record: expected an object, got {type(obj).__name__}")
    version = obj.get("fld_schema")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"record: fld_schema must be {SCHEMA_VERSION}, got {version!r}")
    rid = _strval(obj, "id", "record")
    size_obj = _dictval(obj, "size", "record")
    size = ImageSize(_num(size_obj, "width", "size"), _num(size_obj, "height", "size"))

    texts: list[TextAnnotation] = []
    for i, t in enumerate(_listval(obj, "texts", "record")):
        path = f"texts[{i}]"
        if not isinstance(t, dict):
            raise SchemaError(f"{path}: expected an object")
        parse = None
        parse_ref = None
        if "parse" in t and "parse_ref" in t:
            raise SchemaError(f"{path}: carries both parse and parse_ref")
        if "parse" in t:
            block = _strval(t, "parse", path)
            sentences = parse_conllu(block)
            if len(sentences) != 1:
                raise SchemaError(f"{path}.parse: expected exactly one sentence")
            parse = sentences[0]
        elif "parse_ref" in t:
            parse_ref = _strval(t, "parse_ref", path)
            if sidecar is not None:
                parse = sidecar.get(parse_ref)
                if parse is None:
                    raise SchemaError(f"{path}.parse_ref: {parse_ref!r} not in sidecar")
        texts.append(
            TextAnnotation(
                granularity=_enum_value(Granularity, _strval(t, "granularity", path),
                                        f"{path}.granularity"),
                text=_strval(t, "text", path),
                source=_enum_value(TextSource, _strval(t, "source", path), f"{path}.source"),
                parse=parse,
                parse_ref=parse_ref,
            )
        )

    pairs: list[RegionTextPair] = []
    for j, p in enumerate(_listval(obj, "region_texts", "record")):
        path = f"region_texts[{j}]"
        if not isinstance(p, dict):
            raise SchemaError(f"{path}: expected an object")
        candidates = []
        for k, c in enumerate(_listval(p, "texts", path)):
            cpath = f"{path}.texts[{k}]"
            if not isinstance(c, dict):
                raise SchemaError(f"{cpath}: expected an object")
            candidates.append(
                RegionCandidate(
                    role=_enum_value(CandidateRole, _strval(c, "role", cpath), f"{cpath}.role"),
                    text=_strval(c, "text", cpath),
                )
            )
        selected = None
        if "selected" in p:
            selected = _intval(p, "selected", path)
        pairs.append(
            RegionTextPair(
                region=_region_from_flat(_coords(p.get("region"), f"{path}.region"),
                                         f"{path}.region"),
                texts=tuple(candidates),
                confidence=_num(p, "confidence", path),
                selected=selected,
            )
        )

    triplets: list[PhraseRegionTriplet] = []
    for k, t in enumerate(_listval(obj, "triplets", "record")):
        path = f"triplets[{k}]"
        if not isinstance(t, dict):
            raise SchemaError(f"{path}: expected an object")
        ph = _dictval(t, "phrase", path)
        regions = []
        for m, r in enumerate(_listval(t, "regions", path)):
            rpath = f"{path}.regions[{m}]"
            if not isinstance(r, dict):
                raise SchemaError(f"{rpath}: expected an object")
            box_coords = _coords(r.get("box"), f"{rpath}.box")
            if len(box_coords) != 4:
                raise SchemaError(f"{rpath}.box: expected 4 numbers")
            mask = None
            if "mask" in r:
                flat = _coords(r.get("mask"), f"{rpath}.mask")
                if len(flat) < 6 or len(flat) % 2:
                    raise SchemaError(f"{rpath}.mask: expected an even count >= 6")
                mask = Polygon(tuple(zip(flat[0::2], flat[1::2])))
            regions.append(
                TripletRegion(
                    box=BBox(*box_coords),
                    confidence=_num(r, "confidence", rpath),
                    mask=mask,
                )
            )
        triplets.append(
            PhraseRegionTriplet(
                text_ref=_intval(t, "text_ref", path),
                phrase=PhraseSpan(
                    start=_intval(ph, "start", f"{path}.phrase"),
                    end=_intval(ph, "end", f"{path}.phrase"),
                    text=_strval(ph, "text", f"{path}.phrase"),
                ),
                regions=tuple(regions),
                phrase_confidence=_num(t, "phrase_confidence", path),
            )
        )

    return AnnotatedImage(rid, size, tuple(texts), tuple(pairs), tuple(triplets))


def annotated_image_to_record(img: AnnotatedImage) -> dict:
    """JSON object form of a record; inverse of :func:`annotated_image_from_record`.

    Texts resolved from a sidecar keep their ``parse_ref`` (the tree is not
    inlined); texts with inline parses re-render them canonically.
    """
    texts = []
    for t in img.texts:
        entry: dict = {
            "granularity": t.granularity.value,
            "text": t.text,
            "source": t.source.value,
        }
        if t.parse_ref is not None:
            entry["parse_ref"] = t.parse_ref
        elif t.parse is not None:
            entry["parse"] = render_conllu([t.parse])
        texts.append(entry)
    pairs = []
    for p in img.region_texts:
        entry = {
            "region": _flat_region(p.region),
            "confidence": p.confidence,
            "texts": [{"role": c.role.value, "text": c.text} for c in p.texts],
        }
        if p.selected is not None:
            entry["selected"] = p.selected
        pairs.append(entry)
    triplets = []
    for t in img.triplets:
        regions = []
        for r in t.regions:
            rentry: dict = {"box": _flat_region(r.box), "confidence": r.confidence}
            if r.mask is not None:
                rentry["mask"] = [c for v in r.mask.vertices for c in v]
            regions.append(rentry)
        triplets.append(
            {
                "text_ref": t.text_ref,
                "phrase": {"start": t.phrase.start, "end": t.phrase.end,
                           "text": t.phrase.text},
                "regions": regions,
                "phrase_confidence": t.phrase_confidence,
            }
        )
    return {
        "fld_schema": SCHEMA_VERSION,
        "id": img.id,
        "size": {"width": img.size.width, "height": img.size.height},
        "texts": texts,
        "region_texts": pairs,
        "triplets": triplets,
    }


def dumps_record(obj: Mapping) -> str:
    """Canonical one-line JSON: sorted keys, compact separators, raw unicode."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def load_sidecar(source: str) -> dict[str, ParsedSentence]:
    """Parse a .conllu sidecar into a sent_id -> sentence mapping."""
    out: dict[str, ParsedSentence] = {}
    for s in parse_conllu(source):
        if s.sent_id is None:
            raise SchemaError("sidecar sentence without a sent_id")
        if s.sent_id in out:
            raise SchemaError(f"sidecar sent_id {s.sent_id!r} appears twice")
        out[s.sent_id] = s
    return out
