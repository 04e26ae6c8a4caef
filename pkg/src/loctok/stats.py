"""Streaming corpus statistics over annotation records.

Three independent families: the annotation table (counts and token averages
per annotation kind), semantic coverage (element counts and complexity per
text granularity), and spatial coverage (box area/aspect histograms plus a
center heatmap per box source). Every accumulator merges associatively and
commutatively, and all sums are integers or exact rationals, so statistics
computed over shards and merged are byte-identical to a single pass in any
order.

Token counting differs by table on purpose: the annotation table counts
whitespace-split surface tokens, the semantic table counts parse tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

from ._kernels import heatmap_counts, histogram_counts
from .engine import AnnotatedImage
from .geometry import BBox, ImageSize
from .linguistics import SemanticElement, classify_token, token_complexity

AREA_BINS = 50
ASPECT_BINS = 50
ASPECT_LIMIT = math.log(20.0)
DEFAULT_HEATMAP_RESOLUTION = 64

SPATIAL_SOURCES = ("region_text", "triplets")


class Histogram:
    """Uniform half-open bins over [lo, hi]; the last bin is right-closed.

    Out-of-range observations clamp into the edge bins, which doubles as the
    documented clipping of aspect observations.
    """

    __slots__ = ("lo", "hi", "counts")

    def __init__(self, lo: float, hi: float, nbins: int):
        if nbins < 1:
            raise ValueError(f"nbins must be >= 1, got {nbins}")
        if not lo < hi:
            raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self.counts = np.zeros(nbins, dtype=np.int64)

    @property
    def nbins(self) -> int:
        return len(self.counts)

    @property
    def bin_edges(self) -> list[float]:
        span = self.hi - self.lo
        return [self.lo + span * k / self.nbins for k in range(self.nbins + 1)]

    def add(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size:
            self.counts += histogram_counts(arr, self.lo, self.hi, self.nbins)

    def merge(self, other: "Histogram") -> None:
        if (self.lo, self.hi, self.nbins) != (other.lo, other.hi, other.nbins):
            raise ValueError("cannot merge histograms with different bins")
        self.counts += other.counts

    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict:
        return {"bin_edges": self.bin_edges, "counts": self.counts.tolist()}


class HeatmapGrid:
    """G x G counts of normalized box centers; rows index y, columns x."""

    __slots__ = ("counts",)

    def __init__(self, resolution: int = DEFAULT_HEATMAP_RESOLUTION):
        if resolution < 1:
            raise ValueError(f"resolution must be >= 1, got {resolution}")
        self.counts = np.zeros((resolution, resolution), dtype=np.int64)

    @property
    def resolution(self) -> int:
        return len(self.counts)

    def add(self, xs, ys) -> None:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.size:
            self.counts += heatmap_counts(xs, ys, self.resolution)

    def merge(self, other: "HeatmapGrid") -> None:
        if self.resolution != other.resolution:
            raise ValueError("cannot merge heatmaps with different resolutions")
        self.counts += other.counts

    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict:
        return {"resolution": self.resolution, "counts": self.counts.tolist()}


def _avg(numerator, denominator: int) -> float:
    return float(Fraction(numerator) / denominator)


@dataclass
class AnnotationRow:
    """One (kind, subtype) row of the annotation table."""

    annotations: int = 0
    text_tokens: int = 0
    regions: int = 0
    region_tokens: int = 0

    def merge(self, other: "AnnotationRow") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass
class AnnotationStats:
    """The annotation table: one row per (kind, subtype) seen in the corpus.

    Kinds and their subtype axis:
      text        x granularity: annotations = texts, avg_tokens over surfaces.
      region_text x candidate role: annotations = images with >= 1 pair
                  carrying that role, regions = such pairs, regional tokens
                  from each pair's first candidate of the role.
      triplet     x granularity of the referenced text: annotations = distinct
                  grounded (record, text) pairs, regions = member boxes, each
                  box contributing its phrase's token count.

    Region columns are omitted for text rows and avg_tokens for region rows,
    mirroring the blank table cells.
    """

    records: int = 0
    rows: dict = field(default_factory=dict)

    def _row(self, kind: str, subtype: str) -> AnnotationRow:
        return self.rows.setdefault((kind, subtype), AnnotationRow())

    def add_record(self, img: AnnotatedImage) -> None:
        self.records += 1
        for t in img.texts:
            row = self._row("text", t.granularity.value)
            row.annotations += 1
            row.text_tokens += len(t.text.split())

        roles_present = set()
        for pair in img.region_texts:
            seen = set()
            for c in pair.texts:
                if c.role in seen:
                    continue
                seen.add(c.role)
                roles_present.add(c.role.value)
                row = self._row("region_text", c.role.value)
                row.regions += 1
                row.region_tokens += len(c.text.split())
        for role in roles_present:
            self.rows[("region_text", role)].annotations += 1

        grounded: dict[str, set[int]] = {}
        for t in img.triplets:
            g = img.texts[t.text_ref].granularity.value
            grounded.setdefault(g, set()).add(t.text_ref)
            row = self._row("triplet", g)
            row.regions += len(t.regions)
            row.region_tokens += len(t.phrase.text.split()) * len(t.regions)
        for g, refs in grounded.items():
            row = self.rows[("triplet", g)]
            row.annotations += len(refs)
            row.text_tokens += sum(len(img.texts[r].text.split()) for r in refs)

    def merge(self, other: "AnnotationStats") -> None:
        self.records += other.records
        for key, row in other.rows.items():
            self._row(*key).merge(row)

    def as_dict(self) -> dict:
        out: dict = {"text": {}, "region_text": {}, "triplet": {}}
        for (kind, subtype), row in self.rows.items():
            entry = {"image_annotation_count": row.annotations}
            if kind != "region_text":
                entry["avg_tokens"] = _avg(row.text_tokens, row.annotations)
            if kind != "text":
                entry["region_count"] = row.regions
                entry["avg_regions_per_image"] = _avg(row.regions, row.annotations)
                entry["avg_regional_tokens"] = _avg(row.region_tokens, row.regions)
            out[kind][subtype] = entry
        return out


@dataclass
class SemanticRow:
    annotations: int = 0
    tokens: int = 0
    objects: int = 0
    attributes: int = 0
    actions: int = 0
    proper_nouns: int = 0
    # Two-level means: per-annotation mean complexity, then the mean over
    # annotations that have any token of the element type.
    object_complexity_total: Fraction = Fraction(0)
    object_complexity_annotations: int = 0
    action_complexity_total: Fraction = Fraction(0)
    action_complexity_annotations: int = 0

    def merge(self, other: "SemanticRow") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


@dataclass
class SemanticStats:
    """Semantic coverage per text granularity, over parse tokens.

    Texts without parses cannot be assessed; they are skipped and counted
    individually (a record may mix parsed and unparsed texts).
    """

    rows: dict = field(default_factory=dict)
    texts_skipped_no_parse: int = 0

    def add_text(self, ann) -> None:
        if ann.parse is None:
            self.texts_skipped_no_parse += 1
            return
        s = ann.parse
        row = self.rows.setdefault(ann.granularity.value, SemanticRow())
        row.annotations += 1
        row.tokens += len(s.tokens)
        object_c: list[int] = []
        action_c: list[int] = []
        for tok in s.tokens:
            kind = classify_token(tok)
            if kind is SemanticElement.OBJECT:
                row.objects += 1
                object_c.append(token_complexity(s, tok.index))
            elif kind is SemanticElement.ATTRIBUTE:
                row.attributes += 1
            elif kind is SemanticElement.ACTION:
                row.actions += 1
                action_c.append(token_complexity(s, tok.index))
            elif kind is SemanticElement.PROPER_NOUN:
                row.proper_nouns += 1
        if object_c:
            row.object_complexity_total += Fraction(sum(object_c), len(object_c))
            row.object_complexity_annotations += 1
        if action_c:
            row.action_complexity_total += Fraction(sum(action_c), len(action_c))
            row.action_complexity_annotations += 1

    def add_record(self, img: AnnotatedImage) -> None:
        for ann in img.texts:
            self.add_text(ann)

    def merge(self, other: "SemanticStats") -> None:
        self.texts_skipped_no_parse += other.texts_skipped_no_parse
        for key, row in other.rows.items():
            self.rows.setdefault(key, SemanticRow()).merge(row)

    def as_dict(self) -> dict:
        rows = {}
        for g, row in self.rows.items():
            n = row.annotations
            entry = {
                "image_annotation_count": n,
                "avg_tokens": _avg(row.tokens, n),
                "avg_objects": _avg(row.objects, n),
                "avg_attributes": _avg(row.attributes, n),
                "avg_actions": _avg(row.actions, n),
                "avg_proper_nouns": _avg(row.proper_nouns, n),
            }
            if row.object_complexity_annotations:
                entry["avg_object_complexity"] = _avg(
                    row.object_complexity_total, row.object_complexity_annotations
                )
            if row.action_complexity_annotations:
                entry["avg_action_complexity"] = _avg(
                    row.action_complexity_total, row.action_complexity_annotations
                )
            rows[g] = entry
        return {"rows": rows, "texts_skipped_no_parse": self.texts_skipped_no_parse}


def source_boxes(img: AnnotatedImage, source: str) -> list[BBox]:
    """The axis-aligned boxes one spatial source contributes for a record."""
    if source == "region_text":
        return [p.hull() for p in img.region_texts]
    if source == "triplets":
        return [r.box for t in img.triplets for r in t.regions]
    raise ValueError(f"unknown box source {source!r}; expected one of {SPATIAL_SOURCES}")


class SpatialStats:
    """Histograms of box shape plus a center heatmap for one box source.

    Observations per box: sqrt(area ratio) in [0, 1]; ln(width/height)
    clipped to +-ln 20 (zero-extent boxes are skipped for the aspect
    histogram only, and counted); normalized center into the heatmap.
    """

    __slots__ = ("boxes", "aspect_skipped_zero_extent", "area", "aspect", "heatmap")

    def __init__(self, heatmap_resolution: int = DEFAULT_HEATMAP_RESOLUTION):
        self.boxes = 0
        self.aspect_skipped_zero_extent = 0
        self.area = Histogram(0.0, 1.0, AREA_BINS)
        self.aspect = Histogram(-ASPECT_LIMIT, ASPECT_LIMIT, ASPECT_BINS)
        self.heatmap = HeatmapGrid(heatmap_resolution)

    def add_boxes(self, boxes: list[BBox], size: ImageSize) -> None:
        if not boxes:
            return
        arr = np.array([(b.x0, b.y0, b.x1, b.y1) for b in boxes], dtype=np.float64)
        w = arr[:, 2] - arr[:, 0]
        h = arr[:, 3] - arr[:, 1]
        self.boxes += len(boxes)
        self.area.add(np.sqrt(w * h / (size.width * size.height)))
        proper = (w > 0) & (h > 0)
        self.aspect_skipped_zero_extent += int(np.count_nonzero(~proper))
        if proper.any():
            self.aspect.add(np.log(w[proper] / h[proper]))
        self.heatmap.add(
            (arr[:, 0] + arr[:, 2]) / 2.0 / size.width,
            (arr[:, 1] + arr[:, 3]) / 2.0 / size.height,
        )

    def add_record(self, img: AnnotatedImage, source: str) -> None:
        self.add_boxes(source_boxes(img, source), img.size)

    def merge(self, other: "SpatialStats") -> None:
        self.boxes += other.boxes
        self.aspect_skipped_zero_extent += other.aspect_skipped_zero_extent
        self.area.merge(other.area)
        self.aspect.merge(other.aspect)
        self.heatmap.merge(other.heatmap)

    def as_dict(self) -> dict:
        return {
            "boxes": self.boxes,
            "area": self.area.as_dict(),
            "aspect": self.aspect.as_dict(),
            "aspect_skipped_zero_extent": self.aspect_skipped_zero_extent,
            "center_heatmap": self.heatmap.as_dict(),
        }


class CorpusStats:
    """All three statistics families in one streaming pass."""

    __slots__ = ("annotation", "semantic", "spatial")

    def __init__(self, heatmap_resolution: int = DEFAULT_HEATMAP_RESOLUTION):
        self.annotation = AnnotationStats()
        self.semantic = SemanticStats()
        self.spatial = {s: SpatialStats(heatmap_resolution) for s in SPATIAL_SOURCES}

    @property
    def records(self) -> int:
        return self.annotation.records

    def add_record(self, img: AnnotatedImage) -> None:
        self.annotation.add_record(img)
        self.semantic.add_record(img)
        for source in SPATIAL_SOURCES:
            self.spatial[source].add_record(img, source)

    def merge(self, other: "CorpusStats") -> None:
        self.annotation.merge(other.annotation)
        self.semantic.merge(other.semantic)
        for source in SPATIAL_SOURCES:
            self.spatial[source].merge(other.spatial[source])

    def as_dict(self) -> dict:
        return {
            "records": self.records,
            "annotation": self.annotation.as_dict(),
            "semantic": self.semantic.as_dict(),
            "spatial": {s: self.spatial[s].as_dict() for s in SPATIAL_SOURCES},
        }


def annotation_stats(corpus: Iterable[AnnotatedImage]) -> AnnotationStats:
    acc = AnnotationStats()
    for img in corpus:
        acc.add_record(img)
    return acc


def semantic_stats(corpus: Iterable[AnnotatedImage]) -> SemanticStats:
    acc = SemanticStats()
    for img in corpus:
        acc.add_record(img)
    return acc


def spatial_stats(
    corpus: Iterable[AnnotatedImage],
    source: str,
    heatmap_resolution: int = DEFAULT_HEATMAP_RESOLUTION,
) -> SpatialStats:
    acc = SpatialStats(heatmap_resolution)
    for img in corpus:
        acc.add_record(img, source)
    return acc


def histogram_csv(hist: Histogram) -> str:
    """CSV rows (bin_start, bin_end, count); edges in full float precision."""
    edges = hist.bin_edges
    lines = ["bin_start,bin_end,count"]
    for i, count in enumerate(hist.counts.tolist()):
        lines.append(f"{edges[i]!r},{edges[i + 1]!r},{count}")
    return "\n".join(lines) + "\n"


def heatmap_csv(grid: HeatmapGrid) -> str:
    """Row-major counts, one grid row per line."""
    return "\n".join(
        ",".join(str(c) for c in row) for row in grid.counts.tolist()
    ) + "\n"
