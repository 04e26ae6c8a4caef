"""Region geometry: image-space types, 1000-bin coordinate codec, IoU, NMS."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import CoordinateError

BINS = 1000


@dataclass(frozen=True)
class ImageSize:
    """Pixel extents of an image; both must be strictly positive."""

    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise CoordinateError(
                f"image size must be positive, got {self.width} x {self.height}"
            )


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with x0 <= x1 and y0 <= y1; zero area is legal."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise CoordinateError(
                f"box corners out of order: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)


@dataclass(frozen=True)
class QuadBox:
    """Four vertices, first top-left then clockwise by convention.

    The stored order is authoritative; vertices are never re-sorted and the
    convention is not checked.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(tuple(v) for v in self.vertices))
        if len(self.vertices) != 4:
            raise CoordinateError(f"quad needs exactly 4 vertices, got {len(self.vertices)}")

    def hull(self) -> BBox:
        """Axis-aligned bounding box of the vertices."""
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return BBox(min(xs), min(ys), max(xs), max(ys))


def signed_area(vertices: Sequence[tuple[float, float]]) -> float:
    """Signed ring area; non-positive for clockwise order under y-down coordinates."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        total += (x2 - x1) * (y2 + y1)
    return total / 2.0


@dataclass(frozen=True)
class Polygon:
    """Closed ring of >= 3 vertices stored in clockwise order (y-down)."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(tuple(v) for v in self.vertices))
        if len(self.vertices) < 3:
            raise CoordinateError(f"polygon needs >= 3 vertices, got {len(self.vertices)}")
        if signed_area(self.vertices) > 0:
            raise CoordinateError("polygon vertices are not in clockwise order")

    def hull(self) -> BBox:
        """Axis-aligned bounding box of the vertices."""
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return BBox(min(xs), min(ys), max(xs), max(ys))


class RegionKind(enum.Enum):
    BOX = "box"
    QUAD = "quad"
    POLYGON = "polygon"


_KIND_ARITY = {RegionKind.BOX: 4, RegionKind.QUAD: 8}


@dataclass(frozen=True)
class QuantizedRegion:
    """A region as flat coordinate bins: box = 4, quad = 8, polygon = even >= 6.

    Bins alternate x, y and each lies in [0, 1000). Box bins follow
    ``[x0, y0, x1, y1]`` but no ordering is enforced at this layer; a box whose
    bins are disordered only fails once dequantized to pixel space.
    """

    kind: RegionKind
    bins: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        n = len(self.bins)
        want = _KIND_ARITY.get(self.kind)
        if want is not None:
            if n != want:
                raise CoordinateError(f"{self.kind.value} region needs {want} bins, got {n}")
        else:
            if n < 6 or n % 2:
                raise CoordinateError(f"polygon region needs an even bin count >= 6, got {n}")
        for b in self.bins:
            if not 0 <= b < BINS:
                raise CoordinateError(f"bin {b} outside [0, {BINS})")


@dataclass(frozen=True)
class ScoredBox:
    """A detection: box, confidence in [0, 1], optional class label."""

    box: BBox
    score: float
    label: Union[str, None] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise CoordinateError(f"score {self.score} outside [0, 1]")


Region = Union[BBox, QuadBox, Polygon]


def quantize_coord(value: float, extent: float) -> int:
    """Map a coordinate in [0, extent] to its bin: floor(value/extent*1000), clamped."""
    if not extent > 0:
        raise CoordinateError(f"extent must be positive, got {extent}")
    if not 0 <= value <= extent:
        raise CoordinateError(f"coordinate {value} outside [0, {extent}]")
    b = int(value / extent * BINS)
    return min(b, BINS - 1)


def dequantize_coord(bin_index: int, extent: float) -> float:
    """Map a bin back to the pixel coordinate of its center."""
    if not extent > 0:
        raise CoordinateError(f"extent must be positive, got {extent}")
    if not 0 <= bin_index < BINS:
        raise CoordinateError(f"bin {bin_index} outside [0, {BINS})")
    return (bin_index + 0.5) / BINS * extent


def _quantize_points(
    points: Sequence[tuple[float, float]], size: ImageSize
) -> tuple[int, ...]:
    bins: list[int] = []
    for i, (x, y) in enumerate(points):
        try:
            bins.append(quantize_coord(x, size.width))
            bins.append(quantize_coord(y, size.height))
        except CoordinateError as e:
            raise CoordinateError(f"vertex {i}: {e}") from None
    return tuple(bins)


def quantize_region(region: Region, size: ImageSize) -> QuantizedRegion:
    """Quantize every coordinate of a region against the image extents."""
    if isinstance(region, BBox):
        pts = [(region.x0, region.y0), (region.x1, region.y1)]
        return QuantizedRegion(RegionKind.BOX, _quantize_points(pts, size))
    if isinstance(region, QuadBox):
        return QuantizedRegion(RegionKind.QUAD, _quantize_points(region.vertices, size))
    if isinstance(region, Polygon):
        return QuantizedRegion(RegionKind.POLYGON, _quantize_points(region.vertices, size))
    raise TypeError(f"not a region: {region!r}")


def dequantize_region(region: QuantizedRegion, size: ImageSize) -> Region:
    """Map every bin of a quantized region back to pixel-space bin centers."""
    coords = [
        dequantize_coord(b, size.width if i % 2 == 0 else size.height)
        for i, b in enumerate(region.bins)
    ]
    points = tuple(zip(coords[0::2], coords[1::2]))
    if region.kind is RegionKind.BOX:
        (x0, y0), (x1, y1) = points
        return BBox(x0, y0, x1, y1)
    if region.kind is RegionKind.QUAD:
        return QuadBox(points)
    return Polygon(points)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union area is 0."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms_indices(
    boxes: Sequence[BBox],
    scores: Sequence[float],
    labels: Sequence[object],
    iou_threshold: float,
    class_aware: bool,
) -> list[int]:
    """Greedy NMS over parallel sequences; returns kept input indices.

    Candidates are visited in descending score, ties broken by input order.
    A candidate is kept iff its IoU with every already-kept box (of the same
    label when ``class_aware``) is strictly below ``iou_threshold``. The result
    is in visit order (descending score).
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise CoordinateError(f"iou_threshold {iou_threshold} outside [0, 1]")
    n = len(boxes)
    if n == 0:
        return []
    arr = np.array([(b.x0, b.y0, b.x1, b.y1) for b in boxes], dtype=np.float64)
    score_arr = np.array(scores, dtype=np.float64)
    codes: dict[object, int] = {}
    label_arr = np.array([codes.setdefault(l, len(codes)) for l in labels], dtype=np.int64)
    order = np.argsort(-score_arr, kind="stable")
    keep = _kernels.suppress_sorted(arr[order], label_arr[order], iou_threshold, class_aware)
    return [int(i) for i in order[keep]]


def nms(
    boxes: Sequence[ScoredBox],
    iou_threshold: float,
    class_aware: bool = False,
) -> list[ScoredBox]:
    """Greedy NMS over scored boxes; see :func:`nms_indices` for the exact rule."""
    kept = nms_indices(
        [b.box for b in boxes],
        [b.score for b in boxes],
        [b.label for b in boxes],
        iou_threshold,
        class_aware,
    )
    return [boxes[i] for i in kept]
