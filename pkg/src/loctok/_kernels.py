"""Numeric hot paths with numba-compiled and pure-numpy twins.

The backend is picked once at import from the ``LOCTOK_KERNELS`` environment
variable: ``numba`` or ``numpy``. Unset, it defaults to numba when the import
succeeds and numpy otherwise. Both twins run the same float64 operations in the
same order, so their outputs are bitwise identical; tests assert that parity.
"""

from __future__ import annotations

import os

import numpy as np

ENV_VAR = "LOCTOK_KERNELS"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def _suppress_sorted_numpy(boxes, labels, iou_threshold, class_aware):
    # boxes are already in descending-score order; rows are [x0, y0, x1, y1].
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x1 - x0) * (y1 - y0)
    alive = np.arange(n)
    while alive.size:
        i = alive[0]
        keep[i] = True
        rest = alive[1:]
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        union = areas[i] + areas[rest] - inter
        iou = np.zeros(rest.shape[0], dtype=np.float64)
        np.divide(inter, union, out=iou, where=union > 0.0)
        drop = iou >= iou_threshold
        if class_aware:
            drop &= labels[rest] == labels[i]
        alive = rest[~drop]
    return keep


@njit(cache=True)
def _suppress_sorted_numba(boxes, labels, iou_threshold, class_aware):
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    kept = np.empty(n, dtype=np.int64)
    n_kept = 0
    for i in range(n):
        area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        ok = True
        for j in range(n_kept):
            k = kept[j]
            if class_aware and labels[k] != labels[i]:
                continue
            iw = min(boxes[i, 2], boxes[k, 2]) - max(boxes[i, 0], boxes[k, 0])
            ih = min(boxes[i, 3], boxes[k, 3]) - max(boxes[i, 1], boxes[k, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            area_k = (boxes[k, 2] - boxes[k, 0]) * (boxes[k, 3] - boxes[k, 1])
            union = area_i + area_k - inter
            iou = inter / union if union > 0.0 else 0.0
            if iou >= iou_threshold:
                ok = False
                break
        if ok:
            keep[i] = True
            kept[n_kept] = i
            n_kept += 1
    return keep


def _histogram_counts_numpy(values, lo, hi, nbins):
    # Half-open uniform bins; values at hi (or clamped above) land in the last bin.
    counts = np.zeros(nbins, dtype=np.int64)
    if values.size == 0:
        return counts
    idx = np.floor((values - lo) / (hi - lo) * nbins).astype(np.int64)
    np.clip(idx, 0, nbins - 1, out=idx)
    np.add.at(counts, idx, 1)
    return counts


@njit(cache=True)
def _histogram_counts_numba(values, lo, hi, nbins):
    counts = np.zeros(nbins, dtype=np.int64)
    for v in values:
        b = int(np.floor((v - lo) / (hi - lo) * nbins))
        if b < 0:
            b = 0
        elif b > nbins - 1:
            b = nbins - 1
        counts[b] += 1
    return counts


def _heatmap_counts_numpy(xs, ys, resolution):
    # xs/ys are centers normalized to [0, 1]; grid rows index y, columns x.
    counts = np.zeros((resolution, resolution), dtype=np.int64)
    if xs.size == 0:
        return counts
    ix = np.floor(xs * resolution).astype(np.int64)
    iy = np.floor(ys * resolution).astype(np.int64)
    np.clip(ix, 0, resolution - 1, out=ix)
    np.clip(iy, 0, resolution - 1, out=iy)
    np.add.at(counts, (iy, ix), 1)
    return counts


@njit(cache=True)
def _heatmap_counts_numba(xs, ys, resolution):
    counts = np.zeros((resolution, resolution), dtype=np.int64)
    for i in range(xs.shape[0]):
        ix = int(np.floor(xs[i] * resolution))
        iy = int(np.floor(ys[i] * resolution))
        if ix < 0:
            ix = 0
        elif ix > resolution - 1:
            ix = resolution - 1
        if iy < 0:
            iy = 0
        elif iy > resolution - 1:
            iy = resolution - 1
        counts[iy, ix] += 1
    return counts


IMPLEMENTATIONS = {
    "numpy": {
        "suppress_sorted": _suppress_sorted_numpy,
        "histogram_counts": _histogram_counts_numpy,
        "heatmap_counts": _heatmap_counts_numpy,
    }
}
if HAS_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "suppress_sorted": _suppress_sorted_numba,
        "histogram_counts": _histogram_counts_numba,
        "heatmap_counts": _heatmap_counts_numba,
    }


def _resolve_backend() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if not choice:
        return "numba" if HAS_NUMBA else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAS_NUMBA:
        raise ImportError(f"{ENV_VAR}=numba requested but numba is not importable")
    return choice


BACKEND = _resolve_backend()
_ACTIVE = IMPLEMENTATIONS[BACKEND]


def suppress_sorted(
    boxes: np.ndarray,
    labels: np.ndarray,
    iou_threshold: float,
    class_aware: bool,
) -> np.ndarray:
    """Greedy suppression over boxes pre-sorted by descending score.

    ``boxes`` is float64 (n, 4) ``[x0, y0, x1, y1]``; ``labels`` is int64 class
    codes (ignored unless ``class_aware``). Returns a bool keep mask aligned to
    the sorted order. A box is kept iff its IoU with every kept box (of the same
    class when ``class_aware``) is strictly below the threshold; IoU is 0 when
    the union area is 0.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _ACTIVE["suppress_sorted"](boxes, labels, float(iou_threshold), bool(class_aware))


def histogram_counts(values: np.ndarray, lo: float, hi: float, nbins: int) -> np.ndarray:
    """Counts for ``nbins`` uniform half-open bins over [lo, hi], last bin closed.

    Out-of-range values are clamped into the edge bins.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    return _ACTIVE["histogram_counts"](values, float(lo), float(hi), int(nbins))


def heatmap_counts(xs: np.ndarray, ys: np.ndarray, resolution: int) -> np.ndarray:
    """(resolution, resolution) int64 grid of normalized center counts.

    Row index is the y bin, column index the x bin; bins are half-open with the
    last bin closed, matching :func:`histogram_counts`.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    return _ACTIVE["heatmap_counts"](xs, ys, int(resolution))
