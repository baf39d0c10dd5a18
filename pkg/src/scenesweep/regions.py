"""Connected-component labeling for binary masks.

Row-run based two-pass labeling with union-find: runs of foreground pixels
are extracted per row, then merged across adjacent rows.  Fast enough for
per-stage use without pulling in an image-processing dependency.
"""

from __future__ import annotations

import numpy as np


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _union(parent: list[int], a: int, b: int) -> None:
    ra, rb = _find(parent, a), _find(parent, b)
    if ra != rb:
        parent[max(ra, rb)] = min(ra, rb)


def label_regions(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label connected components of a boolean mask.

    Returns (labels, count) where labels is int32 with 0 = background and
    components numbered 1..count in scan order of their topmost-leftmost run.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    # runs[y] = list of (x_start, x_end, run_id), x_end exclusive
    runs_per_row: list[list[tuple[int, int, int]]] = []
    parent: list[int] = []
    for y in range(h):
        row = mask[y]
        if not row.any():
            runs_per_row.append([])
            continue
        padded = np.concatenate(([False], row, [False]))
        diff = np.diff(padded.astype(np.int8))
        starts = np.nonzero(diff == 1)[0]
        ends = np.nonzero(diff == -1)[0]
        row_runs = []
        for x0, x1 in zip(starts, ends):
            rid = len(parent)
            parent.append(rid)
            row_runs.append((int(x0), int(x1), rid))
        runs_per_row.append(row_runs)
    # Merge runs between adjacent rows.
    reach = 1 if connectivity == 8 else 0
    for y in range(1, h):
        above, here = runs_per_row[y - 1], runs_per_row[y]
        if not above or not here:
            continue
        for a0, a1, aid in above:
            for b0, b1, bid in here:
                if a0 <= b1 - 1 + reach and b0 <= a1 - 1 + reach:
                    _union(parent, aid, bid)
    # Compact root ids into 1..count in first-appearance order.
    remap: dict[int, int] = {}
    for row_runs in runs_per_row:
        for x0, x1, rid in row_runs:
            root = _find(parent, rid)
            if root not in remap:
                remap[root] = len(remap) + 1
    for y, row_runs in enumerate(runs_per_row):
        for x0, x1, rid in row_runs:
            labels[y, x0:x1] = remap[_find(parent, rid)]
    return labels, len(remap)


def largest_region(mask: np.ndarray, connectivity: int = 8) -> np.ndarray | None:
    """Boolean mask of the largest component, or None if the mask is empty.
    Ties break toward the lower label (earlier in scan order)."""
    labels, count = label_regions(mask, connectivity)
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def region_at(mask: np.ndarray, point: tuple[int, int], connectivity: int = 8) -> np.ndarray | None:
    """Component containing pixel (x, y), or None if background there."""
    labels, count = label_regions(mask, connectivity)
    x, y = point
    if not (0 <= y < labels.shape[0] and 0 <= x < labels.shape[1]):
        return None
    lab = labels[y, x]
    if lab == 0:
        return None
    return labels == lab
