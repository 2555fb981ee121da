"""Guillotine partitions of the g x g cell grid.

A partition set is stored twice: as boundary bits on grid points (``h`` for
the top side of each cell, ``v`` for its left side, both padded to
(g+1) x (g+1)) and as a list of half-open cell rectangles. ``owner`` maps
each cell to the index of its rectangle.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

from .data import BBox, CellHistogram, GridSpec

RIGHT = "right"
DOWN = "down"
DIRECTIONS = (RIGHT, DOWN)


class InvalidAction(ValueError):
    pass


class CutAction(NamedTuple):
    i: int
    j: int
    dir: str

    def to_json(self) -> list:
        return [int(self.i), int(self.j), self.dir]

    @classmethod
    def from_json(cls, obj) -> "CutAction":
        i, j, d = obj
        if d not in DIRECTIONS:
            raise ValueError(f"bad direction {d!r}")
        return cls(int(i), int(j), d)


class Rect(NamedTuple):
    top: int
    left: int
    bottom: int
    right: int

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def cells(self) -> int:
        return self.height * self.width


class PartitionSet:
    __slots__ = ("grid", "h", "v", "owner", "rects")

    def __init__(self, grid: GridSpec, h: np.ndarray, v: np.ndarray, owner: np.ndarray, rects: list[Rect]):
        self.grid = grid
        self.h = h
        self.v = v
        self.owner = owner
        self.rects = rects

    @property
    def g(self) -> int:
        return self.grid.g

    def copy(self) -> "PartitionSet":
        return PartitionSet(self.grid, self.h.copy(), self.v.copy(), self.owner.copy(), list(self.rects))

    def rect_of(self, i: int, j: int) -> Rect:
        return self.rects[self.owner[i, j]]

    def same_partition(self, other: "PartitionSet") -> bool:
        return (
            self.g == other.g
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.v, other.v)
        )

    def sorted_rects(self) -> list[Rect]:
        return sorted(self.rects)

    def __repr__(self) -> str:
        return f"PartitionSet(g={self.g}, rects={self.rects})"

    # JSON ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "grid": self.g,
            "bbox": self.grid.bbox.as_list(),
            "rects": [list(map(int, r)) for r in self.rects],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "PartitionSet":
        try:
            g = int(obj["grid"])
            grid = GridSpec(BBox(*map(float, obj["bbox"])), g)
            rects = [Rect(*map(int, r)) for r in obj["rects"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed partition JSON: {exc}") from None
        return from_rects(grid, rects)

    @classmethod
    def from_json(cls, text: str) -> "PartitionSet":
        return cls.from_dict(json.loads(text))


def bounds_from_rects(g: int, rects) -> tuple[np.ndarray, np.ndarray]:
    h = np.zeros((g + 1, g + 1), dtype=np.uint8)
    v = np.zeros((g + 1, g + 1), dtype=np.uint8)
    for t, l, b, r in rects:
        h[t, l:r] = 1
        h[b, l:r] = 1
        v[t:b, l] = 1
        v[t:b, r] = 1
    return h, v


def from_rects(grid: GridSpec, rects) -> PartitionSet:
    """Build a partition set from rectangles, rejecting gaps and overlaps."""
    g = grid.g
    owner = np.full((g, g), -1, dtype=np.int32)
    rects = [Rect(*r) for r in rects]
    for k, r in enumerate(rects):
        if not (0 <= r.top < r.bottom <= g and 0 <= r.left < r.right <= g):
            raise ValueError(f"rect {tuple(r)} is empty or outside the {g}x{g} grid")
        if (owner[r.top : r.bottom, r.left : r.right] >= 0).any():
            raise ValueError(f"rect {tuple(r)} overlaps another rect")
        owner[r.top : r.bottom, r.left : r.right] = k
    if (owner < 0).any():
        raise ValueError("rects do not cover the whole grid")
    h, v = bounds_from_rects(g, rects)
    return PartitionSet(grid, h, v, owner, rects)


def init_single(grid: GridSpec) -> PartitionSet:
    g = grid.g
    return from_rects(grid, [Rect(0, 0, g, g)])


def _in_range(ps: PartitionSet, a) -> bool:
    return 0 <= a[0] < ps.g and 0 <= a[1] < ps.g and a[2] in DIRECTIONS


def is_valid_cut(ps: PartitionSet, a) -> bool:
    if not _in_range(ps, a):
        return False
    i, j, d = a
    if d == RIGHT:
        return ps.h[i, j] == 0 and ps.v[i, j] == 1
    return ps.h[i, j] == 1 and ps.v[i, j] == 0


def is_valid_cut_by_rects(ps: PartitionSet, a) -> bool:
    """Same predicate phrased on rectangles: the start point lies strictly
    inside one edge of some rectangle."""
    if not _in_range(ps, a):
        return False
    i, j, d = a
    for r in ps.rects:
        if d == RIGHT and r.left == j and r.top < i < r.bottom:
            return True
        if d == DOWN and r.top == i and r.left < j < r.right:
            return True
    return False


def apply_cut(ps: PartitionSet, a) -> PartitionSet:
    """Return a new partition set with the rectangle at the start point split."""
    if not _in_range(ps, a):
        raise InvalidAction(f"action {tuple(a)} is outside the {ps.g}x{ps.g} grid")
    i, j, d = a
    if d == RIGHT:
        if ps.v[i, j] != 1:
            raise InvalidAction(f"{tuple(a)}: dir=right needs v[{i}][{j}]=1")
        if ps.h[i, j] != 0:
            raise InvalidAction(f"{tuple(a)}: dir=right needs h[{i}][{j}]=0")
    else:
        if ps.h[i, j] != 1:
            raise InvalidAction(f"{tuple(a)}: dir=down needs h[{i}][{j}]=1")
        if ps.v[i, j] != 0:
            raise InvalidAction(f"{tuple(a)}: dir=down needs v[{i}][{j}]=0")
    out = ps.copy()
    k = int(ps.owner[i, j])
    r = ps.rects[k]
    if d == RIGHT:
        first, second = Rect(r.top, r.left, i, r.right), Rect(i, r.left, r.bottom, r.right)
        out.h[i, r.left : r.right] = 1
    else:
        first, second = Rect(r.top, r.left, r.bottom, j), Rect(r.top, j, r.bottom, r.right)
        out.v[r.top : r.bottom, j] = 1
    out.rects[k] = first
    out.rects.append(second)
    out.owner[second.top : second.bottom, second.left : second.right] = len(out.rects) - 1
    return out


def valid_mask_array(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(g, g, 2) boolean array: [..., 0] right, [..., 1] down."""
    g = h.shape[0] - 1
    hh = h[:g, :g]
    vv = v[:g, :g]
    return np.stack([(hh == 0) & (vv == 1), (hh == 1) & (vv == 0)], axis=-1)


def enumerate_valid_actions(ps: PartitionSet) -> list[CutAction]:
    """Valid actions in row-major order, right before down."""
    mask = valid_mask_array(ps.h, ps.v)
    return [CutAction(int(i), int(j), DIRECTIONS[d]) for i, j, d in zip(*np.nonzero(mask))]


def partition_counts(ps: PartitionSet, hist: CellHistogram) -> np.ndarray:
    """Points per rectangle, aligned with ``ps.rects``."""
    if hist.g != ps.g:
        raise ValueError(f"histogram grid {hist.g} does not match partition grid {ps.g}")
    s = hist.prefix()
    r = np.asarray(ps.rects, dtype=np.int64).reshape(-1, 4)
    t, l, b, rt = r[:, 0], r[:, 1], r[:, 2], r[:, 3]
    return s[b, rt] - s[t, rt] - s[b, l] + s[t, l]


def check_invariants(ps: PartitionSet) -> list[str]:
    """Human-readable list of violated structural invariants (empty if sound)."""
    g = ps.g
    problems = []
    cover = np.zeros((g, g), dtype=np.int64)
    for r in ps.rects:
        if not (0 <= r.top < r.bottom <= g and 0 <= r.left < r.right <= g):
            problems.append(f"bad rect {tuple(r)}")
            continue
        cover[r.top : r.bottom, r.left : r.right] += 1
    if (cover != 1).any():
        problems.append(f"cover counts in [{cover.min()}, {cover.max()}], expected exactly 1")
    h, v = bounds_from_rects(g, ps.rects)
    if not np.array_equal(h, ps.h):
        problems.append("h bits differ from rect edges")
    if not np.array_equal(v, ps.v):
        problems.append("v bits differ from rect edges")
    for k, r in enumerate(ps.rects):
        if (ps.owner[r.top : r.bottom, r.left : r.right] != k).any():
            problems.append(f"owner map disagrees for rect {k}")
    if not (ps.h[0, :g].all() and ps.h[g, :g].all() and ps.v[:g, 0].all() and ps.v[:g, g].all()):
        problems.append("map border bits missing")
    return problems
