"""Classical partitioners (uniform grid, quad-tree, KDB-tree) as cut sequences.

Every baseline emits grid-aligned cut actions, so its output can be replayed
through the environment and used as demonstration data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CellHistogram, GridSpec
from .partition import (
    DOWN,
    RIGHT,
    CutAction,
    PartitionSet,
    Rect,
    apply_cut,
    init_single,
    partition_counts,
)

METHODS = ("uniform", "quadtree", "kdbtree")


class BaselineError(ValueError):
    pass


@dataclass
class DemoEpisode:
    actions: list[CutAction]
    final: PartitionSet
    method: str

    def replay(self) -> PartitionSet:
        ps = init_single(self.final.grid)
        for a in self.actions:
            ps = apply_cut(ps, a)
        return ps

    def to_dict(self) -> dict:
        out = self.final.to_dict()
        out["method"] = self.method
        out["actions"] = [a.to_json() for a in self.actions]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "DemoEpisode":
        final = PartitionSet.from_dict(obj)
        actions = [CutAction.from_json(a) for a in obj.get("actions", [])]
        ep = cls(actions, final, obj.get("method", "kdbtree"))
        if not ep.replay().same_partition(final):
            raise ValueError("demo actions do not reproduce the stored rects")
        return ep


def _check_grid(hist: CellHistogram, grid: GridSpec):
    if hist.g != grid.g:
        raise BaselineError(f"histogram grid {hist.g} does not match grid {grid.g}")


def _densest(ps: PartitionSet, hist: CellHistogram, usable=lambda r: True) -> int | None:
    counts = partition_counts(ps, hist)
    order = sorted(range(len(ps.rects)), key=lambda k: (-counts[k], ps.rects[k].top, ps.rects[k].left))
    for k in order:
        if usable(ps.rects[k]):
            return k
    return None


def balanced_line(marginal: np.ndarray) -> int:
    """Offset (1..len-1) of the split line with the smallest |left - right| mass.

    Ties go to the lower offset.
    """
    total = int(marginal.sum())
    left = np.cumsum(marginal)[:-1]
    return int(np.argmin(np.abs(2 * left - total))) + 1


def median_split(ps: PartitionSet, hist: CellHistogram, r: Rect) -> CutAction:
    """KDB split of one rectangle: longer side (tie: vertical cut) at the
    grid line that best balances the data on either side."""
    vertical = r.width >= r.height
    if vertical and r.width < 2:
        vertical = False
    if not vertical and r.height < 2:
        if r.width < 2:
            raise BaselineError(f"rect {tuple(r)} has no interior grid line to split on")
        vertical = True
    block = hist.counts[r.top : r.bottom, r.left : r.right]
    if vertical:
        return CutAction(r.top, r.left + balanced_line(block.sum(axis=0)), DOWN)
    return CutAction(r.top + balanced_line(block.sum(axis=1)), r.left, RIGHT)


def kdb_actions(hist: CellHistogram, grid: GridSpec, m: int) -> DemoEpisode:
    _check_grid(hist, grid)
    if not 2 <= m <= grid.g:
        raise BaselineError(f"KDB partition count must be in [2, {grid.g}], got {m}")
    ps = init_single(grid)
    actions = []
    for _ in range(m - 1):
        k = _densest(ps, hist)
        a = median_split(ps, hist, ps.rects[k])
        actions.append(a)
        ps = apply_cut(ps, a)
    return DemoEpisode(actions, ps, "kdbtree")


def _split_lines(g: int, parts: int) -> list[int]:
    return [int(math.floor(k * g / parts + 0.5)) for k in range(1, parts)]


def uniform_actions(grid: GridSpec, m: int) -> DemoEpisode:
    """r x c near-equal tiles, r the largest divisor of m not above sqrt(m)."""
    g = grid.g
    if m < 1:
        raise BaselineError(f"partition count must be >= 1, got {m}")
    if m > g * g:
        raise BaselineError(f"{m} partitions do not fit a {g}x{g} grid")
    rows = max(d for d in range(1, math.isqrt(m) + 1) if m % d == 0)
    cols = m // rows
    if cols > g:
        raise BaselineError(f"uniform layout {rows}x{cols} needs more than {g} columns")
    col_lines = _split_lines(g, cols)
    row_lines = _split_lines(g, rows)
    actions = [CutAction(0, j, DOWN) for j in col_lines]
    for left in [0] + col_lines:
        actions.extend(CutAction(i, left, RIGHT) for i in row_lines)
    ps = init_single(grid)
    for a in actions:
        ps = apply_cut(ps, a)
    return DemoEpisode(actions, ps, "uniform")


def quadtree_actions(hist: CellHistogram, grid: GridSpec, m: int) -> DemoEpisode:
    """Quad splits of the densest splittable rect while they fit in m, then
    KDB binary splits to land on exactly m rects."""
    _check_grid(hist, grid)
    if m < 1:
        raise BaselineError(f"partition count must be >= 1, got {m}")
    if m > grid.g * grid.g:
        raise BaselineError(f"{m} partitions do not fit a {grid.g}x{grid.g} grid")
    ps = init_single(grid)
    actions = []
    while len(ps.rects) + 3 <= m:
        k = _densest(ps, hist, usable=lambda r: r.height >= 2 and r.width >= 2)
        if k is None:
            raise BaselineError("no rect is large enough for a quad split")
        r = ps.rects[k]
        mid_i = (r.top + r.bottom) // 2
        mid_j = (r.left + r.right) // 2
        for a in (CutAction(r.top, mid_j, DOWN), CutAction(mid_i, r.left, RIGHT), CutAction(mid_i, mid_j, RIGHT)):
            actions.append(a)
            ps = apply_cut(ps, a)
    while len(ps.rects) < m:
        k = _densest(ps, hist, usable=lambda r: r.cells >= 2)
        if k is None:
            raise BaselineError("no rect left to split")
        a = median_split(ps, hist, ps.rects[k])
        actions.append(a)
        ps = apply_cut(ps, a)
    return DemoEpisode(actions, ps, "quadtree")


def baseline(method: str, hist: CellHistogram, grid: GridSpec, m: int) -> DemoEpisode:
    if method in ("kdb", "kdbtree"):
        return kdb_actions(hist, grid, m)
    if method in ("quad", "quadtree"):
        return quadtree_actions(hist, grid, m)
    if method == "uniform":
        return uniform_actions(grid, m)
    raise BaselineError(f"unknown baseline method {method!r}")
