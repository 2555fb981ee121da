"""Point datasets, bounding boxes, the uniform grid overlay and cell histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BBOX_MARGIN = 1e-9


class DataError(ValueError):
    """Raised for unreadable, malformed or out-of-range point data."""


@dataclass(frozen=True)
class BBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        vals = (self.min_x, self.min_y, self.max_x, self.max_y)
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"bbox has non-finite bounds: {vals}")
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise DataError(f"degenerate bbox: {vals}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    def as_list(self) -> list[float]:
        return [self.min_x, self.min_y, self.max_x, self.max_y]

    def contains(self, xy: np.ndarray) -> np.ndarray:
        return (
            (xy[:, 0] >= self.min_x)
            & (xy[:, 0] <= self.max_x)
            & (xy[:, 1] >= self.min_y)
            & (xy[:, 1] <= self.max_y)
        )


def _expand(lo: float, hi: float) -> tuple[float, float]:
    span = hi - lo
    pad = BBOX_MARGIN * span if span > 0 else BBOX_MARGIN * max(abs(lo), 1.0)
    return lo - pad, hi + pad


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable set of 2-D points stored as an (n, 2) float64 array."""

    xy: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(arr).all():
            raise DataError("dataset contains non-finite coordinates")
        arr.setflags(write=False)
        object.__setattr__(self, "xy", arr)

    def __len__(self) -> int:
        return len(self.xy)

    @property
    def x(self) -> np.ndarray:
        return self.xy[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xy[:, 1]

    def bbox(self) -> BBox:
        """Tight box around the points, padded by a tiny relative margin."""
        if len(self) == 0:
            raise DataError("empty dataset has no bounding box")
        x0, x1 = _expand(float(self.x.min()), float(self.x.max()))
        y0, y1 = _expand(float(self.y.min()), float(self.y.max()))
        return BBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class GridSpec:
    bbox: BBox
    g: int = 30

    def __post_init__(self):
        if int(self.g) != self.g or self.g < 2:
            raise DataError(f"grid size must be an integer >= 2, got {self.g}")

    @property
    def cell_w(self) -> float:
        return self.bbox.width / self.g

    @property
    def cell_h(self) -> float:
        return self.bbox.height / self.g

    def cell_index(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) of every point; row follows y, col follows x.

        Points on the max edge are clamped into the last cell.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        inside = self.bbox.contains(xy)
        if not inside.all():
            k = int(np.flatnonzero(~inside)[0])
            raise DataError(f"point {k} {tuple(xy[k])} lies outside the grid bbox")
        col = np.floor((xy[:, 0] - self.bbox.min_x) / self.cell_w).astype(np.int64)
        row = np.floor((xy[:, 1] - self.bbox.min_y) / self.cell_h).astype(np.int64)
        np.clip(col, 0, self.g - 1, out=col)
        np.clip(row, 0, self.g - 1, out=row)
        return row, col

    def line_x(self, j: int) -> float:
        return self.bbox.min_x + j * self.cell_w

    def line_y(self, i: int) -> float:
        return self.bbox.min_y + i * self.cell_h


@dataclass(frozen=True)
class CellHistogram:
    counts: np.ndarray = field(repr=False)
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"histogram must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise DataError("histogram counts must be non-negative")
        if int(counts.sum()) != self.total:
            raise DataError("histogram total does not match its counts")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def g(self) -> int:
        return self.counts.shape[0]

    def prefix(self) -> np.ndarray:
        """(g+1, g+1) inclusive prefix sums for O(1) rectangle counts."""
        out = np.zeros((self.g + 1, self.g + 1), dtype=np.int64)
        out[1:, 1:] = self.counts.cumsum(0).cumsum(1)
        return out


def build_histogram(d: Dataset, grid: GridSpec) -> CellHistogram:
    row, col = grid.cell_index(d.xy)
    counts = np.zeros((grid.g, grid.g), dtype=np.int64)
    np.add.at(counts, (row, col), 1)
    return CellHistogram(counts, len(d))


def load_points_csv(path, bbox: BBox | None = None, allow_empty: bool = False) -> Dataset:
    """Read "x,y" lines; '#' lines are comments, blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such point file: {path}")
    pts = []
    with path.open("r", newline=None) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'x,y', got {line!r}")
            try:
                x, y = float(parts[0]), float(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: not a number pair: {line!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError(f"{path}:{lineno}: non-finite coordinate")
            if bbox is not None and not (
                bbox.min_x <= x <= bbox.max_x and bbox.min_y <= y <= bbox.max_y
            ):
                raise DataError(f"{path}:{lineno}: point ({x}, {y}) outside bbox")
            pts.append((x, y))
    if not pts and not allow_empty:
        raise DataError(f"{path}: no points")
    return Dataset(np.array(pts, dtype=np.float64).reshape(-1, 2))


def write_points_csv(d: Dataset) -> str:
    return "".join(f"{x!r},{y!r}\n" for x, y in d.xy.tolist())


@dataclass(frozen=True)
class Mixture:
    """Gaussian mixture over the unit square; ``stds`` are per-cluster sigmas."""

    centers: tuple[tuple[float, float], ...]
    stds: tuple[float, ...]
    weights: tuple[float, ...]
    bbox: BBox = BBox(0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        k = len(self.centers)
        if k == 0 or len(self.stds) != k or len(self.weights) != k:
            raise DataError("mixture needs matching centers, stds and weights")
        if any(s <= 0 for s in self.stds):
            raise DataError("mixture variances must be positive")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise DataError("mixture weights must be non-negative and sum to 1")

    @classmethod
    def random(cls, k: int, seed: int, skew: float = 1.5, bbox: BBox | None = None) -> "Mixture":
        """k clusters with random centres, tight spreads and Zipf-like weights."""
        if k < 1:
            raise DataError("need at least one cluster")
        rng = np.random.default_rng([seed, k, 0x5EED])
        centers = rng.uniform(0.15, 0.85, size=(k, 2))
        stds = rng.uniform(0.03, 0.10, size=k)
        raw = 1.0 / np.arange(1, k + 1) ** skew
        weights = raw / raw.sum()
        return cls(
            tuple(map(tuple, centers.tolist())),
            tuple(stds.tolist()),
            tuple(weights.tolist()),
            bbox or BBox(0.0, 0.0, 1.0, 1.0),
        )


def gen_synthetic(kind: str, n: int, seed: int, params: Mixture | None = None) -> Dataset:
    """Deterministic synthetic points in the unit square, scaled to the params' bbox.

    Gaussian draws falling outside the unit square are redrawn.
    """
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    box = params.bbox if params is not None else BBox(0.0, 0.0, 1.0, 1.0)
    if kind == "uniform":
        unit = rng.random((n, 2))
    elif kind in ("gaussian", "gaussian-mixture"):
        if params is None:
            raise DataError("gaussian-mixture needs a Mixture")
        centers = np.asarray(params.centers)
        stds = np.asarray(params.stds)
        unit = np.empty((n, 2))
        filled = 0
        while filled < n:
            need = n - filled
            comp = rng.choice(len(centers), size=need, p=np.asarray(params.weights))
            cand = centers[comp] + rng.standard_normal((need, 2)) * stds[comp, None]
            ok = cand[((cand >= 0.0) & (cand <= 1.0)).all(axis=1)]
            unit[filled : filled + len(ok)] = ok
            filled += len(ok)
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    xy = np.empty_like(unit)
    xy[:, 0] = box.min_x + unit[:, 0] * box.width
    xy[:, 1] = box.min_y + unit[:, 1] * box.height
    np.clip(xy[:, 0], box.min_x, box.max_x, out=xy[:, 0])
    np.clip(xy[:, 1], box.min_y, box.max_y, out=xy[:, 1])
    return Dataset(xy)
