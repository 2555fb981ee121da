"""Distance-join workloads and a deterministic distributed cost oracle.

The oracle stands in for timing a real cluster. Each rectangle is one
worker: it receives every point inside its rectangle expanded by epsilon
(points from neighbours are replicated to it) and runs a bucketed
epsilon-join whose work is ``c_point * N_eps + c_pair * candidates``. A
query costs the slowest worker (makespan) plus ``c_shuffle`` per replicated
point.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .data import Dataset, GridSpec
from .partition import PartitionSet, Rect


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceJoinQuery:
    epsilon: float
    frequency: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise WorkloadError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.frequency > 0 and math.isfinite(self.frequency)):
            raise WorkloadError(f"frequency must be positive, got {self.frequency}")


@dataclass(frozen=True)
class Workload:
    """Queries with frequencies rescaled to sum to one."""

    queries: tuple[DistanceJoinQuery, ...]

    def __post_init__(self):
        if not self.queries:
            raise WorkloadError("workload has no queries")
        total = sum(q.frequency for q in self.queries)
        normed = tuple(DistanceJoinQuery(q.epsilon, q.frequency / total) for q in self.queries)
        object.__setattr__(self, "queries", normed)

    @classmethod
    def of(cls, pairs) -> "Workload":
        """From (epsilon, frequency) pairs."""
        return cls(tuple(DistanceJoinQuery(float(e), float(f)) for e, f in pairs))

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([q.frequency for q in self.queries])

    @property
    def epsilons(self) -> list[float]:
        return [q.epsilon for q in self.queries]

    def __len__(self) -> int:
        return len(self.queries)

    def to_items(self) -> dict[str, str]:
        out = {}
        for n, q in enumerate(self.queries, start=1):
            out[f"query.{n}.epsilon"] = repr(q.epsilon)
            out[f"query.{n}.frequency"] = repr(q.frequency)
        return out


_QUERY_KEY = re.compile(r"^query\.(\d+)\.(epsilon|frequency)$")


def is_workload_key(key: str) -> bool:
    return _QUERY_KEY.match(key) is not None


def workload_from_items(items: dict[str, str]) -> Workload:
    slots: dict[int, dict[str, float]] = {}
    for key, value in items.items():
        m = _QUERY_KEY.match(key)
        if m is None:
            raise WorkloadError(f"unknown workload key {key!r}")
        try:
            slots.setdefault(int(m.group(1)), {})[m.group(2)] = float(value)
        except ValueError:
            raise WorkloadError(f"{key}: not a number: {value!r}") from None
    pairs = []
    for n in sorted(slots):
        slot = slots[n]
        if set(slot) != {"epsilon", "frequency"}:
            raise WorkloadError(f"query.{n} needs both epsilon and frequency")
        pairs.append((slot["epsilon"], slot["frequency"]))
    return Workload.of(pairs)


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment line."""
    items = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise WorkloadError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in items:
            raise WorkloadError(f"{source}:{lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def load_workload(path) -> Workload:
    with open(path) as fh:
        return workload_from_items(parse_kv(fh.read(), str(path)))


def dump_workload(w: Workload) -> str:
    return "".join(f"{k} = {v}\n" for k, v in w.to_items().items())


@dataclass(frozen=True)
class CostParams:
    c_point: float = 1.0
    c_pair: float = 1.0
    c_shuffle: float = 5.0
    prune_factor: float = 2.0
    prune_reward: float = 0.2

    def __post_init__(self):
        for name in ("c_point", "c_pair", "c_shuffle", "prune_reward"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.prune_factor > 1:
            raise ValueError("prune_factor must exceed 1")

    @classmethod
    def preset(cls, name: str) -> "CostParams":
        if name in ("default", "no-index"):
            return cls()
        if name == "local-index":
            return cls(c_pair=0.25)
        raise ValueError(f"unknown cost preset {name!r}")

    def with_(self, **kw) -> "CostParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class CostReport:
    per_query: tuple[float, ...]
    pruned: bool = False

    def weighted(self, w: Workload) -> float:
        if self.pruned:
            raise ValueError("pruned report has no full workload cost")
        return float(np.dot(w.frequencies, self.per_query))

    def to_dict(self) -> dict:
        return {"per_query": list(self.per_query), "pruned": self.pruned}

    @classmethod
    def from_dict(cls, obj: dict) -> "CostReport":
        return cls(tuple(float(c) for c in obj["per_query"]), bool(obj.get("pruned", False)))


@dataclass(frozen=True)
class RectStats:
    cost: float
    n_inside: int
    n_expanded: int
    candidates: int


def candidate_pairs(x: np.ndarray, y: np.ndarray, x0: float, y0: float, eps: float) -> int:
    """Candidate count of an epsilon-bucketed join anchored at (x0, y0)."""
    if len(x) == 0:
        return 0
    keys, stride = kernels.bucket_keys(x, y, x0, y0, eps)
    ukeys, counts = np.unique(keys, return_counts=True)
    return kernels.neighbor_candidates(ukeys, counts, stride)


class JoinCostOracle:
    """Deterministic cost oracle bound to one dataset and grid.

    Any object exposing ``workload_cost(ps, w)`` and
    ``pruned_workload_cost(ps, w, best)`` can replace it in training, e.g. a
    wall-clock adapter; ``repeats`` is how many runs such an adapter takes
    the median of (one suffices here).
    """

    repeats = 1
    max_cache = 500_000

    def __init__(self, data: Dataset, grid: GridSpec, params: CostParams | None = None):
        self.data = data
        self.grid = grid
        self.params = params or CostParams()
        self._rows, self._cols = grid.cell_index(data.xy)
        self._cache: dict[tuple, RectStats] = {}
        self.evaluations = 0

    def rect_stats(self, r: Rect, eps: float) -> RectStats:
        key = (tuple(r), eps)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        grid, p = self.grid, self.params
        t, l, b, rt = r
        inside = (self._rows >= t) & (self._rows < b) & (self._cols >= l) & (self._cols < rt)
        box = grid.bbox
        ex0 = max(grid.line_x(l) - eps, box.min_x)
        ex1 = min(grid.line_x(rt) + eps, box.max_x)
        ey0 = max(grid.line_y(t) - eps, box.min_y)
        ey1 = min(grid.line_y(b) + eps, box.max_y)
        x, y = self.data.x, self.data.y
        region = inside | ((x >= ex0) & (x <= ex1) & (y >= ey0) & (y <= ey1))
        n_in = int(inside.sum())
        n_exp = int(region.sum())
        cand = candidate_pairs(x[region], y[region], ex0, ey0, eps)
        stats = RectStats(p.c_point * n_exp + p.c_pair * cand, n_in, n_exp, cand)
        if len(self._cache) >= self.max_cache:
            self._cache.clear()
        self._cache[key] = stats
        return stats

    def query_cost(self, ps: PartitionSet, eps: float) -> float:
        stats = [self.rect_stats(r, eps) for r in ps.rects]
        makespan = max(s.cost for s in stats)
        shuffled = sum(s.n_expanded - s.n_inside for s in stats)
        return float(makespan + self.params.c_shuffle * shuffled)

    def workload_cost(self, ps: PartitionSet, w: Workload) -> CostReport:
        self.evaluations += 1
        return CostReport(tuple(self.query_cost(ps, q.epsilon) for q in w.queries))

    def pruned_workload_cost(self, ps: PartitionSet, w: Workload, best: CostReport) -> CostReport:
        """Evaluate queries in order, stopping at the first one slower than
        ``prune_factor`` times its cost on the best partitions."""
        if best.pruned:
            raise ValueError("reference report must not be pruned")
        costs = []
        for q, ref in zip(w.queries, best.per_query):
            c = self.query_cost(ps, q.epsilon)
            costs.append(c)
            if c > self.params.prune_factor * ref:
                return CostReport(tuple(costs), pruned=True)
        self.evaluations += 1
        return CostReport(tuple(costs))


def local_join_cost(d: Dataset, r: Rect, grid: GridSpec, eps: float, p: CostParams) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return JoinCostOracle(d, grid, p).rect_stats(Rect(*r), eps).cost


def workload_cost(d: Dataset, ps: PartitionSet, w: Workload, p: CostParams) -> CostReport:
    return JoinCostOracle(d, ps.grid, p).workload_cost(ps, w)


def pruned_workload_cost(d: Dataset, ps: PartitionSet, w: Workload, p: CostParams, best: CostReport) -> CostReport:
    return JoinCostOracle(d, ps.grid, p).pruned_workload_cost(ps, w, best)


def compute_reward(best: CostReport, episode: CostReport, w: Workload) -> float:
    """Squared frequency-weighted mean of best/episode cost ratios (> 1 means
    the episode beat the best)."""
    if best.pruned or episode.pruned:
        raise ValueError("reward needs complete (unpruned) reports")
    if not len(best.per_query) == len(episode.per_query) == len(w):
        raise ValueError("reports and workload disagree on the number of queries")
    f = w.frequencies
    e = np.asarray(episode.per_query, dtype=np.float64)
    if (e <= 0).any():
        raise ValueError("episode cost must be positive")
    ratios = np.asarray(best.per_query, dtype=np.float64) / e
    # dividing by sum(f) makes identical reports give exactly 1.0
    return float((np.dot(f, ratios) / np.dot(f, np.ones_like(f))) ** 2)


def verification_join(d: Dataset, eps: float) -> np.ndarray:
    """Exact result pairs (i < j) of an epsilon distance join, shape (k, 2)."""
    i, j = kernels.epsilon_join(d.x, d.y, eps)
    return np.stack([i, j], axis=1)
