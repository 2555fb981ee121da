"""MDP surface: state encoding, action indexing, validity masks and stepping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CellHistogram, GridSpec
from .partition import (
    DIRECTIONS,
    RIGHT,
    CutAction,
    InvalidAction,
    PartitionSet,
    apply_cut,
    init_single,
    is_valid_cut,
    partition_counts,
    valid_mask_array,
)


def state_size(g: int) -> int:
    return (g + 1) * (g + 1) * 3


def action_count(g: int) -> int:
    return 2 * g * g


def action_index(a: CutAction, g: int) -> int:
    i, j, d = a
    return (i * g + j) * 2 + (0 if d == RIGHT else 1)


def index_action(idx: int, g: int) -> CutAction:
    if not 0 <= idx < 2 * g * g:
        raise IndexError(f"action index {idx} outside [0, {2 * g * g})")
    cell, d = divmod(int(idx), 2)
    i, j = divmod(cell, g)
    return CutAction(i, j, DIRECTIONS[d])


@dataclass(frozen=True)
class EnvState:
    ps: PartitionSet
    hist: CellHistogram
    t: int = 0


def reset(grid: GridSpec, hist: CellHistogram) -> EnvState:
    return EnvState(init_single(grid), hist, 0)


def encode_state(e: EnvState) -> np.ndarray:
    """Flat float32 vector of (h, v, p) triples, point-major over (g+1)^2 points.

    p is cell count times covering-rect count over total squared, and 0 on
    the padded last row and column.
    """
    ps, hist = e.ps, e.hist
    g = ps.g
    if hist.total <= 0:
        raise ValueError("histogram is empty")
    per_rect = partition_counts(ps, hist).astype(np.float64)
    out = np.zeros((g + 1, g + 1, 3), dtype=np.float32)
    out[..., 0] = ps.h
    out[..., 1] = ps.v
    out[:g, :g, 2] = hist.counts * per_rect[ps.owner] / float(hist.total) ** 2
    return out.reshape(-1)


def valid_mask(e: EnvState) -> np.ndarray:
    return valid_mask_array(e.ps.h, e.ps.v).reshape(-1)


def mask_from_states(states: np.ndarray, g: int) -> np.ndarray:
    """Validity masks recovered from the h/v channels of encoded states.

    Accepts one vector or a batch; returns shape (..., 2 g^2).
    """
    s = np.asarray(states).reshape(-1, g + 1, g + 1, 3)
    h = s[:, :g, :g, 0]
    v = s[:, :g, :g, 1]
    m = np.stack([(h == 0) & (v == 1), (h == 1) & (v == 0)], axis=-1)
    m = m.reshape(len(s), -1)
    return m[0] if np.ndim(states) == 1 else m


def step(e: EnvState, a: CutAction, m: int) -> tuple[EnvState, bool]:
    """Apply one cut; the episode ends once there are m partitions."""
    if e.t >= m - 1:
        raise InvalidAction(f"episode already terminal at t={e.t} with m={m}")
    if not is_valid_cut(e.ps, a):
        # apply_cut names the violated condition
        apply_cut(e.ps, a)
    nxt = EnvState(apply_cut(e.ps, a), e.hist, e.t + 1)
    return nxt, nxt.t == m - 1


class PartitionEnv:
    """Stateful wrapper used by the training loop: integer actions in, encoded
    states out."""

    def __init__(self, grid: GridSpec, hist: CellHistogram, m: int):
        if m < 2:
            raise ValueError("need at least two partitions")
        self.grid = grid
        self.hist = hist
        self.m = m
        self.state = reset(grid, hist)

    @property
    def g(self) -> int:
        return self.grid.g

    def reset(self) -> np.ndarray:
        self.state = reset(self.grid, self.hist)
        return encode_state(self.state)

    def mask(self) -> np.ndarray:
        return valid_mask(self.state)

    def step(self, idx: int) -> tuple[np.ndarray, bool]:
        self.state, done = step(self.state, index_action(idx, self.g), self.m)
        return encode_state(self.state), done

    @property
    def partitions(self) -> PartitionSet:
        return self.state.ps
