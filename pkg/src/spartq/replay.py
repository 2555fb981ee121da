"""Prioritized replay memories (demo + agent) and n-step transitions."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .neural import atomic_write_bytes


@dataclass
class Transition:
    s: np.ndarray
    a: int
    ret: float
    s_next: np.ndarray
    steps: int
    terminal: bool
    is_demo: bool = False


class SumTree:
    """Heap-layout sum tree: root at 1, leaves at [cap, 2 cap)."""

    def __init__(self, capacity: int):
        self.capacity = 1 << max(0, int(capacity) - 1).bit_length()
        self.tree = np.zeros(2 * self.capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity :]

    def get(self, idx: int) -> float:
        return float(self.tree[self.capacity + idx])

    def set(self, idx: int, value: float):
        node = self.capacity + idx
        self.tree[node] = value
        node //= 2
        while node >= 1:
            # recompute instead of adding deltas so rounding never accumulates
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]
            node //= 2

    def find(self, values) -> np.ndarray:
        return kernels.sumtree_find(self.tree, self.capacity, np.asarray(values, dtype=np.float64))

    def grow(self, capacity: int):
        old = self.leaves().copy()
        self.__init__(capacity)
        self.tree[self.capacity : self.capacity + len(old)] = old
        for node in range(self.capacity - 1, 0, -1):
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]


class PrioritizedMemory:
    """Proportional prioritized replay.

    Leaves hold ``priority ** alpha``. With ``evict`` the memory is a ring
    buffer; otherwise it grows past its initial capacity and never drops
    entries (the demo memory).
    """

    def __init__(self, capacity: int, evict: bool = True, alpha: float = 0.6, eps_p: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.evict = evict
        self.alpha = alpha
        self.eps_p = eps_p
        self.tree = SumTree(self.capacity)
        self.data: list[Transition] = []
        self.priorities = np.zeros(self.capacity, dtype=np.float64)
        self._next = 0

    def __len__(self) -> int:
        return len(self.data)

    def _max_leaf(self) -> float:
        if not self.data:
            return 1.0
        return float(self.tree.leaves()[: len(self.data)].max())

    def push(self, t: Transition):
        leaf = self._max_leaf()
        if len(self.data) < self.capacity:
            idx = len(self.data)
            self.data.append(t)
        elif self.evict:
            idx = self._next
            self.data[idx] = t
        else:
            self.capacity *= 2
            self.tree.grow(self.capacity)
            self.priorities = np.resize(self.priorities, self.capacity)
            self.priorities[len(self.data) :] = 0.0
            idx = len(self.data)
            self.data.append(t)
        if self.evict:
            self._next = (idx + 1) % self.capacity
        self.priorities[idx] = leaf ** (1.0 / self.alpha)
        self.tree.set(idx, leaf)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: len(self.data)]
        return leaves / self.tree.total

    def sample(self, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """k independent draws proportional to stored leaf values."""
        if not self.data:
            raise ValueError("cannot sample from an empty memory")
        total = self.tree.total
        idx = self.tree.find(rng.random(k) * total)
        np.minimum(idx, len(self.data) - 1, out=idx)
        probs = self.tree.leaves()[idx] / total
        return idx, probs

    def update_priorities(self, indices, td_errors):
        indices = np.asarray(indices, dtype=np.int64)
        td = np.abs(np.asarray(td_errors, dtype=np.float64))
        if len(indices) != len(td):
            raise ValueError("indices and td_errors differ in length")
        if len(indices) and (indices.min() < 0 or indices.max() >= len(self.data)):
            raise IndexError(f"priority index out of range for memory of size {len(self.data)}")
        for i, e in zip(indices.tolist(), td.tolist()):
            p = e + self.eps_p
            self.priorities[i] = p
            self.tree.set(i, p**self.alpha)


@dataclass
class SampledBatch:
    transitions: list[Transition]
    weights: np.ndarray
    indices: np.ndarray
    from_demo: np.ndarray

    def __len__(self) -> int:
        return len(self.transitions)


def sample_mixed(
    demo: PrioritizedMemory,
    agent: PrioritizedMemory,
    batch: int = 32,
    rho: float = 0.25,
    beta: float = 0.4,
    rng: np.random.Generator | None = None,
) -> SampledBatch:
    """ceil(rho * batch) demo draws, the rest from the agent memory (demo
    makes up any agent shortfall). Importance weights are (N P)^-beta scaled
    by their batch maximum."""
    if rng is None:
        rng = np.random.default_rng()
    if len(demo) == 0:
        if len(agent) == 0:
            raise ValueError("both memories are empty")
        raise ValueError("demo memory is empty")
    n_demo = min(batch, math.ceil(rho * batch))
    n_agent = min(batch - n_demo, len(agent))
    n_demo = batch - n_agent
    d_idx, d_p = demo.sample(n_demo, rng)
    parts = [(demo, d_idx, d_p, True)]
    if n_agent:
        a_idx, a_p = agent.sample(n_agent, rng)
        parts.append((agent, a_idx, a_p, False))
    transitions, weights, indices, flags = [], [], [], []
    for mem, idx, p, is_demo in parts:
        transitions += [mem.data[i] for i in idx]
        weights.append((len(mem) * p) ** (-beta))
        indices.append(idx)
        flags.append(np.full(len(idx), is_demo))
    w = np.concatenate(weights)
    return SampledBatch(transitions, w / w.max(), np.concatenate(indices), np.concatenate(flags))


def update_batch_priorities(demo: PrioritizedMemory, agent: PrioritizedMemory, batch: SampledBatch, td_errors):
    td = np.asarray(td_errors)
    for mem, sel in ((demo, batch.from_demo), (agent, ~batch.from_demo)):
        if sel.any():
            mem.update_priorities(batch.indices[sel], td[sel])


class NStepBuilder:
    """Collects one episode's (s, a, r) steps and emits n-step transitions."""

    def __init__(self, n: int = 3, gamma: float = 0.99):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.gamma = gamma
        self.steps: list[tuple[np.ndarray, int, float]] = []

    def add(self, s, a: int, r: float = 0.0):
        self.steps.append((s, int(a), float(r)))

    def finish(self, final_state, is_demo: bool = False, final_reward: float | None = None) -> list[Transition]:
        """Flush the episode. ``final_reward`` overrides the last step's reward."""
        if final_reward is not None and self.steps:
            s, a, _ = self.steps[-1]
            self.steps[-1] = (s, a, float(final_reward))
        out = build_nstep(self.steps, final_state, self.n, self.gamma, is_demo)
        self.steps = []
        return out


def build_nstep(episode, final_state, n: int = 3, gamma: float = 0.99, is_demo: bool = False) -> list[Transition]:
    """Transition at t: return over min(n, T - t) rewards, next state that
    many steps later; terminal when the window reaches the episode end."""
    T = len(episode)
    if T == 0:
        raise ValueError("empty episode")
    states = [s for s, _, _ in episode] + [final_state]
    out = []
    for t in range(T):
        k = min(n, T - t)
        ret = 0.0
        for j in range(k):
            ret += gamma**j * episode[t + j][2]
        out.append(Transition(states[t], episode[t][1], ret, states[t + k], k, t + k == T, is_demo))
    return out


_REC = struct.Struct("<iidBB")
TRANSITION_MAGIC = "SPARTD"


def transitions_bytes(transitions: list[Transition], state_len: int) -> bytes:
    blobs = [f"{TRANSITION_MAGIC} v1 {state_len} {len(transitions)}\n".encode()]
    for t in transitions:
        if t.s.size != state_len or t.s_next.size != state_len:
            raise ValueError("transition state length mismatch")
        blobs.append(_REC.pack(int(t.a), int(t.steps), float(t.ret), int(t.terminal), int(t.is_demo)))
        blobs.append(np.ascontiguousarray(t.s, dtype="<f4").tobytes())
        blobs.append(np.ascontiguousarray(t.s_next, dtype="<f4").tobytes())
    return b"".join(blobs)


def save_transitions(path, transitions: list[Transition], state_len: int):
    """Header line, then per record: int32 action, int32 steps, float64
    return, uint8 terminal, uint8 demo flag, float32 state, float32 next state."""
    atomic_write_bytes(path, transitions_bytes(transitions, state_len))


def load_transitions(path, state_len: int | None = None) -> list[Transition]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    fields = raw[:nl].decode("ascii", errors="replace").split() if nl >= 0 else []
    if len(fields) != 4 or fields[0] != TRANSITION_MAGIC or fields[1] != "v1":
        raise ValueError(f"{path}: not a {TRANSITION_MAGIC} v1 transition file")
    length, count = int(fields[2]), int(fields[3])
    if state_len is not None and length != state_len:
        raise ValueError(f"{path}: state length {length}, expected {state_len}")
    rec = _REC.size + 8 * length
    body = raw[nl + 1 :]
    if len(body) != rec * count:
        raise ValueError(f"{path}: truncated or corrupt transition file")
    out = []
    for k in range(count):
        off = k * rec
        a, steps, ret, term, demo = _REC.unpack_from(body, off)
        off += _REC.size
        s = np.frombuffer(body, dtype="<f4", count=length, offset=off).astype(np.float32)
        s_next = np.frombuffer(body, dtype="<f4", count=length, offset=off + 4 * length).astype(np.float32)
        out.append(Transition(s, a, ret, s_next, steps, bool(term), bool(demo)))
    return out
