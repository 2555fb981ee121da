"""Demo-guided DQN training: losses, exploration, pre-training and main training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .baselines import DemoEpisode, kdb_actions, quadtree_actions, uniform_actions
from .cost import CostParams, CostReport, JoinCostOracle, Workload, compute_reward
from .data import CellHistogram, Dataset, GridSpec
from .env import (
    PartitionEnv,
    action_index,
    index_action,
    mask_from_states,
    state_size,
)
from .neural import AdamState, GradientSet, Mlp, adam_step, backward, q_network_dims, sync_target
from .partition import CutAction, PartitionSet
from .replay import (
    NStepBuilder,
    PrioritizedMemory,
    SampledBatch,
    Transition,
    build_nstep,
    sample_mixed,
    update_batch_priorities,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    g: int = 30
    m: int = 8
    e_max: int = 3000
    pretrain_episodes: int = 3000
    U: int = 100
    eps_r: float = 0.1
    eps_s: float = 0.2
    batch: int = 32
    rho: float = 0.25
    n: int = 3
    gamma: float = 0.99
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1e-5
    margin: float = 0.8
    eta: float = 1e-3
    seed: int = 0
    alpha: float = 0.6
    beta0: float = 0.4
    beta1: float = 1.0
    eps_p: float = 1e-3
    agent_capacity: int = 10000
    demo_capacity: int = 100
    pretrain_check: int = 10
    pretrain: bool = True
    grid_shift: bool = True
    prune: bool = True
    cost: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        for name in ("eps_r", "eps_s", "rho", "gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eps_r + self.eps_s > 1.0:
            raise ValueError("eps_r + eps_s must not exceed 1")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.g < 2:
            raise ValueError("g must be >= 2")
        for name in ("e_max", "U", "batch", "n", "pretrain_check", "agent_capacity", "demo_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pretrain_episodes < 0:
            raise ValueError("pretrain_episodes must be >= 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "cost"]


@dataclass
class LossBreakdown:
    l_n: float
    l_c: float
    l_l2: float
    total: float
    td_errors: np.ndarray


def large_margin(q: np.ndarray, actions: np.ndarray, margin: float, mask: np.ndarray | None = None):
    """Per-row ``max_a [Q(s,a) + l(a_C,a)] - Q(s,a_C)`` and the maximising action."""
    q = np.asarray(q, dtype=np.float64)
    rows = np.arange(len(q))
    aug = q + margin
    aug[rows, actions] = q[rows, actions]
    if mask is not None:
        aug = np.where(mask, aug, -np.inf)
        aug[rows, actions] = q[rows, actions]
    best = np.argmax(aug, axis=1)
    return aug[rows, best] - q[rows, actions], best


def _stack(batch: SampledBatch):
    tr = batch.transitions
    s = np.stack([t.s for t in tr]).astype(np.float32)
    s_next = np.stack([t.s_next for t in tr]).astype(np.float32)
    a = np.array([t.a for t in tr], dtype=np.int64)
    ret = np.array([t.ret for t in tr], dtype=np.float64)
    steps = np.array([t.steps for t in tr], dtype=np.float64)
    terminal = np.array([t.terminal for t in tr], dtype=bool)
    demo = np.array([t.is_demo for t in tr], dtype=bool)
    return s, a, ret, s_next, steps, terminal, demo


def compute_losses(batch: SampledBatch, main: Mlp, target: Mlp, cfg: TrainConfig) -> tuple[LossBreakdown, GradientSet]:
    """Weighted n-step TD loss + large-margin loss on demo rows + L2 on weights.

    Bootstrap maxima and margin maxima range over valid actions only, read
    back from the h/v channels of the stored states.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    g = cfg.g
    s, a, ret, s_next, steps, terminal, demo = _stack(batch)
    rows = np.arange(len(a))
    q, cache = main.forward_cache(s)
    q64 = q.astype(np.float64)

    target_q = ret.copy()
    live = ~terminal
    if live.any():
        qn = target.forward(s_next[live]).astype(np.float64)
        mask_n = mask_from_states(s_next[live], g)
        qn = np.where(mask_n, qn, -np.inf)
        best_next = qn.max(axis=1)
        best_next[~np.isfinite(best_next)] = 0.0
        target_q[live] += cfg.gamma ** steps[live] * best_next
    td = target_q - q64[rows, a]
    w = np.asarray(batch.weights, dtype=np.float64)
    l_n = float(np.sum(w * td * td))
    dq = np.zeros_like(q64)
    dq[rows, a] += cfg.lambda1 * (-2.0 * w * td)

    l_c = 0.0
    if demo.any():
        d_rows = rows[demo]
        mask_s = mask_from_states(s[demo], g)
        per_row, best = large_margin(q64[demo], a[demo], cfg.margin, mask_s)
        l_c = float(per_row.sum())
        np.add.at(dq, (d_rows, best), cfg.lambda2)
        np.add.at(dq, (d_rows, a[demo]), -cfg.lambda2)

    l_l2 = main.l2()
    total = cfg.lambda1 * l_n + cfg.lambda2 * l_c + cfg.lambda3 * l_l2
    grads = backward(main, s, dq, l2=cfg.lambda3, cache=cache)
    return LossBreakdown(l_n, l_c, l_l2, total, np.abs(td)), grads


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Highest-valued valid action; ties go to the lowest index."""
    if not mask.any():
        raise ValueError("no valid action")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def grid_shift_candidates(idx: int, mask: np.ndarray, g: int) -> list[int]:
    i, j, d = index_action(idx, g)
    out = []
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ii, jj = i + di, j + dj
        if 0 <= ii < g and 0 <= jj < g:
            k = action_index(CutAction(ii, jj, d), g)
            if mask[k]:
                out.append(k)
    return out


def select_action(s: np.ndarray, mask: np.ndarray, main: Mlp, cfg: TrainConfig, rng: np.random.Generator) -> CutAction:
    """Extended epsilon-greedy: random valid action with prob eps_r, a
    one-cell shift of the greedy action with prob eps_s, else greedy.

    Draw order: one uniform for the branch, then one integer choice if the
    branch needs it.
    """
    return index_action(select_action_index(s, mask, main, cfg, rng), cfg.g)


def select_action_index(s, mask, main: Mlp, cfg: TrainConfig, rng: np.random.Generator) -> int:
    mask = np.asarray(mask, dtype=bool)
    valid = np.flatnonzero(mask)
    if len(valid) == 0:
        raise ValueError("no valid action")
    u = rng.random()
    if u < cfg.eps_r:
        return int(valid[rng.integers(len(valid))])
    greedy = masked_argmax(main.forward(s)[0], mask)
    if cfg.grid_shift and u < cfg.eps_r + cfg.eps_s:
        cands = grid_shift_candidates(greedy, mask, cfg.g)
        if cands:
            return cands[int(rng.integers(len(cands)))]
    return greedy


def demo_transitions(demo: DemoEpisode, hist: CellHistogram, n: int = 3, gamma: float = 0.99, reward: float = 1.0) -> list[Transition]:
    """Replay a demo through the environment; zero intermediate rewards and
    ``reward`` on the last cut."""
    env = PartitionEnv(demo.final.grid, hist, len(demo.actions) + 1)
    s = env.reset()
    episode = []
    for k, a in enumerate(demo.actions):
        idx = action_index(a, env.g)
        s_next, done = env.step(idx)
        episode.append((s, idx, reward if done else 0.0))
        s = s_next
    return build_nstep(episode, s, n, gamma, is_demo=True)


@dataclass
class EpisodeLog:
    episode: int
    reward: float
    weighted_cost: float
    pruned: bool
    l_n: float
    l_c: float
    l_l2: float
    best_cost: float

    COLUMNS = ("episode", "reward", "weighted_cost", "pruned", "l_n", "l_c", "l_l2", "best_cost")

    def row(self) -> list[str]:
        return [
            str(self.episode),
            repr(self.reward),
            repr(self.weighted_cost),
            "1" if self.pruned else "0",
            repr(self.l_n),
            repr(self.l_c),
            repr(self.l_l2),
            repr(self.best_cost),
        ]


@dataclass
class PretrainResult:
    converged: bool
    episodes: int


@dataclass
class TrainResult:
    best: PartitionSet
    best_report: CostReport
    demo_report: CostReport
    log: list[EpisodeLog]
    full_evaluations: int
    pruned_evaluations: int
    improvements: int
    actions: list[list[int]]
    pretrain: PretrainResult | None = None

    def best_cost(self, w: Workload) -> float:
        return self.best_report.weighted(w)

    def demo_cost(self, w: Workload) -> float:
        return self.demo_report.weighted(w)


class Trainer:
    """Owns the networks, optimiser, both memories and the single RNG stream."""

    def __init__(self, cfg: TrainConfig, hist: CellHistogram, grid: GridSpec, demo: DemoEpisode, demo_data: list[Transition] | None = None):
        if grid.g != cfg.g or hist.g != cfg.g:
            raise ValueError(f"config grid {cfg.g} does not match data grid {grid.g}")
        if len(demo.actions) != cfg.m - 1:
            raise ValueError(f"demo has {len(demo.actions) + 1} partitions, config wants m={cfg.m}")
        self.cfg = cfg
        self.grid = grid
        self.hist = hist
        self.demo = demo
        self.rng = np.random.default_rng(cfg.seed)
        self.main = Mlp(q_network_dims(cfg.g), self.rng)
        self.target = self.main.copy()
        self.opt = AdamState.for_net(self.main, lr=cfg.eta)
        self.demo_mem = PrioritizedMemory(cfg.demo_capacity, evict=False, alpha=cfg.alpha, eps_p=cfg.eps_p)
        self.agent_mem = PrioritizedMemory(cfg.agent_capacity, evict=True, alpha=cfg.alpha, eps_p=cfg.eps_p)
        if demo_data is None:
            demo_data = demo_transitions(demo, hist, cfg.n, cfg.gamma)
        for t in demo_data:
            if t.s.size != state_size(cfg.g):
                raise ValueError("demo transition does not match the grid size")
            self.demo_mem.push(t)
        self.env = PartitionEnv(grid, hist, cfg.m)
        self.train_steps = 0
        self.beta = cfg.beta0
        self.syncs = 0

    def sync(self):
        sync_target(self.main, self.target)
        self.syncs += 1

    def train_step(self) -> LossBreakdown:
        cfg = self.cfg
        batch = sample_mixed(self.demo_mem, self.agent_mem, cfg.batch, cfg.rho, self.beta, self.rng)
        losses, grads = compute_losses(batch, self.main, self.target, cfg)
        adam_step(self.main, grads, self.opt)
        update_batch_priorities(self.demo_mem, self.agent_mem, batch, losses.td_errors)
        self.train_steps += 1
        return losses

    def greedy_rollout(self) -> PartitionSet:
        s = self.env.reset()
        done = False
        while not done:
            a = masked_argmax(self.main.forward(s)[0], self.env.mask())
            s, done = self.env.step(a)
        return self.env.partitions

    def pretrain(self) -> PretrainResult:
        """Imitation phase on demo memory only; stops as soon as the greedy
        policy rebuilds the demo partitions."""
        cfg = self.cfg
        for e in range(1, cfg.pretrain_episodes + 1):
            self.train_step()
            if e % cfg.U == 0:
                self.sync()
            if e == 1 or e % cfg.pretrain_check == 0:
                if self.greedy_rollout().same_partition(self.demo.final):
                    log.info("pre-training converged after %d episodes", e)
                    return PretrainResult(True, e)
        return PretrainResult(False, cfg.pretrain_episodes)

    def main_train(self, oracle, workload: Workload, forced_actions=None, on_episode=None) -> TrainResult:
        """Main phase. ``forced_actions[e][t]`` (action indices) overrides
        action selection, for controlled comparisons between runs."""
        cfg = self.cfg
        best_ps = self.demo.final
        best_report = oracle.workload_cost(best_ps, workload)
        demo_report = best_report
        best_cost = best_report.weighted(workload)
        total_steps = cfg.e_max * (cfg.m - 1)
        history: list[EpisodeLog] = []
        taken: list[list[int]] = []
        full = pruned_n = improvements = 0
        for e in range(1, cfg.e_max + 1):
            s = self.env.reset()
            builder = NStepBuilder(cfg.n, cfg.gamma)
            acts = []
            sums = np.zeros(3)
            done = False
            t = 0
            while not done:
                mask = self.env.mask()
                if forced_actions is not None:
                    a = int(forced_actions[e - 1][t])
                else:
                    a = select_action_index(s, mask, self.main, cfg, self.rng)
                acts.append(a)
                s_next, done = self.env.step(a)
                builder.add(s, a, 0.0)
                if done:
                    ps_e = self.env.partitions
                    if cfg.prune:
                        report = oracle.pruned_workload_cost(ps_e, workload, best_report)
                    else:
                        report = oracle.workload_cost(ps_e, workload)
                    if report.pruned:
                        pruned_n += 1
                        r = cfg.cost.prune_reward
                        wc = math.nan
                    else:
                        full += 1
                        r = compute_reward(best_report, report, workload)
                        wc = report.weighted(workload)
                    # r > 1 alone can coexist with a higher weighted cost; both
                    # must improve so the tracked best never gets worse
                    better = r > 1.0 and wc < best_cost
                    memory = self.demo_mem if better else self.agent_mem
                    for tr in builder.finish(s_next, is_demo=better, final_reward=r):
                        memory.push(tr)
                    if better:
                        best_ps, best_report, best_cost = ps_e, report, wc
                        improvements += 1
                s = s_next
                self.beta = cfg.beta0 + (cfg.beta1 - cfg.beta0) * min(1.0, self.train_steps / max(1, total_steps))
                losses = self.train_step()
                sums += (losses.l_n, losses.l_c, losses.l_l2)
                if self.train_steps % cfg.U == 0:
                    self.sync()
                t += 1
            sums /= t
            history.append(EpisodeLog(e, r, wc, report.pruned, *sums.tolist(), best_cost))
            taken.append(acts)
            if on_episode is not None:
                on_episode(e, best_ps, history)
        return TrainResult(best_ps, best_report, demo_report, history, full, pruned_n, improvements, taken)


def make_demo(method: str, hist: CellHistogram, grid: GridSpec, m: int) -> DemoEpisode:
    if method in ("kdb", "kdbtree"):
        return kdb_actions(hist, grid, m)
    if method in ("quad", "quadtree"):
        return quadtree_actions(hist, grid, m)
    if method == "uniform":
        return uniform_actions(grid, m)
    raise ValueError(f"unknown demo method {method!r}")


def train(
    data: Dataset,
    workload: Workload,
    cfg: TrainConfig,
    demo: DemoEpisode | None = None,
    demo_data: list[Transition] | None = None,
    oracle=None,
    forced_actions=None,
    on_episode=None,
) -> tuple[TrainResult, Trainer]:
    """Pre-training (unless disabled) followed by main training."""
    from .data import build_histogram

    grid = GridSpec(data.bbox(), cfg.g) if demo is None else demo.final.grid
    hist = build_histogram(data, grid)
    if demo is None:
        demo = kdb_actions(hist, grid, cfg.m)
    trainer = Trainer(cfg, hist, grid, demo, demo_data)
    pre = trainer.pretrain() if cfg.pretrain and cfg.pretrain_episodes > 0 else None
    if oracle is None:
        oracle = JoinCostOracle(data, grid, cfg.cost)
    result = trainer.main_train(oracle, workload, forced_actions=forced_actions, on_episode=on_episode)
    result.pretrain = pre
    return result, trainer


@dataclass
class EvalTable:
    methods: list[str]
    reports: list[CostReport]
    workload: Workload

    @property
    def columns(self) -> list[str]:
        return [f"eps={q.epsilon:g}" for q in self.workload.queries] + ["weighted"]

    def values(self) -> np.ndarray:
        rows = []
        for rep in self.reports:
            rows.append(list(rep.per_query) + [rep.weighted(self.workload)])
        return np.array(rows, dtype=np.float64)

    def ranks(self) -> np.ndarray:
        """Per column: 1 for the best (lowest) value, 2 for second best, else 0.
        Ties share the better rank."""
        vals = self.values()
        out = np.zeros(vals.shape, dtype=int)
        for c in range(vals.shape[1]):
            distinct = sorted(set(vals[:, c].tolist()))
            for rank, v in enumerate(distinct[:2], start=1):
                out[vals[:, c] == v, c] = rank
        return out

    def row(self, method: str) -> np.ndarray:
        return self.values()[self.methods.index(method)]

    def to_text(self) -> str:
        vals, ranks = self.values(), self.ranks()
        cols = self.columns
        width = max(12, *(len(c) + 2 for c in cols))
        lines = ["method    " + "".join(c.rjust(width) for c in cols)]
        for name, row, rk in zip(self.methods, vals, ranks):
            cells = []
            for v, r in zip(row, rk):
                mark = "*" if r == 1 else ("+" if r == 2 else " ")
                cells.append((f"{v:.6g}" + mark).rjust(width))
            lines.append(name.ljust(10) + "".join(cells))
        lines.append("(* best, + second best)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        vals, ranks = self.values(), self.ranks()
        header = ["method"] + self.columns + [f"{c}_rank" for c in self.columns]
        out = [",".join(header)]
        for name, row, rk in zip(self.methods, vals, ranks):
            out.append(",".join([name] + [repr(float(v)) for v in row] + [str(int(r)) for r in rk]))
        return "\n".join(out) + "\n"


def evaluate_all(
    data: Dataset,
    hist: CellHistogram,
    workload: Workload,
    cfg: TrainConfig,
    learned: PartitionSet,
    demo: PartitionSet | None = None,
    oracle=None,
) -> EvalTable:
    """Uniform / Quad / KDB / Demo / Learned under the cost oracle."""
    grid = learned.grid
    if hist.g != grid.g:
        raise ValueError("histogram and learned partitions use different grids")
    if oracle is None:
        oracle = JoinCostOracle(data, grid, cfg.cost)
    kdb = kdb_actions(hist, grid, cfg.m).final
    parts = {
        "Uniform": uniform_actions(grid, cfg.m).final,
        "Quad": quadtree_actions(hist, grid, cfg.m).final,
        "KDB": kdb,
        "Demo": demo if demo is not None else kdb,
        "Learned": learned,
    }
    for name, ps in parts.items():
        if ps.g != grid.g:
            raise ValueError(f"{name} partitions use grid {ps.g}, expected {grid.g}")
    reports = [oracle.workload_cost(ps, workload) for ps in parts.values()]
    return EvalTable(list(parts), reports, workload)
