"""Command line: gen | baseline | demo | train | eval | render.

Every command accepts ``--config FILE`` with flat ``key = value`` lines;
explicit flags override file values. The fully resolved configuration is
written next to the outputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineError, DemoEpisode, baseline
from .cost import (
    CostParams,
    CostReport,
    JoinCostOracle,
    Workload,
    WorkloadError,
    is_workload_key,
    load_workload,
    parse_kv,
    workload_from_items,
)
from .data import DataError, GridSpec, Mixture, build_histogram, gen_synthetic, load_points_csv, write_points_csv
from .env import state_size
from .neural import CheckpointError, atomic_write_bytes, save_checkpoint
from .partition import PartitionSet
from .replay import load_transitions, save_transitions
from .trainer import EpisodeLog, TrainConfig, Trainer, demo_transitions, evaluate_all

log = logging.getLogger("spartq")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> parser; TrainConfig and CostParams fields are added below
KEYS = {
    "data": str,
    "grid": int,
    "m": int,
    "workload": str,
    "seed": int,
    "out": str,
    "kind": str,
    "clusters": int,
    "n": int,
    "method": str,
    "episodes": int,
    "demo": str,
    "partitions": str,
    "snapshot_every": int,
    "max_points": int,
    "cost_preset": str,
}
_SKIP = {"g", "m", "seed", "e_max", "cost"}
for _f in fields(TrainConfig):
    if _f.name not in _SKIP:
        KEYS[_f.name] = {"bool": _bool, "int": int, "float": float}[_f.type]
for _f in fields(CostParams):
    KEYS[_f.name] = float

DEFAULTS = {
    "grid": 30,
    "m": 8,
    "seed": 0,
    "kind": "gaussian",
    "clusters": 3,
    "n": 10000,
    "snapshot_every": 100,
    "max_points": 20000,
    "cost_preset": "default",
}


def resolve(ns: argparse.Namespace) -> dict:
    """Defaults < config file < flags. Values come back typed."""
    raw: dict = {}
    workload_items = {}
    if getattr(ns, "config", None):
        try:
            text = Path(ns.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        try:
            items = parse_kv(text, ns.config)
        except WorkloadError as exc:
            raise UsageError(str(exc)) from None
        for key, value in items.items():
            if is_workload_key(key):
                workload_items[key] = value
            elif key in KEYS:
                raw[key] = value
            else:
                raise UsageError(f"{ns.config}: unknown config key {key!r}")
    for key, value in vars(ns).items():
        if key in ("command", "config", "func", "verbose"):
            continue
        raw[key] = value
    out = dict(DEFAULTS)
    for key, value in raw.items():
        try:
            out[key] = KEYS[key](value)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {value!r}") from None
    if workload_items:
        out["_workload_items"] = workload_items
    return out


def dump_config(cfg: dict, workload: Workload | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in sorted(cfg.items()) if not k.startswith("_")]
    if workload is not None:
        lines += [f"{k} = {v}" for k, v in workload.to_items().items()]
    return "\n".join(lines) + "\n"


def write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def _out_dir(cfg: dict) -> Path:
    if "out" not in cfg:
        raise UsageError("--out is required")
    return Path(cfg["out"])


def _workload(cfg: dict, required: bool = True) -> Workload | None:
    if "workload" in cfg:
        return load_workload(cfg["workload"])
    if "_workload_items" in cfg:
        return workload_from_items(cfg["_workload_items"])
    if required:
        raise UsageError("a workload is required (--workload FILE or query.N.* keys in --config)")
    return None


def _data(cfg: dict):
    if "data" not in cfg:
        raise UsageError("--data is required")
    return load_points_csv(cfg["data"])


def _check_m(cfg: dict, low: int = 2):
    g, m = cfg["grid"], cfg["m"]
    if g < 2:
        raise UsageError(f"--grid must be >= 2, got {g}")
    if not low <= m <= g:
        raise UsageError(f"--m must lie in [{low}, {g}] for a {g}x{g} grid, got {m}")


def train_config(cfg: dict) -> TrainConfig:
    cost = CostParams.preset(cfg["cost_preset"])
    cost = cost.with_(**{f.name: cfg[f.name] for f in fields(CostParams) if f.name in cfg})
    kw = {k: cfg[k] for k in TrainConfig.field_names() if k in cfg and k not in _SKIP}
    if "episodes" in cfg:
        kw["e_max"] = cfg["episodes"]
    return TrainConfig(g=cfg["grid"], m=cfg["m"], seed=cfg["seed"], cost=cost, **kw)


# commands ---------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    if cfg["n"] < 1:
        raise UsageError(f"--n must be >= 1, got {cfg['n']}")
    if cfg["clusters"] < 1:
        raise UsageError(f"--clusters must be >= 1, got {cfg['clusters']}")
    out = _out_dir(cfg)
    params = Mixture.random(cfg["clusters"], cfg["seed"]) if cfg["kind"] != "uniform" else None
    d = gen_synthetic(cfg["kind"], cfg["n"], cfg["seed"], params)
    write_text(out, write_points_csv(d))
    write_text(out.with_name(out.name + ".conf"), dump_config(cfg))
    print(f"wrote {len(d)} points to {out}")
    return EXIT_OK


def _grid_for(data, cfg) -> GridSpec:
    return GridSpec(data.bbox(), cfg["grid"])


def cmd_baseline(cfg: dict) -> int:
    _check_m(cfg, low=1)
    data = _data(cfg)
    grid = _grid_for(data, cfg)
    hist = build_histogram(data, grid)
    ep = baseline(cfg.get("method", "kdb"), hist, grid, cfg["m"])
    out = Path(_out_dir(cfg))
    write_text(out, json.dumps(ep.to_dict(), indent=1) + "\n")
    write_text(out.with_name(out.name + ".conf"), dump_config(cfg))
    print(f"{ep.method}: {len(ep.final.rects)} partitions -> {out}")
    return EXIT_OK


def _demo_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.is_dir():
        return p / "demo.json", p / "demo.transitions"
    return p, p.with_name("demo.transitions")


def cmd_demo(cfg: dict) -> int:
    _check_m(cfg)
    out = _out_dir(cfg)
    workload = _workload(cfg)
    data = _data(cfg)
    grid = _grid_for(data, cfg)
    hist = build_histogram(data, grid)
    tc = train_config(cfg)
    ep = baseline(cfg.get("method", "kdb"), hist, grid, cfg["m"])
    if len(ep.actions) != cfg["m"] - 1:
        raise BaselineError(f"{ep.method} demo produced {len(ep.actions) + 1} partitions, wanted {cfg['m']}")
    report = JoinCostOracle(data, grid, tc.cost).workload_cost(ep.final, workload)
    doc = ep.to_dict()
    doc["cost"] = report.to_dict()
    doc["weighted_cost"] = report.weighted(workload)
    trans = demo_transitions(ep, hist, tc.n, tc.gamma)
    save_transitions(out / "demo.transitions", trans, state_size(grid.g))
    write_text(out / "demo.json", json.dumps(doc, indent=1) + "\n")
    write_text(out / "resolved.conf", dump_config(cfg, workload))
    print(f"demo ({ep.method}): {len(trans)} transitions, weighted cost {doc['weighted_cost']:.6g} -> {out}")
    return EXIT_OK


def _log_csv(history: list[EpisodeLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EpisodeLog.COLUMNS)
    for row in history:
        w.writerow(row.row())
    return buf.getvalue()


def _best_doc(ps: PartitionSet, report: CostReport, workload: Workload) -> dict:
    doc = ps.to_dict()
    doc["cost"] = report.to_dict()
    doc["weighted_cost"] = report.weighted(workload)
    return doc


def cmd_train(cfg: dict) -> int:
    _check_m(cfg)
    out = _out_dir(cfg)
    workload = _workload(cfg)
    data = _data(cfg)
    tc = train_config(cfg)
    if "demo" in cfg:
        demo_json, demo_trans = _demo_paths(cfg["demo"])
        try:
            demo = DemoEpisode.from_dict(json.loads(demo_json.read_text()))
        except OSError as exc:
            raise DataError(f"cannot read demo {demo_json}: {exc}") from None
        if demo.final.g != tc.g:
            raise UsageError(f"demo uses a {demo.final.g}x{demo.final.g} grid, --grid is {tc.g}")
        if len(demo.final.rects) != tc.m:
            raise UsageError(f"demo has {len(demo.final.rects)} partitions, --m is {tc.m}")
        grid = demo.final.grid
        demo_data = load_transitions(demo_trans, state_size(tc.g)) if demo_trans.exists() else None
    else:
        grid = _grid_for(data, cfg)
        demo = None
        demo_data = None
    hist = build_histogram(data, grid)
    if demo is None:
        demo = baseline(cfg.get("method", "kdb"), hist, grid, tc.m)
    write_text(out / "resolved.conf", dump_config(cfg, workload))
    trainer = Trainer(tc, hist, grid, demo, demo_data)
    oracle = JoinCostOracle(data, grid, tc.cost)
    every = max(1, cfg["snapshot_every"])
    history: list[EpisodeLog] = []

    def snapshot(e, best, hist_so_far):
        history[:] = hist_so_far
        if e % every == 0:
            snap = out / "snapshots"
            write_text(snap / f"best_{e:06d}.json", json.dumps(best.to_dict()) + "\n")
            write_text(snap / "log.csv", _log_csv(hist_so_far))

    pre = None
    try:
        if tc.pretrain and tc.pretrain_episodes > 0:
            pre = trainer.pretrain()
            print(f"pre-training: {'converged' if pre.converged else 'not converged'} after {pre.episodes} episodes")
        result = trainer.main_train(oracle, workload, on_episode=snapshot)
    except Exception:
        save_checkpoint(out / "model.ckpt", trainer.main, trainer.opt)
        write_text(out / "log.csv", _log_csv(history))
        raise
    save_checkpoint(out / "model.ckpt", trainer.main, trainer.opt)
    write_text(out / "log.csv", _log_csv(result.log))
    write_text(out / "best.json", json.dumps(_best_doc(result.best, result.best_report, workload), indent=1) + "\n")
    summary = {
        "demo_cost": result.demo_cost(workload),
        "best_cost": result.best_cost(workload),
        "full_evaluations": result.full_evaluations,
        "pruned_evaluations": result.pruned_evaluations,
        "improvements": result.improvements,
        "pretrain_converged": None if pre is None else pre.converged,
        "pretrain_episodes": None if pre is None else pre.episodes,
    }
    write_text(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(
        f"best weighted cost {summary['best_cost']:.6g} (demo {summary['demo_cost']:.6g}); "
        f"{result.full_evaluations} full / {result.pruned_evaluations} pruned evaluations -> {out}"
    )
    return EXIT_OK


def _load_partition(path) -> PartitionSet:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read partition file {path}: {exc}") from None
    try:
        return PartitionSet.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed partition JSON: {exc}") from None


def cmd_eval(cfg: dict) -> int:
    if "partitions" not in cfg:
        raise UsageError("--partitions (learned partition JSON) is required")
    workload = _workload(cfg)
    learned = _load_partition(cfg["partitions"])
    if learned.g != cfg["grid"]:
        raise ValueError(f"partition file uses a {learned.g}x{learned.g} grid, --grid is {cfg['grid']}")
    if len(learned.rects) != cfg["m"]:
        raise ValueError(f"partition file has {len(learned.rects)} partitions, --m is {cfg['m']}")
    data = _data(cfg)
    hist = build_histogram(data, learned.grid)
    demo = None
    if "demo" in cfg:
        demo = _load_partition(_demo_paths(cfg["demo"])[0])
        if demo.grid != learned.grid:
            raise ValueError("demo and learned partitions use different grids")
    table = evaluate_all(data, hist, workload, train_config(cfg), learned, demo)
    text = table.to_text()
    print(text, end="")
    if "out" in cfg:
        out = Path(cfg["out"])
        write_text(out / "table.txt", text)
        write_text(out / "table.csv", table.to_csv())
        write_text(out / "resolved.conf", dump_config(cfg, workload))
    return EXIT_OK


def render_svg(ps: PartitionSet, xy: np.ndarray, size: int = 800) -> str:
    """Points as dots and rect outlines, north up."""
    box = ps.grid.bbox
    scale = size / max(box.width, box.height)
    w, h = box.width * scale, box.height * scale

    def px(x):
        return (x - box.min_x) * scale

    def py(y):
        return h - (y - box.min_y) * scale

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" viewBox="0 0 {w:.1f} {h:.1f}">',
        f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="white"/>',
        '<g fill="#3060a0" fill-opacity="0.5">',
    ]
    parts += [f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="1"/>' for x, y in xy.tolist()]
    parts.append("</g>")
    parts.append('<g fill="none" stroke="#c02020" stroke-width="2">')
    for t, l, b, r in ps.rects:
        x0, x1 = px(ps.grid.line_x(l)), px(ps.grid.line_x(r))
        y0, y1 = py(ps.grid.line_y(b)), py(ps.grid.line_y(t))
        parts.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" height="{y1 - y0:.2f}"/>')
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_render(cfg: dict) -> int:
    if "partitions" not in cfg:
        raise UsageError("--partitions is required")
    out = _out_dir(cfg)
    xy = np.zeros((0, 2))
    if "data" in cfg:
        xy = load_points_csv(cfg["data"], allow_empty=True).xy
    if len(xy) > cfg["max_points"]:
        rng = np.random.default_rng(cfg["seed"])
        xy = xy[np.sort(rng.choice(len(xy), cfg["max_points"], replace=False))]
    for path in cfg["partitions"].split(","):
        ps = _load_partition(path)
        target = out / (Path(path).stem + ".svg")
        write_text(target, render_svg(ps, xy))
        print(f"{len(ps.rects)} partitions, {len(xy)} points -> {target}")
    return EXIT_OK


# parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    shared = argparse.ArgumentParser(add_help=False, argument_default=S)
    shared.add_argument("--data", help="points CSV")
    shared.add_argument("--grid", type=int, help="grid cells per side (default 30)")
    shared.add_argument("--m", type=int, help="partitions / worker computers (default 8)")
    shared.add_argument("--workload", help="workload file (query.N.epsilon / query.N.frequency)")
    shared.add_argument("--seed", type=int, help="random seed (default 0)")
    shared.add_argument("--config", help="flat key = value config file; flags win")
    shared.add_argument("--out", help="output file or directory")
    shared.add_argument("--cost-preset", dest="cost_preset", choices=("default", "no-index", "local-index"))

    p = argparse.ArgumentParser(prog="spartq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spartq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[shared], argument_default=S, help="generate synthetic points")
    g.add_argument("--kind", choices=("uniform", "gaussian", "gaussian-mixture"))
    g.add_argument("--clusters", type=int)
    g.add_argument("--n", type=int)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("baseline", parents=[shared], argument_default=S, help="partition with a classical method")
    b.add_argument("--method", choices=("uniform", "quad", "quadtree", "kdb", "kdbtree"))
    b.set_defaults(func=cmd_baseline)

    d = sub.add_parser("demo", parents=[shared], argument_default=S, help="build demo partitions and transitions")
    d.add_argument("--method", choices=("uniform", "quad", "quadtree", "kdb", "kdbtree"))
    d.set_defaults(func=cmd_demo)

    t = sub.add_parser("train", parents=[shared], argument_default=S, help="pre-train and train the Q-network")
    t.add_argument("--demo", help="demo directory or demo.json from the demo command")
    t.add_argument("--episodes", type=int, help="main-training episodes (e_max)")
    t.add_argument("--pretrain-episodes", dest="pretrain_episodes", type=int)
    t.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    t.add_argument("--no-pretrain", dest="pretrain", action="store_false")
    t.add_argument("--no-grid-shift", dest="grid_shift", action="store_false")
    t.add_argument("--no-prune", dest="prune", action="store_false")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[shared], argument_default=S, help="compare methods under the cost oracle")
    e.add_argument("--partitions", help="learned partition JSON (e.g. best.json)")
    e.add_argument("--demo", help="demo directory or demo.json")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", parents=[shared], argument_default=S, help="draw partitions over points as SVG")
    r.add_argument("--partitions", help="comma-separated partition JSON files")
    r.add_argument("--max-points", dest="max_points", type=int)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(ns)
        return ns.func(cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spartq {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, BaselineError, WorkloadError, CheckpointError, ValueError, OSError, FloatingPointError) as exc:
        print(f"spartq {ns.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
