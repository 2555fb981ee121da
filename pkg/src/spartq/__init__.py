"""Learned spatial partitioning for distributed distance joins."""

from .baselines import DemoEpisode, kdb_actions, quadtree_actions, uniform_actions
from .cost import CostParams, CostReport, JoinCostOracle, Workload, compute_reward, workload_cost
from .data import BBox, Dataset, GridSpec, build_histogram, gen_synthetic, load_points_csv
from .kernels import BACKEND
from .partition import CutAction, PartitionSet, apply_cut, init_single, is_valid_cut
from .trainer import TrainConfig, Trainer, evaluate_all, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BBox",
    "CostParams",
    "CostReport",
    "CutAction",
    "Dataset",
    "DemoEpisode",
    "GridSpec",
    "JoinCostOracle",
    "PartitionSet",
    "TrainConfig",
    "Trainer",
    "Workload",
    "apply_cut",
    "build_histogram",
    "compute_reward",
    "evaluate_all",
    "gen_synthetic",
    "init_single",
    "is_valid_cut",
    "kdb_actions",
    "load_points_csv",
    "quadtree_actions",
    "train",
    "uniform_actions",
    "workload_cost",
]
