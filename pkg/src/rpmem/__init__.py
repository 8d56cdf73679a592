"""Executable model of remote persistence to persistent memory over RDMA."""

from .bench import BenchReport, CostModel, run_benchmark, simulate_append
from .checker import MatrixReport, Verdict, explore, replay, run_matrix
from .configs import Arity, Primitive, ServerConfig, enumerate_configs, select_recipe
from .engine import MachineState, OpKind, Transport, WorkRequest, build_scenario
from .memory import (
    Address,
    DataUnit,
    PersistenceDomain,
    Region,
    Stage,
    persistence_stages,
    recover_image,
)
from .recipes import Recipe, UpdateSpec, mutate, validate_recipe
from .remotelog import LogLayout, encode_record, scan_log_tail

__all__ = [
    "Address",
    "Arity",
    "BenchReport",
    "CostModel",
    "DataUnit",
    "LogLayout",
    "MachineState",
    "MatrixReport",
    "OpKind",
    "PersistenceDomain",
    "Primitive",
    "Recipe",
    "Region",
    "ServerConfig",
    "Stage",
    "Transport",
    "UpdateSpec",
    "Verdict",
    "WorkRequest",
    "build_scenario",
    "encode_record",
    "enumerate_configs",
    "explore",
    "mutate",
    "persistence_stages",
    "recover_image",
    "replay",
    "run_benchmark",
    "run_matrix",
    "scan_log_tail",
    "select_recipe",
    "simulate_append",
    "validate_recipe",
]
