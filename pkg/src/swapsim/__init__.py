"""Discrete-event simulator for GPU model swapping in serverless inference."""
from .cluster import Cluster, ClusterParams, place_initial, run_cluster
from .config import SimConfig, dump_config, load_config, parse_config
from .sim import NodeEngine, PolicyBundle, SimParams, SimReport, policy_select, run
from .topology import NodeTopology, default_v100_node, single_gpu_node
from .workload import (FunctionSpec, Heaviness, ModelProfile, Trace, classify_heaviness,
                       default_catalog, gen_poisson_trace, load_model_catalog, load_trace)

__all__ = [
    "Cluster", "ClusterParams", "place_initial", "run_cluster",
    "SimConfig", "dump_config", "load_config", "parse_config",
    "NodeEngine", "PolicyBundle", "SimParams", "SimReport", "policy_select", "run",
    "NodeTopology", "default_v100_node", "single_gpu_node",
    "FunctionSpec", "Heaviness", "ModelProfile", "Trace", "classify_heaviness",
    "default_catalog", "gen_poisson_trace", "load_model_catalog", "load_trace",
]
