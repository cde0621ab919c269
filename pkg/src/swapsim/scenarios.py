"""Seeded workloads used by the acceptance suite and the CLI."""
from __future__ import annotations

import math

import numpy as np

from .workload import FunctionSpec, ModelProfile, Trace, default_catalog, default_deadline, \
    gen_poisson_trace, make_profile, MiB

RATE_MIN, RATE_MAX = 5.0, 30.0  # requests per minute
# Power law fitted to the production rate CDF: 15% of functions above 1 r/m, 3% above 60 r/m.
RATE_EXPONENT = math.log(5) / math.log(60)
FUNCTION_COUNTS = (160, 320, 480, 560)
CLUSTER_DEADLINES = {"vision": 150.0, "bert": 250.0}


def sample_rates(n: int, rng: np.random.Generator, lo: float = RATE_MIN, hi: float = RATE_MAX,
                 exponent: float = RATE_EXPONENT) -> list[float]:
    """Draw rates from a power law truncated to [lo, hi] by inverse CDF."""
    u = rng.uniform(size=n)
    a = exponent
    return [float((lo ** -a - x * (lo ** -a - hi ** -a)) ** (-1 / a)) for x in u]


def round_robin_functions(n: int, rates: list[float], catalog: list[ModelProfile] | None = None,
                          deadline=default_deadline) -> list[tuple[FunctionSpec, float]]:
    cat = catalog or default_catalog()
    return [(FunctionSpec(f"f{i:04d}", cat[i % len(cat)], deadline(cat[i % len(cat)])), rates[i])
            for i in range(n)]


def node_scenario(n_functions: int, seed: int = 1, duration_ms: float = 300_000.0,
                  catalog: list[ModelProfile] | None = None):
    """Catalog models assigned round-robin, power-law rates, Poisson arrivals."""
    rng = np.random.default_rng(seed)
    fns = round_robin_functions(n_functions, sample_rates(n_functions, rng), catalog)
    return fns, gen_poisson_trace(fns, duration_ms, seed)


def cluster_deadline(profile: ModelProfile) -> float:
    if profile.name.lower().startswith("bert"):
        return CLUSTER_DEADLINES["bert"]
    return CLUSTER_DEADLINES["vision"]


def cluster_scenario(n_functions: int = 1000, seed: int = 1, duration_ms: float = 300_000.0):
    """Like ``node_scenario`` with the relaxed deadlines of the cluster deployment."""
    rng = np.random.default_rng(seed)
    fns = round_robin_functions(n_functions, sample_rates(n_functions, rng),
                                deadline=cluster_deadline)
    return fns, gen_poisson_trace(fns, duration_ms, seed)


def offered_load_scenario(n_functions: int = 20, rate: float = 10.0, exec_ms: float = 19.0,
                          duration_ms: float = 3_600_000.0, seed: int = 7):
    """Identical ResNet-152-like functions on one GPU; analytic load is sum(rate * exec)."""
    model = make_profile("ResNet-152", exec_ms, 45.0, 614 * MiB)
    fns = [(FunctionSpec(f"f{i:02d}", model, 80.0), rate) for i in range(n_functions)]
    trace: Trace = gen_poisson_trace(fns, duration_ms, seed)
    analytic = n_functions * rate / 60_000.0 * exec_ms
    return fns, trace, analytic
