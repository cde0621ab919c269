"""Multi-node layer: initial placement, migration of starved functions, node provisioning."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .errors import ConfigError, InvalidParameter
from .queueing import tail_latency
from .sim import NodeEngine, SimParams, _rounded
from .topology import NodeTopology
from .workload import FunctionSpec, Trace

REPORT_VERSION = 1
# boxes of the latency distribution: 1/128, 1/64, ..., 1/2, ..., 63/64, 127/128
NORMALIZED_QUANTILES = tuple([2.0 ** -k for k in range(7, 0, -1)]
                             + [1 - 2.0 ** -k for k in range(2, 8)])


@dataclass
class ClusterParams:
    nodes: int = 6
    max_nodes: int = 6
    patience: int = 3  # consecutive low-priority periods before migrating
    headroom: float = 0.7  # max offered load as a share of a node's GPUs
    migration_bandwidth: float = 2e9  # bytes/s between nodes
    smoothing: float = 0.5  # weight of the previous load estimate

    def validate(self) -> None:
        checks = [
            ("nodes", self.nodes >= 1),
            ("max_nodes", self.max_nodes >= self.nodes),
            ("patience", self.patience >= 1),
            ("headroom", 0 < self.headroom <= 1),
            ("migration_bandwidth", self.migration_bandwidth > 0),
            ("smoothing", 0 <= self.smoothing < 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"cluster.{name}: value {getattr(self, name)!r} out of range")


@dataclass
class Migration:
    time_ms: float
    function_id: str
    src: int
    dst: int
    ready_ms: float
    provisioned: bool = False


def offered_load(rate_per_min: float, exec_ms: float) -> float:
    """Expected busy fraction of one GPU."""
    return rate_per_min / 60_000.0 * exec_ms


def place_initial(loads: Sequence[tuple[str, float]], n_nodes: int) -> dict[str, int]:
    """Greedy longest-processing-time: heaviest function first onto the lightest node."""
    if n_nodes < 1:
        raise InvalidParameter("need at least one node")
    totals = [0.0] * n_nodes
    out = {}
    for fid, load in sorted(loads, key=lambda t: (-t[1], t[0])):
        n = min(range(n_nodes), key=lambda i: (totals[i], i))
        out[fid] = n
        totals[n] += load
    return out


def normalized_load_variance(loads: Sequence[float]) -> float:
    """Population variance of per-GPU loads scaled by the node's busiest GPU."""
    mx = max(loads, default=0.0)
    if mx <= 0:
        return 0.0
    return statistics.pvariance([x / mx for x in loads])


@dataclass
class ClusterReport:
    policy: str
    duration_ms: float
    slo_ratio: float
    nodes: list
    functions: dict
    migrations: list
    deferred: list
    node_count_timeline: list
    normalized_latency: dict
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        body = {"version": REPORT_VERSION, **_rounded(asdict(self))}
        return json.dumps(body, sort_keys=True, indent=1) + "\n"


class Cluster:
    """Node engines advanced in lock-step periods with a rebalance at each barrier."""

    def __init__(self, topology: NodeTopology, functions: Sequence[tuple[FunctionSpec, float]],
                 params: SimParams | None = None, cparams: ClusterParams | None = None,
                 seed: int = 0, *, duration_ms: float, placement: dict[str, int] | None = None):
        self.params = params or SimParams()
        self.cparams = cparams or ClusterParams()
        self.cparams.validate()
        self.topology = topology
        self.seed = seed
        self.horizon = duration_ms
        self.specs = {spec.id: spec for spec, _ in functions}
        self.load_est = {spec.id: offered_load(rate, spec.model.exec_latency)
                         for spec, rate in functions}
        self.home = dict(placement) if placement is not None else \
            place_initial(list(self.load_est.items()), self.cparams.nodes)
        if set(self.home) != set(self.specs):
            raise InvalidParameter("placement must cover every function exactly once")
        per_node: list[list[FunctionSpec]] = [[] for _ in range(self.cparams.nodes)]
        for spec, _ in functions:
            n = self.home[spec.id]
            if not 0 <= n < self.cparams.nodes:
                raise InvalidParameter(f"{spec.id}: node {n} out of range")
            per_node[n].append(spec)
        self.nodes = [self._new_node(fs, i, 0.0) for i, fs in enumerate(per_node)]
        self.low_streak = {fid: 0 for fid in self.specs}
        self.moved_at: dict[str, float] = {}
        self.ready_at: dict[str, float] = {}
        self.migrations: list[Migration] = []
        self.deferred: list[tuple[float, str]] = []
        self.node_count = [(0.0, len(self.nodes))]

    def _new_node(self, specs, index: int, start_ms: float) -> NodeEngine:
        return NodeEngine(self.topology, specs, self.params, self.seed * 1009 + index,
                          duration_ms=self.horizon, start_ms=start_ms)

    def node_loads(self) -> list[float]:
        loads = [0.0] * len(self.nodes)
        for fid, n in self.home.items():
            loads[n] += self.load_est[fid]
        return loads

    def run(self, trace: Trace) -> ClusterReport:
        period = self.params.period_ms
        reqs = list(trace)
        i, t, rid = 0, 0.0, 0
        while True:
            t_next = min(t + period, self.horizon)
            counts: dict[str, int] = {}
            while i < len(reqs) and (reqs[i].arrival_time <= t_next or t_next >= self.horizon):
                r = reqs[i]
                fid = r.function_id
                if fid not in self.specs:
                    raise InvalidParameter(f"trace refers to unknown function {fid!r}")
                ready = self.ready_at.get(fid)
                release = ready if ready is not None and r.arrival_time < ready else None
                self.nodes[self.home[fid]].submit(rid, fid, r.arrival_time, release)
                counts[fid] = counts.get(fid, 0) + 1
                rid += 1
                i += 1
            for node in self.nodes:
                node.run_until(t_next)
            if t_next >= self.horizon:
                break
            self._update_estimates(counts, t_next - t)
            self.rebalance(t_next)
            t = t_next
        for node in self.nodes:
            node.run_until()
        return self.report()

    def _update_estimates(self, counts: dict[str, int], span_ms: float) -> None:
        s = self.cparams.smoothing
        for fid, spec in self.specs.items():
            measured = counts.get(fid, 0) * spec.model.exec_latency / span_ms
            self.load_est[fid] = s * self.load_est[fid] + (1 - s) * measured

    def rebalance(self, now_ms: float) -> list[Migration]:
        """Move functions stuck in a node's low-priority group; returns new migrations."""
        for fid, n in self.home.items():
            stuck = fid in self.nodes[n].low_functions()
            self.low_streak[fid] = self.low_streak[fid] + 1 if stuck else 0
        k = self.cparams.patience
        victims = sorted((f for f, s in self.low_streak.items() if s >= k),
                         key=lambda f: (-self.low_streak[f], f))
        loads = self.node_loads()
        cap = self.cparams.headroom * self.topology.gpu_count
        done = []
        for fid in victims:
            src, lf = self.home[fid], self.load_est[fid]
            best = None
            for n, load in enumerate(loads):
                post = load + lf
                if n != src and post < cap and post <= loads[src]:
                    if best is None or (load, n) < best:
                        best = (load, n)
            provisioned = False
            if best is None and len(self.nodes) < self.cparams.max_nodes:
                self.nodes.append(self._new_node([], len(self.nodes), now_ms))
                loads.append(0.0)
                self.node_count.append((now_ms, len(self.nodes)))
                best, provisioned = (0.0, len(self.nodes) - 1), True
            if best is None:
                self.deferred.append((now_ms, fid))
                continue
            dst = best[1]
            spec = self.specs[fid]
            ready = now_ms + spec.model.footprint_bytes / self.cparams.migration_bandwidth * 1000.0
            self.nodes[src].remove_function(fid)
            self.nodes[dst].adopt_function(spec)
            self.home[fid] = dst
            loads[src] -= lf
            loads[dst] += lf
            self.low_streak[fid] = 0
            self.moved_at[fid] = now_ms
            self.ready_at[fid] = ready
            m = Migration(now_ms, fid, src, dst, ready, provisioned)
            self.migrations.append(m)
            done.append(m)
        return done

    def report(self) -> ClusterReport:
        node_reports = [n.report() for n in self.nodes]
        functions, norm = {}, []
        compliant = 0
        for fid, spec in self.specs.items():
            n = self.home[fid]
            since = self.moved_at.get(fid, -math.inf)
            lats = [r.latency_ms for r in self.nodes[n].records
                    if r.function_id == fid and r.arrival / 1000.0 >= since
                    and (r.end >= 0 or r.failed)]
            tail = tail_latency(lats, spec.tail_percentile) if lats else math.nan
            ok = fid not in self.nodes[n].rejected and (not lats or tail <= spec.deadline)
            compliant += ok
            functions[fid] = {"node": n, "tail_ms": tail, "slo_compliant": ok,
                              "samples": len(lats), "migrated": fid in self.moved_at}
        for node in self.nodes:
            for r in node.records:
                if r.end >= 0 or r.failed:
                    norm.append(r.latency_ms / self.specs[r.function_id].deadline)
        per_node = []
        for node, rep in zip(self.nodes, node_reports):
            per_node.append({
                "functions": sum(1 for n in self.home.values() if n == len(per_node)),
                "slo_ratio": rep.slo_ratio,
                "gpu_load": rep.gpu_load,
                "load_variance": normalized_load_variance(rep.gpu_load),
                "requests": rep.requests,
            })
        quantiles = {f"{q:.6f}": tail_latency(norm, q) if norm else math.nan
                     for q in NORMALIZED_QUANTILES}
        quantiles["p99"] = tail_latency(norm, 0.99) if norm else math.nan
        return ClusterReport(
            policy=self.nodes[0].policy.name,
            duration_ms=self.horizon,
            slo_ratio=compliant / len(self.specs) if self.specs else 1.0,
            nodes=per_node,
            functions=functions,
            migrations=[asdict(m) for m in self.migrations],
            deferred=[list(d) for d in self.deferred],
            node_count_timeline=[list(x) for x in self.node_count],
            normalized_latency=quantiles,
            notes=["SLO counters restart on the destination node after a migration"]
            if self.migrations else [],
        )


def run_cluster(topology: NodeTopology, functions: Sequence[tuple[FunctionSpec, float]],
                trace: Trace, params: SimParams | None = None,
                cparams: ClusterParams | None = None, seed: int = 0) -> tuple[ClusterReport, Cluster]:
    c = Cluster(topology, functions, params, cparams, seed, duration_ms=trace.duration)
    return c.run(trace), c
