"""Discrete-event node simulator: arrivals, swaps, compute, SLO accounting."""
from __future__ import annotations

import heapq
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .errors import (CapacityError, ConfigError, InvalidParameter, InvariantViolation,
                     OutOfMemory)
from .memory import (DEFAULT_FIXED_BLOCK, DEFAULT_MIN_BUDDY, DEFAULT_PARTITION_SIZE,
                     DEFAULT_RUNTIME_RESERVE, MemoryManager, NativeCachingAllocator)
from .queueing import (HIGH_ORDERS, SPLIT_POSITIVE_FIRST, FifoQueue, FunctionSloState,
                       PriorityQueues, auto_config_alpha, tail_latency)
from .scheduler import (NodeState, SwapKind, iter_eviction_order, pick_eviction_victims,
                        schedule, schedule_random, touch)
from .topology import NodeTopology
from .transfer import HOST, FairShareNetwork, TransferTask, group_count, route
from .workload import DEFAULT_GROUP_SIZE, FunctionSpec, Heaviness, Trace

log = logging.getLogger(__name__)

REPORT_VERSION = 1
REQUESTS_HEADER = "request_id,function_id,arrival_ms,start_ms,end_ms,gpu,swap_kind"

# event kinds, in tie-break-irrelevant order (ties resolve by insertion seq)
ARRIVAL, EXPIRE, XFER_START, XFER_DONE, COMPUTE_DONE, PERIOD, CONSOLIDATE = range(7)


@dataclass(frozen=True)
class PolicyBundle:
    name: str
    queueing: str = "slo"  # slo | fifo
    scheduling: str = "interference"  # interference | random
    eviction: str = "heaviness"  # heaviness | lru
    allocator: str = "pooled"  # pooled | native-cost
    binding: str = "late"  # late | static
    static_footprint: str = "pooled"  # pooled | native, static binding only
    keepalive: bool = False


PRESETS = {
    "faaswap": PolicyBundle("faaswap"),
    "fifo": PolicyBundle("fifo", queueing="fifo"),
    "random": PolicyBundle("random", scheduling="random"),
    "lru": PolicyBundle("lru", eviction="lru"),
    "block": PolicyBundle("block", allocator="native-cost"),
    "simpleswap": PolicyBundle("simpleswap", queueing="fifo", scheduling="random", eviction="lru"),
    "nonswap": PolicyBundle("nonswap", queueing="fifo", binding="static"),
    "native": PolicyBundle("native", queueing="fifo", binding="static", static_footprint="native"),
    "infless-ka": PolicyBundle("infless-ka", queueing="fifo", binding="static",
                               static_footprint="native", keepalive=True),
}


def policy_select(name: str) -> PolicyBundle:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown policy bundle {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class SimParams:
    policy: str = "faaswap"
    group_size: int = DEFAULT_GROUP_SIZE
    partition_size: int = DEFAULT_PARTITION_SIZE
    fixed_block_size: int = DEFAULT_FIXED_BLOCK
    min_buddy_block: int = DEFAULT_MIN_BUDDY
    runtime_reserve: int = DEFAULT_RUNTIME_RESERVE
    alpha0: float = 0.5
    scalar: float = 2.0
    threshold: float = 0.04
    high_order: str = SPLIT_POSITIVE_FIRST
    period_ms: float = 10_000.0
    consolidate_ms: float = 10_000.0
    native_alloc_ms: float = 10.0
    routing_overhead_ms: float = 0.0
    keepalive_ms: float = 60_000.0
    warm_start: bool = True
    checked: bool = False

    def validate(self) -> None:
        policy_select(self.policy)
        checks = [
            ("group_size", self.group_size > 0),
            ("partition_size", self.partition_size > 0),
            ("fixed_block_size", 0 < self.fixed_block_size <= self.partition_size),
            ("min_buddy_block", self.min_buddy_block > 0),
            ("runtime_reserve", self.runtime_reserve >= 0),
            ("alpha0", 0 < self.alpha0 <= 1),
            ("scalar", self.scalar > 1),
            ("threshold", self.threshold >= 0),
            ("high_order", self.high_order in HIGH_ORDERS),
            ("period_ms", self.period_ms > 0),
            ("consolidate_ms", self.consolidate_ms > 0),
            ("native_alloc_ms", self.native_alloc_ms >= 0),
            ("routing_overhead_ms", self.routing_overhead_ms >= 0),
            ("keepalive_ms", self.keepalive_ms >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"policy.{name}: value {getattr(self, name)!r} out of range")


def _us(ms: float) -> int:
    return int(round(ms * 1000.0))


@dataclass
class RequestRecord:
    id: int
    function_id: str
    arrival: int  # us
    deadline: int  # absolute us
    start: int = -1
    end: int = -1
    gpu: int = -1
    swap_kind: str = ""
    src: int | None = None
    victims: tuple = ()
    expired: bool = False
    failed: bool = False
    reason: str = ""

    @property
    def latency_ms(self) -> float:
        return math.inf if self.failed else (self.end - self.arrival) / 1000.0


@dataclass
class _Swap:
    rec: RequestRecord
    gpu: int
    src: int | None
    start: int = 0
    first_group_us: float = 0.0
    n_groups: int = 1


@dataclass
class SimReport:
    policy: str
    duration_ms: float
    gpu_count: int
    functions: dict
    slo_ratio: float
    gpu_load: list
    swap_counts: dict
    alpha_timeline: list
    allocator: dict
    requests: dict
    samples: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {"version": REPORT_VERSION, **_rounded(asdict(self))}
        return json.dumps(body, sort_keys=True, indent=1) + "\n"


def _rounded(x):
    if isinstance(x, float):
        if math.isinf(x) or math.isnan(x):
            return None
        return round(x, 6)
    if isinstance(x, dict):
        return {str(k): _rounded(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_rounded(v) for v in x]
    return x


class NodeEngine:
    """One node: GPUs, memory pool, links, queue and the event loop."""

    def __init__(self, topology: NodeTopology, functions: Iterable[FunctionSpec],
                 params: SimParams | None = None, seed: int = 0, *, duration_ms: float = 0.0,
                 start_ms: float = 0.0):
        self.params = params or SimParams()
        self.params.validate()
        self.policy = policy_select(self.params.policy)
        self.topology = topology
        self.rng = random.Random(seed)
        self.functions: dict[str, FunctionSpec] = {}
        self.now = _us(start_ms)
        self.started = self.now
        self.horizon = _us(duration_ms)
        self._events: list = []
        self._seq = 0
        self.records: list[RequestRecord] = []
        self.alpha_log: list[tuple] = []
        self.busy_us = [0] * topology.gpu_count
        self.occupied_us = [0] * topology.gpu_count
        self._occupied_since = [0] * topology.gpu_count
        self._period_samples: dict[str, list[float]] = {}
        self._last_ratio: float | None = None
        self._swaps: dict[int, _Swap] = {}
        self.net = FairShareNetwork.for_topology(topology)
        self.node = NodeState(topology)
        self._free = topology.gpu_count
        p = self.params
        if self.policy.allocator == "native-cost":
            self.mem = NativeCachingAllocator(topology, runtime_reserve=p.runtime_reserve)
        else:
            self.mem = MemoryManager(topology, p.partition_size, p.fixed_block_size,
                                     runtime_reserve=p.runtime_reserve,
                                     min_buddy_block=p.min_buddy_block, checked=p.checked)
        if self.policy.queueing == "slo":
            self.queue = PriorityQueues(p.alpha0, p.high_order)
        else:
            self.queue = FifoQueue()
        self.static = self.policy.binding == "static"
        self.home: dict[str, int] = {}
        self.rejected: set[str] = set()
        self._gpu_queues = [[] for _ in range(topology.gpu_count)]  # static binding FIFOs
        self._gpu_q_head = [0] * topology.gpu_count
        self._warm: list[dict[str, int]] = [dict() for _ in range(topology.gpu_count)]
        self._static_used = [0] * topology.gpu_count
        self.cold_starts = 0
        self.consolidation_moves = 0
        for spec in functions:
            self.add_function(spec)
        if self.static:
            self._bind_static()
        elif p.warm_start:
            self._warm_start()
        if self.horizon > self.now:
            self._push(self.now + _us(p.period_ms), PERIOD, None)
            if not self.static:
                self._push(self.now + _us(p.consolidate_ms), CONSOLIDATE, None)

    # -- setup ----------------------------------------------------------------

    def add_function(self, spec: FunctionSpec) -> None:
        if spec.id in self.functions:
            raise InvalidParameter(f"duplicate function id {spec.id!r}")
        self.functions[spec.id] = spec
        self.node.heaviness[spec.id] = spec.model.heaviness
        self.node.footprint[spec.id] = spec.model.footprint_bytes
        self.queue.register(FunctionSloState(spec.id, spec.tail_percentile,
                                             prior_latency_ms=spec.model.exec_latency))
        self._period_samples.setdefault(spec.id, [])
        if not self.static:
            self.mem.register_model(spec.id, spec.model)

    def adopt_function(self, spec: FunctionSpec) -> None:
        """Host ``spec`` here with fresh SLO counters, re-adopting a former resident."""
        if spec.id not in self.functions:
            self.add_function(spec)
            if self.static:
                self._bind_one(spec, len(self.functions) - 1)
            return
        self.queue.register(FunctionSloState(spec.id, spec.tail_percentile,
                                             prior_latency_ms=spec.model.exec_latency))
        self._period_samples[spec.id] = []

    def remove_function(self, fid: str) -> None:
        """Drop idle GPU copies of ``fid``; queued requests still finish here."""
        for g in sorted(self.node.hosts.get(fid, set())):
            if fid not in self.node.gpus[g].pinned:
                self.mem.evict_model(fid, g)
                self.node.drop_copy(fid, g)

    def _static_footprint(self, spec: FunctionSpec) -> int:
        fp = spec.model.footprint_bytes
        if self.policy.static_footprint == "native":
            fp += self.params.runtime_reserve
        return fp

    def _bind_static(self) -> None:
        """Round-robin function-to-GPU binding; capacity-capped unless keep-alive."""
        for i, spec in enumerate(self.functions.values()):
            self._bind_one(spec, i)

    def _bind_one(self, spec: FunctionSpec, i: int) -> None:
        g_count = self.topology.gpu_count
        pool = self.topology.gpu_memory_bytes - self.params.runtime_reserve
        fp = self._static_footprint(spec)
        if self.policy.keepalive:
            self.home[spec.id] = i % g_count
            return
        for k in range(g_count):
            g = (i + k) % g_count
            if self._static_used[g] + fp <= pool:
                self._static_used[g] += fp
                self.home[spec.id] = g
                return
        self.rejected.add(spec.id)

    def _warm_start(self) -> None:
        g_count = self.topology.gpu_count
        full = [False] * g_count
        for i, (fid, spec) in enumerate(self.functions.items()):
            if all(full):
                break
            for k in range(g_count):
                g = (i + k) % g_count
                if full[g]:
                    continue
                try:
                    self.mem.load_model_blocks(spec.model, g, fid)
                except OutOfMemory:
                    full[g] = True
                    continue
                self.node.add_copy(fid, g, 0)
                break

    # -- event plumbing -------------------------------------------------------

    def _push(self, t: int, kind: int, payload) -> None:
        if t < self.now:
            raise InvariantViolation(f"event scheduled in the past ({t} < {self.now})")
        heapq.heappush(self._events, (t, self._seq, kind, payload))
        self._seq += 1

    def submit(self, request_id: int, function_id: str, arrival_ms: float,
               release_ms: float | None = None) -> RequestRecord:
        """Queue an arrival; ``release_ms`` delays delivery of a request held elsewhere."""
        spec = self.functions[function_id]
        t = _us(arrival_ms)
        rec = RequestRecord(request_id, function_id, t, t + _us(spec.deadline))
        self._push(t if release_ms is None else max(t, _us(release_ms)), ARRIVAL, rec)
        return rec

    def load_trace(self, trace: Trace) -> None:
        for i, req in enumerate(trace):
            if req.function_id not in self.functions:
                raise InvalidParameter(f"trace refers to unknown function {req.function_id!r}")
            self.submit(i, req.function_id, req.arrival_time)
        self.horizon = max(self.horizon, _us(trace.duration))

    def pending(self) -> bool:
        return bool(self._events)

    def step(self) -> int:
        """Handle exactly one event; returns its kind."""
        if not self._events:
            raise StopIteration("event queue empty")
        t, _, kind, payload = heapq.heappop(self._events)
        self.now = t
        if kind == ARRIVAL:
            self._on_arrival(payload)
        elif kind == EXPIRE:
            self._on_expire(payload)
        elif kind == XFER_START:
            self._start_transfer(payload)
        elif kind == XFER_DONE:
            self._on_transfer_done(*payload)
        elif kind == COMPUTE_DONE:
            self._on_compute_done(*payload)
        elif kind == PERIOD:
            self._on_period()
        elif kind == CONSOLIDATE:
            self._on_consolidate()
        if self.params.checked:
            self.check_invariants()
        return kind

    def run_until(self, t_ms: float | None = None) -> None:
        limit = math.inf if t_ms is None else _us(t_ms)
        while self._events and self._events[0][0] <= limit:
            self.step()
        if t_ms is not None:
            self.now = max(self.now, limit)

    # -- handlers -------------------------------------------------------------

    def _on_arrival(self, rec: RequestRecord) -> None:
        self.records.append(rec)
        if rec.function_id in self.rejected:
            rec.failed, rec.reason = True, "rejected"
            self._account(rec, counted=True)
            return
        self._push(max(rec.deadline, self.now), EXPIRE, rec)
        if self.static:
            g = self.home[rec.function_id]
            self._gpu_queues[g].append(rec)
            self._dispatch_static(g)
        else:
            self.queue.push(rec)
            self._dispatch()

    def _on_expire(self, rec: RequestRecord) -> None:
        if rec.start < 0 and not rec.failed:
            rec.expired = True
            self.queue.states[rec.function_id].record_expired()
            self.queue.refresh(rec.function_id)

    def _dispatch(self) -> None:
        while self._free and len(self.queue):
            self._start(self.queue.next_request())

    def _occupy(self, g: int) -> None:
        gs = self.node.gpus[g]
        if gs.busy:
            raise InvariantViolation(f"GPU {g} double-booked")
        gs.busy = True
        self._free -= 1
        self._occupied_since[g] = self.now

    def _start(self, rec: RequestRecord) -> None:
        fid = rec.function_id
        spec = self.functions[fid]
        if self.policy.scheduling == "random":
            dec = schedule_random(fid, self.node, self.rng)
        else:
            dec = schedule(fid, self.node)
        g = dec.gpu
        rec.start, rec.gpu, rec.swap_kind, rec.src = self.now, g, dec.swap_kind.value, dec.src
        if dec.swap_kind is SwapKind.NO_SWAP:
            self._occupy(g)
            self.node.pin(fid, g)
            self._push(self.now + _us(self.params.routing_overhead_ms + spec.model.exec_latency),
                       COMPUTE_DONE, (g, rec))
            return
        try:
            placement, victims = self._make_room(spec, g)
        except CapacityError as exc:
            rec.failed, rec.reason, rec.end = True, str(exc), self.now
            self._account(rec, counted=not rec.expired)
            return
        rec.victims = tuple(victims)
        self._occupy(g)
        gs = self.node.gpus[g]
        gs.loading, gs.loading_model = spec.model.heaviness, fid
        if dec.src is not None:
            self.node.pin(fid, dec.src)
        job = _Swap(rec, g, dec.src)
        delay = placement.native_calls * _us(self.params.native_alloc_ms) if placement.native_calls else 0
        delay += _us(self.params.routing_overhead_ms)
        if delay:
            self._push(self.now + delay, XFER_START, job)
        else:
            self._start_transfer(job)

    def _make_room(self, spec: FunctionSpec, g: int):
        fid, victims = spec.id, []
        aware = self.policy.eviction == "heaviness"
        model = spec.model

        def evict(batch):
            for v in batch:
                self.mem.evict_model(v, g)
                self.node.drop_copy(v, g)
                victims.append(v)

        short = model.footprint_bytes - self.mem.free_bytes(g)
        if short > 0:
            # the pool cannot hold the model whatever the layout
            evict(pick_eviction_victims(g, short, self.node, heaviness_aware=aware))
        while True:
            if self.mem.fits(model.block_spec, g):
                try:
                    return self.mem.load_model_blocks(model, g, fid), victims
                except OutOfMemory:
                    pass
            # enough bytes but fragmented: release one more victim
            batch = iter_eviction_order(g, self.node, heaviness_aware=aware)[:1]
            if not batch:
                raise CapacityError(f"GPU {g}: fragmented and nothing evictable")
            evict(batch)

    def _start_transfer(self, job: _Swap) -> None:
        rec = job.rec
        model = self.functions[rec.function_id].model
        src = HOST if job.src is None else job.src
        links = route(self.topology, src, job.gpu)
        task = TransferTask(rec.id, links, model.transfer_bytes, float(self.now), src, job.gpu,
                            rec.function_id, self.params.group_size)
        job.start = self.now
        job.n_groups = group_count(model.transfer_bytes, self.params.group_size)
        self._swaps[rec.id] = job
        changed = self.net.start(task, float(self.now))
        job.first_group_us = model.transfer_bytes / job.n_groups / task.rate
        self._reschedule(changed)

    def _reschedule(self, changed) -> None:
        for t in changed:
            self._push(max(self.now, math.ceil(t.finish_time)), XFER_DONE, (t.key, t.version))

    def _on_transfer_done(self, key, version) -> None:
        task = self.net.tasks.get(key)
        if task is None or task.version != version:
            return
        self._reschedule(self.net.finish(key, float(self.now)))
        job = self._swaps.pop(key)
        rec, g = job.rec, job.gpu
        fid = rec.function_id
        model = self.functions[fid].model
        gs = self.node.gpus[g]
        gs.loading = gs.loading_model = None
        self.node.add_copy(fid, g, self.now)
        self.node.pin(fid, g)
        if job.src is not None:
            self.node.unpin(fid, job.src)
        exec_us = _us(model.exec_latency)
        # pipeline drain: last group's compute, or compute-bound from the first group
        end = max(self.now + math.ceil(exec_us / job.n_groups),
                  job.start + math.ceil(job.first_group_us) + exec_us)
        self._push(end, COMPUTE_DONE, (g, rec))

    def _on_compute_done(self, g: int, rec: RequestRecord) -> None:
        rec.end = self.now
        fid = rec.function_id
        self.busy_us[g] += _us(self.functions[fid].model.exec_latency)
        gs = self.node.gpus[g]
        gs.busy = False
        self._free += 1
        self.occupied_us[g] += self.now - self._occupied_since[g]
        if self.static:
            self._account(rec, counted=not rec.expired)
            self._dispatch_static(g)
            return
        self.node.unpin(fid, g)
        touch(fid, g, self.now, self.node)
        self._account(rec, counted=not rec.expired)
        self.queue.refresh(fid)
        self._dispatch()

    def _account(self, rec: RequestRecord, counted: bool) -> None:
        spec = self.functions[rec.function_id]
        lat = rec.latency_ms
        state = self.queue.states[rec.function_id]
        state.record_served(min(lat, 1e12), lat <= spec.deadline, counted=counted)
        self._period_samples[rec.function_id].append(lat)

    # -- static binding ---------------------------------------------------------

    def _dispatch_static(self, g: int) -> None:
        gs = self.node.gpus[g]
        q = self._gpu_queues[g]
        while not gs.busy and self._gpu_q_head[g] < len(q):
            rec = q[self._gpu_q_head[g]]
            self._gpu_q_head[g] += 1
            if self._gpu_q_head[g] > 1024:
                del q[:self._gpu_q_head[g]]
                self._gpu_q_head[g] = 0
            self._start_static(rec, g)

    def _start_static(self, rec: RequestRecord, g: int) -> None:
        spec = self.functions[rec.function_id]
        rec.start, rec.gpu, rec.swap_kind = self.now, g, SwapKind.NO_SWAP.value
        dur = _us(self.params.routing_overhead_ms + spec.model.exec_latency)
        if self.policy.keepalive:
            extra = self._keepalive_admit(spec, g)
            if extra is None:
                rec.failed, rec.reason, rec.end = True, "no memory for container", self.now
                self._account(rec, counted=not rec.expired)
                return
            if extra:
                rec.swap_kind = SwapKind.FROM_HOST.value
            dur += extra
        self._occupy(g)
        self._push(self.now + dur, COMPUTE_DONE, (g, rec))

    def _keepalive_admit(self, spec: FunctionSpec, g: int) -> int | None:
        """Cold-start cost in us (0 when warm), or None when memory cannot be freed."""
        warm = self._warm[g]
        ttl = _us(self.params.keepalive_ms)
        for fid in [f for f, last in warm.items() if self.now - last > ttl]:
            del warm[fid]
            self._static_used[g] -= self._static_footprint(self.functions[fid])
        if spec.id in warm:
            warm[spec.id] = self.now
            return 0
        pool = self.topology.gpu_memory_bytes - self.params.runtime_reserve
        fp = self._static_footprint(spec)
        for fid in sorted(warm, key=lambda f: (warm[f], f)):
            if self._static_used[g] + fp <= pool:
                break
            del warm[fid]
            self._static_used[g] -= self._static_footprint(self.functions[fid])
        if self._static_used[g] + fp > pool:
            return None
        self._static_used[g] += fp
        warm[spec.id] = self.now
        self.cold_starts += 1
        return _us(spec.model.cold_start_ms)

    # -- periodic work ----------------------------------------------------------

    def period_ratio(self) -> float | None:
        """Share of functions with samples this period whose tail met the deadline."""
        total = ok = 0
        for fid, xs in self._period_samples.items():
            if not xs:
                continue
            spec = self.functions[fid]
            total += 1
            ok += tail_latency(xs, spec.tail_percentile) <= spec.deadline
        return ok / total if total else None

    def _on_period(self) -> None:
        ratio = self.period_ratio()
        q = self.queue
        if isinstance(q, PriorityQueues) and ratio is not None:
            if self._last_ratio is not None:
                q.alpha = auto_config_alpha(q.alpha, self._last_ratio, ratio,
                                            self.params.scalar, self.params.threshold)
            self._last_ratio = ratio
        high, low = q.repartition()
        self.alpha_log.append((self.now / 1000.0, q.alpha, high, low,
                               math.nan if ratio is None else ratio))
        for xs in self._period_samples.values():
            xs.clear()
        nxt = self.now + _us(self.params.period_ms)
        if nxt <= self.horizon:
            self._push(nxt, PERIOD, None)

    def low_functions(self) -> set[str]:
        if isinstance(self.queue, PriorityQueues):
            return set(self.functions) - self.queue.high
        return set()

    def _on_consolidate(self) -> None:
        for gs in self.node.gpus:
            if not gs.busy and not gs.pinned and gs.loading is None:
                self.consolidation_moves += self.mem.consolidate(gs.id)
        nxt = self.now + _us(self.params.consolidate_ms)
        if nxt <= self.horizon:
            self._push(nxt, CONSOLIDATE, None)

    # -- checks and report ------------------------------------------------------

    def check_invariants(self) -> None:
        busy = sum(gs.busy for gs in self.node.gpus)
        if busy + self._free != self.topology.gpu_count:
            raise InvariantViolation("free-GPU counter out of sync")
        if self.static:
            return
        for fid, gpus in self.node.hosts.items():
            for g in gpus:
                if not self.mem.is_resident(fid, g):
                    raise InvariantViolation(f"{fid} listed on GPU {g} but holds no memory")
        for gs in self.node.gpus:
            if gs.loading_model is not None and not gs.busy:
                raise InvariantViolation(f"GPU {gs.id} loading while idle")
        if isinstance(self.mem, MemoryManager) and self.mem.checked:
            self.mem.check_all()

    def report(self) -> SimReport:
        end = max(self.now, self.horizon, 1)
        per_fn, samples = {}, {}
        by_fn: dict[str, list[RequestRecord]] = {f: [] for f in self.functions}
        for r in self.records:
            by_fn[r.function_id].append(r)
        compliant = 0
        for fid, spec in self.functions.items():
            lats = [r.latency_ms for r in by_fn[fid] if r.end >= 0 or r.failed]
            tail = tail_latency(lats, spec.tail_percentile) if lats else math.nan
            ok = fid not in self.rejected and (not lats or tail <= spec.deadline)
            compliant += ok
            per_fn[fid] = {
                "model": spec.model.name, "deadline_ms": spec.deadline,
                "percentile": spec.tail_percentile, "requests": len(by_fn[fid]),
                "completed": sum(1 for r in by_fn[fid] if r.end >= 0 and not r.failed),
                "expired": sum(1 for r in by_fn[fid] if r.expired),
                "failed": sum(1 for r in by_fn[fid] if r.failed),
                "tail_ms": tail, "slo_compliant": ok,
                "heaviness": spec.model.heaviness.value,
                "rejected": fid in self.rejected,
            }
            samples[fid] = lats
        counts = {h.value: {k.value: 0 for k in SwapKind} for h in Heaviness}
        for r in self.records:
            if r.swap_kind and not r.failed:
                h = self.functions[r.function_id].model.heaviness.value
                counts[h][r.swap_kind] += 1
        alloc = self.mem.stats() if not self.static else {
            "static_bytes": list(self._static_used), "cold_starts": self.cold_starts}
        alloc["consolidation_moves"] = self.consolidation_moves
        done = [r for r in self.records if r.end >= 0 and not r.failed]
        return SimReport(
            policy=self.policy.name,
            duration_ms=end / 1000.0,
            gpu_count=self.topology.gpu_count,
            functions=per_fn,
            slo_ratio=compliant / len(self.functions) if self.functions else 1.0,
            gpu_load=[min(1.0, b / max(end - self.started, 1)) for b in self.busy_us],
            swap_counts=counts,
            alpha_timeline=[list(row) for row in self.alpha_log],
            allocator=alloc,
            requests={"arrived": len(self.records), "completed": len(done),
                      "expired": sum(r.expired for r in self.records),
                      "failed": sum(r.failed for r in self.records),
                      "queued": len(self.records) - len(done) - sum(r.failed for r in self.records)},
            samples=samples,
        )

    def requests_csv(self) -> str:
        lines = ["# swapsim requests v1", REQUESTS_HEADER]
        for r in sorted(self.records, key=lambda r: r.id):
            lines.append(f"{r.id},{r.function_id},{r.arrival / 1000:.3f},"
                         f"{r.start / 1000 if r.start >= 0 else ''},"
                         f"{r.end / 1000 if r.end >= 0 else ''},{r.gpu},{r.swap_kind}")
        return "\n".join(lines) + "\n"

    def decisions_csv(self) -> str:
        lines = ["# swapsim decisions v1", "request_id,gpu,swap_kind,src,victims"]
        for r in sorted(self.records, key=lambda r: r.id):
            if r.start < 0:
                continue
            src = "" if r.src is None else r.src
            lines.append(f"{r.id},{r.gpu},{r.swap_kind},{src},{';'.join(r.victims)}")
        return "\n".join(lines) + "\n"

    def alpha_csv(self) -> str:
        lines = ["# swapsim alpha v1", "time_ms,alpha,high_count,low_count,slo_ratio"]
        for t, a, h, l, r in self.alpha_log:
            rs = "" if math.isnan(r) else f"{r:.6f}"
            lines.append(f"{t:.3f},{a:.6f},{h},{l},{rs}")
        return "\n".join(lines) + "\n"


def run(topology: NodeTopology, functions: Sequence[FunctionSpec], trace: Trace,
        params: SimParams | None = None, seed: int = 0) -> tuple[SimReport, NodeEngine]:
    """Simulate ``trace`` to quiescence on one node."""
    eng = NodeEngine(topology, functions, params, seed, duration_ms=trace.duration)
    eng.load_trace(trace)
    eng.run_until()
    return eng.report(), eng
