"""Swap latency: pipelined transfer/compute and fair-share link contention.

Times inside :class:`FairShareNetwork` are microseconds; bandwidths are bytes/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Union

from .errors import InvalidParameter, RoutingError
from .topology import LinkClass, NodeTopology

HOST = "host"
Endpoint = Union[str, int]
LinkId = tuple


def group_count(transfer_bytes: int, group_size: int) -> int:
    if transfer_bytes <= 0 or group_size <= 0:
        raise InvalidParameter("transfer_bytes and group_size must be positive")
    return max(1, -(-int(transfer_bytes) // int(group_size)))


def pipeline_latency(t_transfer_total: float, t_compute_total: float, n_groups: int) -> float:
    """Two-stage pipeline fill-and-drain over ``n_groups`` equal groups."""
    if t_transfer_total < 0 or t_compute_total <= 0 or n_groups < 1:
        raise InvalidParameter("pipeline inputs must be positive")
    tx = t_transfer_total / n_groups
    tc = t_compute_total / n_groups
    return tx + (n_groups - 1) * max(tx, tc) + tc


def host_link() -> LinkId:
    return ("host",)


def pcie_link(group: int) -> LinkId:
    return ("pcie", group)


def nvlink_link(a: int, b: int) -> LinkId:
    return ("nvlink", min(a, b), max(a, b))


def route(topology: NodeTopology, src: Endpoint, dst: int) -> tuple[LinkId, ...]:
    """Links traversed by a copy from ``src`` (HOST or a GPU id) to GPU ``dst``."""
    if src == dst:
        raise InvalidParameter("route source and destination coincide")
    dgrp = topology.pcie_group(dst)
    if src == HOST:
        return (host_link(), pcie_link(dgrp))
    if not isinstance(src, int):
        raise RoutingError(f"unknown source {src!r}")
    if topology.nvlink_class(src, dst) != LinkClass.NONE:
        return (nvlink_link(src, dst),)
    sgrp = topology.pcie_group(src)
    if sgrp == dgrp:
        return (pcie_link(sgrp),)
    return (pcie_link(sgrp), pcie_link(dgrp))


def link_capacities(topology: NodeTopology) -> dict[LinkId, float]:
    caps = {host_link(): topology.host_link_bandwidth}
    for gi in range(len(topology.pcie_groups)):
        caps[pcie_link(gi)] = topology.pcie_bandwidth
    for a in range(topology.gpu_count):
        for b in range(a + 1, topology.gpu_count):
            bw = topology.nvlink_bandwidth(a, b)
            if bw > 0:
                caps[nvlink_link(a, b)] = bw
    return caps


def solo_rate(topology: NodeTopology, links) -> float:
    """Bytes/s a transfer gets when alone on ``links``."""
    caps = link_capacities(topology)
    return min(caps[l] for l in links)


def pipelined_swap_ms(topology: NodeTopology, transfer_bytes: int, exec_ms: float,
                      src: Endpoint, dst: int, group_size: int) -> float:
    """Uncontended pipelined swap-and-execute latency."""
    rate = solo_rate(topology, route(topology, src, dst))
    t_x = transfer_bytes / rate * 1000.0
    return pipeline_latency(t_x, exec_ms, group_count(transfer_bytes, group_size))


@dataclass(eq=False)
class TransferTask:
    key: Hashable
    links: tuple[LinkId, ...]
    bytes_total: float
    start_time: float  # us
    src: Endpoint = HOST
    dst: int = 0
    model: str = ""
    group_size: int = 0
    bytes_remaining: float = field(init=False)
    rate: float = field(default=0.0, init=False)  # bytes/us
    last_update: float = field(init=False)
    finish_time: float = field(default=math.inf, init=False)
    granted: float = field(default=0.0, init=False)
    version: int = field(default=0, init=False)
    end_time: float | None = field(default=None, init=False)

    def __post_init__(self):
        if self.bytes_total <= 0:
            raise InvalidParameter("transfer must move a positive number of bytes")
        self.bytes_remaining = float(self.bytes_total)
        self.last_update = self.start_time


@dataclass
class LinkState:
    link: LinkId
    capacity: float  # bytes/s
    active: set = field(default_factory=set)

    def share(self) -> float:
        """Per-task bytes/us under equal split."""
        return self.capacity / 1e6 / max(1, len(self.active))


class FairShareNetwork:
    """Event-driven fair sharing of link capacity between transfers.

    A task's rate is the minimum over its links of capacity / active-count.
    Rates change only when a task starts or finishes; the caller reschedules
    completions from the returned task list (``task.finish_time``, ``task.version``).
    """

    def __init__(self, capacities: dict[LinkId, float]):
        self.links = {l: LinkState(l, c) for l, c in capacities.items()}
        self.tasks: dict[Hashable, TransferTask] = {}
        self.records: list[dict] = []

    @classmethod
    def for_topology(cls, topology: NodeTopology) -> "FairShareNetwork":
        return cls(link_capacities(topology))

    def _bank(self, task: TransferTask, now: float) -> None:
        dt = now - task.last_update
        if dt > 0:
            moved = min(task.bytes_remaining, task.rate * dt)
            task.bytes_remaining -= moved
            task.granted += moved
        task.last_update = now

    def _rate(self, task: TransferTask) -> float:
        return min(self.links[l].share() for l in task.links)

    def on_link_change(self, links, now: float) -> list[TransferTask]:
        """Bank progress up to ``now`` and recompute every task on ``links``."""
        touched = {}
        for l in links:
            for t in self.links[l].active:
                touched[t.key] = t
        out = []
        for t in touched.values():
            self._bank(t, now)
        for t in sorted(touched.values(), key=lambda t: t.start_time):
            t.rate = self._rate(t)
            t.finish_time = now + (t.bytes_remaining / t.rate if t.bytes_remaining > 0 else 0.0)
            t.version += 1
            out.append(t)
        return out

    def start(self, task: TransferTask, now: float) -> list[TransferTask]:
        if task.key in self.tasks:
            raise InvalidParameter(f"transfer {task.key!r} already active")
        for l in task.links:
            if l not in self.links:
                raise RoutingError(f"unknown link {l!r}")
        # bank everyone else at their old rate before the count changes
        for l in task.links:
            for t in self.links[l].active:
                self._bank(t, now)
        task.last_update = now
        self.tasks[task.key] = task
        for l in task.links:
            self.links[l].active.add(task)
        return self.on_link_change(task.links, now)

    def finish(self, key: Hashable, now: float) -> list[TransferTask]:
        task = self.tasks.pop(key)
        self._bank(task, now)
        # float residue from banking; completion is authoritative
        task.granted += task.bytes_remaining
        task.bytes_remaining = 0.0
        task.end_time = now
        for l in task.links:
            for t in self.links[l].active:
                if t is not task:
                    self._bank(t, now)
            self.links[l].active.discard(task)
        dur = max(now - task.start_time, 1e-9)
        self.records.append({
            "src": task.src, "dst": task.dst, "bytes": task.bytes_total,
            "start_us": task.start_time, "end_us": now,
            "mean_rate": task.bytes_total / dur * 1e6,
        })
        return self.on_link_change(task.links, now)

    def active_count(self, link: LinkId) -> int:
        return len(self.links[link].active)


def simulate_transfers(capacities: dict[LinkId, float], jobs) -> dict:
    """Run ``(key, links, bytes, start_us)`` jobs to completion; return end times.

    Standalone driver used for analysis and tests.
    """
    import heapq

    net = FairShareNetwork(capacities)
    heap = []
    seq = 0
    for key, links, nbytes, start in jobs:
        heapq.heappush(heap, (start, 0, seq, "start", (key, tuple(links), nbytes)))
        seq += 1
    ends = {}
    versions = {}
    while heap:
        now, _, _, kind, payload = heapq.heappop(heap)
        if kind == "start":
            key, links, nbytes = payload
            changed = net.start(TransferTask(key, links, nbytes, now), now)
        else:
            key, ver = payload
            if versions.get(key) != ver or key not in net.tasks:
                continue
            changed = net.finish(key, now)
            ends[key] = now
        for t in changed:
            versions[t.key] = t.version
            heapq.heappush(heap, (t.finish_time, -1, seq, "done", (t.key, t.version)))
            seq += 1
    return ends
