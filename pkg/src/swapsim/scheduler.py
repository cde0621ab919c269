"""Request-to-GPU placement and model eviction for one node."""
from __future__ import annotations

import enum
import random
from collections import OrderedDict
from dataclasses import dataclass, field

from .errors import CapacityError, InvalidParameter, InvalidState, SchedulingError
from .topology import LinkClass, NodeTopology
from .workload import Heaviness


class SwapKind(str, enum.Enum):
    NO_SWAP = "NoSwap"
    FROM_HOST = "FromHost"
    FROM_GPU = "FromGpu"


@dataclass
class GpuState:
    id: int
    busy: bool = False
    loading: Heaviness | None = None
    loading_model: str | None = None
    resident: OrderedDict = field(default_factory=OrderedDict)  # model -> last use (LRU first)
    pinned: dict = field(default_factory=dict)  # model -> pin count


@dataclass
class Decision:
    gpu: int
    swap_kind: SwapKind
    src: int | None = None
    evictions: list = field(default_factory=list)


class NodeState:
    """What the scheduler sees of a node: GPU occupancy and model residency.

    ``hosts`` lists GPUs holding a complete copy of each model; a copy still in
    flight is not a usable source.
    """

    def __init__(self, topology: NodeTopology, heaviness: dict[str, Heaviness] | None = None,
                 footprint: dict[str, int] | None = None):
        self.topology = topology
        self.gpus = [GpuState(g) for g in range(topology.gpu_count)]
        self.hosts: dict[str, set[int]] = {}
        self.heaviness = dict(heaviness or {})
        self.footprint = dict(footprint or {})

    def available(self) -> list[int]:
        return [g.id for g in self.gpus if not g.busy]

    def add_copy(self, model: str, gpu: int, now: float = 0.0) -> None:
        self.hosts.setdefault(model, set()).add(gpu)
        self.gpus[gpu].resident[model] = now
        self.gpus[gpu].resident.move_to_end(model)

    def drop_copy(self, model: str, gpu: int) -> None:
        self.hosts.get(model, set()).discard(gpu)
        self.gpus[gpu].resident.pop(model, None)

    def copies(self, model: str) -> int:
        return len(self.hosts.get(model, ()))

    def pin(self, model: str, gpu: int) -> None:
        p = self.gpus[gpu].pinned
        p[model] = p.get(model, 0) + 1

    def unpin(self, model: str, gpu: int) -> None:
        p = self.gpus[gpu].pinned
        n = p.get(model, 0) - 1
        if n < 0:
            raise InvalidState(f"{model} not pinned on GPU {gpu}")
        if n:
            p[model] = n
        else:
            del p[model]


def touch(model: str, gpu: int, now: float, state: NodeState) -> None:
    res = state.gpus[gpu].resident
    if model not in res:
        raise InvalidState(f"{model} is not resident on GPU {gpu}")
    res[model] = now
    res.move_to_end(model)


def _neighbor_tier(g: int, state: NodeState) -> int:
    loads = [state.gpus[n].loading for n in state.topology.neighbors(g)]
    if all(l is None for l in loads):
        return 0
    if all(l is None or l is Heaviness.LIGHT for l in loads):
        return 1
    return 2


def _host_target(avail: list[int], state: NodeState) -> int:
    return min(avail, key=lambda g: (_neighbor_tier(g, state), g))


def schedule(model: str, state: NodeState) -> Decision:
    """Interference-aware placement.

    1. a free GPU already holding the model runs it directly;
    2. otherwise copy from a busy holder over the fastest NVLink to a free GPU;
    3. otherwise load from host onto a free GPU whose PCIe-switch neighbour is
       not loading, else one whose neighbour loads a light model, else any.
    Ties go to the lowest GPU id, then the lowest (src, dst) pair.
    """
    avail = state.available()
    if not avail:
        raise SchedulingError("no available GPU; request must stay queued")
    holders = state.hosts.get(model, set())
    if holders:
        local = [g for g in avail if g in holders]
        if local:
            return Decision(min(local), SwapKind.NO_SWAP)
        topo = state.topology
        best = None
        for m in sorted(holders):
            for g in avail:
                cls = topo.nvlink_class(m, g)
                if cls == LinkClass.NONE:
                    continue
                key = (-int(cls), m, g)
                if best is None or key < best:
                    best = key
        if best is not None:
            return Decision(best[2], SwapKind.FROM_GPU, src=best[1])
    return Decision(_host_target(avail, state), SwapKind.FROM_HOST)


def schedule_random(model: str, state: NodeState, rng: random.Random) -> Decision:
    """Baseline: reuse a free holder, else host-load onto a uniformly random free GPU."""
    avail = state.available()
    if not avail:
        raise SchedulingError("no available GPU; request must stay queued")
    holders = state.hosts.get(model, set())
    local = [g for g in avail if g in holders]
    if local:
        return Decision(min(local), SwapKind.NO_SWAP)
    return Decision(avail[rng.randrange(len(avail))], SwapKind.FROM_HOST)


def pick_eviction_victims(gpu: int, bytes_needed: int, state: NodeState, *,
                          heaviness_aware: bool = True, capacity: int | None = None) -> list[str]:
    """Minimal LRU-ordered victim prefix freeing at least ``bytes_needed``.

    With ``heaviness_aware`` the sole GPU copies of heavy models are taken only
    after every light model and every replicated heavy model.
    """
    if capacity is not None and bytes_needed > capacity:
        raise InvalidParameter("bytes_needed exceeds the GPU's pooled capacity")
    if bytes_needed <= 0:
        return []
    g = state.gpus[gpu]
    low, high = [], []
    for model in g.resident:
        if model in g.pinned or (g.loading_model == model):
            continue
        if heaviness_aware and state.heaviness.get(model) is Heaviness.HEAVY \
                and state.copies(model) < 2:
            high.append(model)
        else:
            low.append(model)
    victims, freed = [], 0
    for model in low + high:
        victims.append(model)
        freed += state.footprint[model]
        if freed >= bytes_needed:
            return victims
    raise CapacityError(f"GPU {gpu}: evicting everything frees {freed} < {bytes_needed} bytes")


def iter_eviction_order(gpu: int, state: NodeState, *, heaviness_aware: bool = True):
    """Every evictable model on ``gpu`` in victim order."""
    g = state.gpus[gpu]
    low, high = [], []
    for model in g.resident:
        if model in g.pinned or g.loading_model == model:
            continue
        if heaviness_aware and state.heaviness.get(model) is Heaviness.HEAVY \
                and state.copies(model) < 2:
            high.append(model)
        else:
            low.append(model)
    return low + high
