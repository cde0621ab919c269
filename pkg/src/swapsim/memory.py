"""Pre-allocated GPU memory pool: partitions, fixed-size block pools and buddy regions.

Each GPU's address space below ``runtime_reserve`` belongs to the shared GPU
runtime; the rest is cut into equal partitions. A partition is unassigned
until first demand, then serves either fixed-size blocks or buddy blocks, and
falls back to unassigned once empty.
"""
from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .errors import (InvalidParameter, InvalidState, InvariantViolation, OutOfMemory,
                     OversizeError, TranslationFault)
from .topology import NodeTopology
from .workload import GiB, MiB, ModelProfile

DEFAULT_PARTITION_SIZE = 256 * MiB
DEFAULT_FIXED_BLOCK = 20 * MiB
DEFAULT_MIN_BUDDY = 2 * MiB
DEFAULT_RUNTIME_RESERVE = 1 * GiB
LOGICAL_BASE = 0x7F00_0000_0000


class PartitionKind(str, enum.Enum):
    UNASSIGNED = "unassigned"
    FIXED = "fixed"
    BUDDY = "buddy"


def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


@dataclass(eq=False)
class Block:
    id: int
    gpu: int
    partition: int
    offset: int  # absolute byte offset in the GPU address space
    size: int  # bytes reserved (power of two for buddy blocks)
    owner: str | None
    requested: int = 0

    @property
    def end(self) -> int:
        return self.offset + self.size


@dataclass(eq=False)
class MemoryPartition:
    gpu: int
    index: int
    base: int
    slot_size: int
    kind: PartitionKind = PartitionKind.UNASSIGNED
    block_size: int = 0
    # fixed pool state
    slots: list = field(default_factory=list)
    free_slots: list = field(default_factory=list)  # min-heap of slot indices
    # buddy state: order -> set of relative offsets
    free_lists: dict = field(default_factory=dict)
    buddy_alloc: dict = field(default_factory=dict)  # relative offset -> Block
    owners: dict = field(default_factory=dict)
    used: int = 0  # bytes reserved by blocks

    @property
    def size(self) -> int:
        if self.kind is PartitionKind.FIXED:
            return len(self.slots) * self.block_size
        return self.slot_size

    @property
    def empty(self) -> bool:
        return self.used == 0

    def free_slot_count(self) -> int:
        return len(self.free_slots)


@dataclass
class Placement:
    owner: str
    gpu: int
    blocks: list[Block]
    partitions: set[int]
    native_calls: int = 0


@dataclass
class Mapping:
    logical_base: int
    size: int
    block: Block


class MemoryManager:
    """Block allocator over a simulated per-GPU address space."""

    native_calls = 0

    def __init__(self, topology: NodeTopology, partition_size: int = DEFAULT_PARTITION_SIZE,
                 fixed_block_size: int = DEFAULT_FIXED_BLOCK, *,
                 runtime_reserve: int = DEFAULT_RUNTIME_RESERVE,
                 min_buddy_block: int = DEFAULT_MIN_BUDDY, checked: bool = False):
        cap = topology.gpu_memory_bytes
        if partition_size <= 0 or fixed_block_size <= 0:
            raise InvalidParameter("partition and block sizes must be positive")
        if runtime_reserve < 0 or runtime_reserve >= cap:
            raise InvalidParameter("runtime reserve must lie in [0, capacity)")
        pool = cap - runtime_reserve
        if pool % partition_size:
            raise InvalidParameter("partition_size must divide the pooled GPU capacity")
        if partition_size & (partition_size - 1):
            raise InvalidParameter("partition_size must be a power of two (buddy regions)")
        if fixed_block_size > partition_size:
            raise InvalidParameter("fixed_block_size must not exceed partition_size")
        if min_buddy_block <= 0 or min_buddy_block & (min_buddy_block - 1) or min_buddy_block > partition_size:
            raise InvalidParameter("min buddy block must be a power of two <= partition_size")
        self.topology = topology
        self.capacity = cap
        self.runtime_reserve = runtime_reserve
        self.partition_size = partition_size
        self.fixed_block_size = fixed_block_size
        self.min_buddy = min_buddy_block
        self.checked = checked
        self.gpu_count = topology.gpu_count
        self.n_partitions = pool // partition_size
        self.partitions: list[list[MemoryPartition]] = [
            [MemoryPartition(g, i, runtime_reserve + i * partition_size, partition_size)
             for i in range(self.n_partitions)]
            for g in range(self.gpu_count)]
        self._unassigned = [list(range(self.n_partitions)) for _ in range(self.gpu_count)]
        self._fixed_by_free: list[dict[int, set[int]]] = [dict() for _ in range(self.gpu_count)]
        self._buddy_parts: list[set[int]] = [set() for _ in range(self.gpu_count)]
        self._owner_parts: list[dict[str, dict]] = [dict() for _ in range(self.gpu_count)]
        self.blocks: dict[int, Block] = {}
        self._ids = itertools.count()
        self.allocated = [0] * self.gpu_count
        self.block_map: dict[tuple[str, int], list[Mapping]] = {}
        self.layouts: dict[str, tuple[int, ...]] = {}
        self.resident: dict[str, set[int]] = {}
        self.host_resident: set[str] = set()
        self.moves = 0

    # -- partition bookkeeping ------------------------------------------------

    def _take_unassigned(self, gpu: int, kind: PartitionKind) -> MemoryPartition | None:
        heap = self._unassigned[gpu]
        if not heap:
            return None
        p = self.partitions[gpu][heapq.heappop(heap)]
        p.kind = kind
        if kind is PartitionKind.FIXED:
            n = self.partition_size // self.fixed_block_size
            p.block_size = self.fixed_block_size
            p.slots = [None] * n
            p.free_slots = list(range(n))
            self._fixed_index(p, None)
        else:
            p.free_lists = {self.partition_size: {0}}
            p.buddy_alloc = {}
            self._buddy_parts[gpu].add(p.index)
        return p

    def _release(self, p: MemoryPartition) -> None:
        if p.kind is PartitionKind.FIXED:
            self._fixed_by_free[p.gpu][len(p.free_slots)].discard(p.index)
        elif p.kind is PartitionKind.BUDDY:
            self._buddy_parts[p.gpu].discard(p.index)
        p.kind = PartitionKind.UNASSIGNED
        p.block_size = 0
        p.slots, p.free_slots, p.free_lists, p.buddy_alloc = [], [], {}, {}
        p.owners = {}
        heapq.heappush(self._unassigned[p.gpu], p.index)

    def _fixed_index(self, p: MemoryPartition, old_free: int | None) -> None:
        idx = self._fixed_by_free[p.gpu]
        if old_free is not None:
            idx[old_free].discard(p.index)
        idx.setdefault(len(p.free_slots), set()).add(p.index)

    def _own(self, p: MemoryPartition, owner: str, delta: int) -> None:
        n = p.owners.get(owner, 0) + delta
        by_owner = self._owner_parts[p.gpu]
        parts = by_owner.get(owner)
        if parts is None:
            parts = by_owner[owner] = {}
        if n > 0:
            p.owners[owner] = n
            parts[p.index] = n
        else:
            p.owners.pop(owner, None)
            parts.pop(p.index, None)
            if not parts:
                del by_owner[owner]

    # -- primitive allocation -------------------------------------------------

    def _fixed_alloc_in(self, p: MemoryPartition, owner: str, requested: int) -> Block:
        return self._fixed_alloc_many(p, owner, 1)[0]

    def _fixed_alloc_many(self, p: MemoryPartition, owner: str, count: int) -> list[Block]:
        """Take the ``count`` lowest free slots of a fixed partition."""
        old = len(p.free_slots)
        out = []
        for _ in range(count):
            slot = heapq.heappop(p.free_slots)
            b = Block(next(self._ids), p.gpu, p.index, p.base + slot * p.block_size,
                      p.block_size, owner, p.block_size)
            p.slots[slot] = b
            self.blocks[b.id] = b
            out.append(b)
        nbytes = count * p.block_size
        p.used += nbytes
        self.allocated[p.gpu] += nbytes
        self._fixed_index(p, old)
        self._own(p, owner, count)
        return out

    def _fixed_free_many(self, p: MemoryPartition, blocks: list[Block]) -> None:
        old = len(p.free_slots)
        for b in blocks:
            slot = (b.offset - p.base) // p.block_size
            if self.blocks.get(b.id) is not b or p.slots[slot] is not b:
                raise InvariantViolation(f"block {b.id} is not allocated (double free?)")
            p.slots[slot] = None
            heapq.heappush(p.free_slots, slot)
            del self.blocks[b.id]
        nbytes = len(blocks) * p.block_size
        p.used -= nbytes
        self.allocated[p.gpu] -= nbytes
        self._fixed_index(p, old)
        for owner in {b.owner for b in blocks}:
            self._own(p, owner, -sum(1 for b in blocks if b.owner == owner))
        if p.empty:
            self._release(p)
        elif self.checked:
            self.check_partition(p)

    @staticmethod
    def _buddy_fit(p: MemoryPartition, size: int) -> int | None:
        return _buddy_order_fit(p.free_lists, size)

    def _buddy_alloc_in(self, p: MemoryPartition, size: int, owner: str, requested: int) -> Block | None:
        rel = _buddy_take(p.free_lists, size)
        if rel is None:
            return None
        b = Block(next(self._ids), p.gpu, p.index, p.base + rel, size, owner, requested)
        p.buddy_alloc[rel] = b
        p.used += size
        self._own(p, owner, 1)
        self.blocks[b.id] = b
        self.allocated[p.gpu] += size
        return b

    def _pick_fixed_partition(self, gpu: int, owner: str) -> MemoryPartition | None:
        parts = self.partitions[gpu]
        # partitions already holding this owner's blocks, most free space first
        best = None
        for pi in self._owner_parts[gpu].get(owner, ()):
            p = parts[pi]
            if p.kind is PartitionKind.FIXED and p.free_slots:
                key = (-len(p.free_slots), pi)
                if best is None or key < best[0]:
                    best = (key, p)
        if best is not None:
            return best[1]
        p = self._take_unassigned(gpu, PartitionKind.FIXED)
        if p is not None:
            return p
        # fall back to the tightest partially-filled pool
        for free in sorted(self._fixed_by_free[gpu]):
            cand = self._fixed_by_free[gpu][free]
            if free > 0 and cand:
                return parts[min(cand)]
        return None

    def _pick_buddy_partition(self, gpu: int, owner: str, size: int) -> MemoryPartition | None:
        parts = self.partitions[gpu]
        for pi in sorted(self._owner_parts[gpu].get(owner, ())):
            p = parts[pi]
            if p.kind is PartitionKind.BUDDY and self._buddy_fit(p, size) is not None:
                return p
        best = None
        for pi in self._buddy_parts[gpu]:
            order = self._buddy_fit(parts[pi], size)
            if order is not None and (best is None or (order, pi) < best[0]):
                best = ((order, pi), parts[pi])
        if best is not None:
            return best[1]
        return self._take_unassigned(gpu, PartitionKind.BUDDY)

    def _check_gpu_id(self, gpu: int) -> None:
        if not (isinstance(gpu, int) and 0 <= gpu < self.gpu_count):
            raise InvalidParameter(f"GPU id {gpu!r} out of range")

    def alloc_block(self, gpu: int, size: int, owner: str) -> Block:
        """Allocate one block; raises OutOfMemory when nothing fits."""
        self._check_gpu_id(gpu)
        if size <= 0:
            raise InvalidParameter("block size must be positive")
        if size > self.partition_size:
            raise OversizeError(f"block of {size} bytes exceeds partition size {self.partition_size}")
        if size == self.fixed_block_size:
            p = self._pick_fixed_partition(gpu, owner)
            if p is None:
                raise OutOfMemory(gpu, size)
            b = self._fixed_alloc_in(p, owner, size)
        else:
            rounded = max(self.min_buddy, next_pow2(size))
            p = self._pick_buddy_partition(gpu, owner, rounded)
            if p is None:
                raise OutOfMemory(gpu, size)
            b = self._buddy_alloc_in(p, rounded, owner, size)
        if self.checked:
            self.check_partition(self.partitions[gpu][b.partition])
        return b

    def free_block(self, block: Block) -> None:
        live = self.blocks.get(block.id)
        if live is None or live is not block:
            raise InvariantViolation(f"block {block.id} is not allocated (double free?)")
        p = self.partitions[block.gpu][block.partition]
        if p.kind is PartitionKind.FIXED:
            slot = (block.offset - p.base) // p.block_size
            if p.slots[slot] is not block:
                raise InvariantViolation("fixed slot does not hold this block")
            old = len(p.free_slots)
            p.slots[slot] = None
            heapq.heappush(p.free_slots, slot)
            self._fixed_index(p, old)
        elif p.kind is PartitionKind.BUDDY:
            rel = block.offset - p.base
            if p.buddy_alloc.pop(rel, None) is not block:
                raise InvariantViolation("buddy map does not hold this block")
            size = block.size
            while size < self.partition_size:
                buddy = rel ^ size
                lst = p.free_lists.get(size)
                if lst and buddy in lst:
                    lst.discard(buddy)
                    rel = min(rel, buddy)
                    size *= 2
                else:
                    break
            p.free_lists.setdefault(size, set()).add(rel)
        else:
            raise InvariantViolation("block lives in an unassigned partition")
        p.used -= block.size
        self._own(p, block.owner, -1)
        del self.blocks[block.id]
        self.allocated[block.gpu] -= block.size
        if p.empty:
            self._release(p)
        elif self.checked:
            self.check_partition(p)

    # -- model-level operations -----------------------------------------------

    def register_model(self, owner: str, model: ModelProfile) -> None:
        """Record the owner's host copy and logical block layout."""
        if owner in self.layouts and self.layouts[owner] != tuple(model.block_spec):
            raise InvalidState(f"{owner} already registered with a different layout")
        self.layouts[owner] = tuple(model.block_spec)
        self.host_resident.add(owner)
        self.resident.setdefault(owner, set())

    def is_resident(self, owner: str, gpu: int) -> bool:
        return gpu in self.resident.get(owner, ())

    def fits(self, block_spec, gpu: int) -> bool:
        """Dry run of ``load_model_blocks`` for an owner with nothing on ``gpu``.

        Mirrors the partition choices of the real allocation on scratch copies,
        so a True answer means the load succeeds.
        """
        fbs = self.fixed_block_size
        per = self.partition_size // fbs
        n_fixed = sum(1 for sz in block_spec if sz == fbs)
        unassigned = len(self._unassigned[gpu])
        fresh = min(unassigned, -(-n_fixed // per))
        unassigned -= fresh
        if n_fixed - fresh * per > sum(f * len(ps) for f, ps in self._fixed_by_free[gpu].items()):
            return False
        parts = self.partitions[gpu]
        scratch: dict = {}  # partition -> copied free lists
        mine: list = []  # buddy partitions this load has touched, in index order
        for sz in block_spec:
            if sz == fbs:
                continue
            size = max(self.min_buddy, next_pow2(sz))
            target = None
            for key in mine:
                if _buddy_order_fit(scratch[key], size) is not None:
                    target = key
                    break
            if target is None:
                best = None
                for pi in self._buddy_parts[gpu]:
                    fl = scratch.get(pi, parts[pi].free_lists)
                    order = _buddy_order_fit(fl, size)
                    if order is not None and (best is None or (order, pi) < best):
                        best = (order, pi)
                if best is not None:
                    target = best[1]
            if target is None:
                if unassigned == 0:
                    return False
                unassigned -= 1
                target = ("new", unassigned)
                scratch[target] = {self.partition_size: {0}}
            if target not in scratch:
                scratch[target] = {o: set(v) for o, v in parts[target].free_lists.items()}
            if target not in mine:
                mine.append(target)
                mine.sort(key=lambda k: k if isinstance(k, int) else self.n_partitions + k[1])
            _buddy_take(scratch[target], size)
        return True

    def load_model_blocks(self, model: ModelProfile, gpu: int, owner: str) -> Placement:
        """Allocate all of the model's blocks on ``gpu``; all-or-nothing."""
        self._check_gpu_id(gpu)
        self.register_model(owner, model)
        if gpu in self.resident[owner]:
            raise InvalidState(f"{owner} already resident on GPU {gpu}")
        spec = model.block_spec
        if any(sz > self.partition_size for sz in spec):
            raise OversizeError(f"{owner}: a block exceeds partition size {self.partition_size}")
        fbs = self.fixed_block_size
        fixed_idx = [i for i, sz in enumerate(spec) if sz == fbs]
        blocks: list = [None] * len(spec)
        got: list[Block] = []
        try:
            pos = 0
            while pos < len(fixed_idx):
                p = self._pick_fixed_partition(gpu, owner)
                if p is None:
                    raise OutOfMemory(gpu, fbs)
                batch = self._fixed_alloc_many(p, owner, min(len(fixed_idx) - pos, len(p.free_slots)))
                if self.checked:
                    self.check_partition(p)
                for b in batch:
                    blocks[fixed_idx[pos]] = b
                    got.append(b)
                    pos += 1
            for i, sz in enumerate(spec):
                if sz != fbs:
                    b = self.alloc_block(gpu, sz, owner)
                    blocks[i] = b
                    got.append(b)
        except OutOfMemory:
            for b in got:
                self.free_block(b)
            raise OutOfMemory(gpu, model.footprint_bytes) from None
        maps = []
        logical = LOGICAL_BASE
        for size, b in zip(spec, blocks):
            m = Mapping(logical, size, b)
            maps.append(m)
            logical += size
        self.block_map[(owner, gpu)] = maps
        self.resident[owner].add(gpu)
        return Placement(owner, gpu, blocks, {b.partition for b in blocks})

    def evict_model(self, owner: str, gpu: int) -> int:
        """Invalidate the GPU copy; the host copy stays. Returns bytes freed."""
        if not self.is_resident(owner, gpu):
            raise InvalidState(f"{owner} is not resident on GPU {gpu}")
        maps = self.block_map.pop((owner, gpu))
        freed = 0
        by_part: dict[int, list[Block]] = {}
        for m in maps:
            by_part.setdefault(m.block.partition, []).append(m.block)
            freed += m.size
        parts = self.partitions[gpu]
        for pi, blocks in by_part.items():
            p = parts[pi]
            if p.kind is PartitionKind.FIXED:
                self._fixed_free_many(p, blocks)
            else:
                for b in blocks:
                    self.free_block(b)
        self.resident[owner].discard(gpu)
        return freed

    def relocate_model(self, model: ModelProfile, owner: str, src: int, dst: int) -> Placement:
        """Move a copy from ``src`` to ``dst`` (load then invalidate)."""
        placement = self.load_model_blocks(model, dst, owner)
        self.evict_model(owner, src)
        return placement

    def translate(self, owner: str, logical_addr: int, gpu: int | None = None) -> tuple[int, int]:
        gpus = sorted(self.resident.get(owner, ())) if gpu is None else [gpu]
        if gpu is None and len(gpus) > 1:
            raise TranslationFault(f"{owner} has copies on GPUs {gpus}; pass gpu=")
        for g in gpus:
            for m in self.block_map.get((owner, g), ()):
                if m.logical_base <= logical_addr < m.logical_base + m.size:
                    return m.block.gpu, m.block.offset + (logical_addr - m.logical_base)
        raise TranslationFault(f"{owner}: address {logical_addr:#x} is not mapped")

    def logical_blocks(self, owner: str) -> list[tuple[int, int]]:
        out, base = [], LOGICAL_BASE
        for size in self.layouts[owner]:
            out.append((base, size))
            base += size
        return out

    # -- statistics -----------------------------------------------------------

    def pool_bytes(self) -> int:
        return self.capacity - self.runtime_reserve

    def free_bytes(self, gpu: int) -> int:
        return self.pool_bytes() - self.allocated[gpu]

    def allocatable_fixed_slots(self, gpu: int) -> int:
        per = self.partition_size // self.fixed_block_size
        return (sum(f * len(s) for f, s in self._fixed_by_free[gpu].items())
                + per * len(self._unassigned[gpu]))

    def free_intervals(self, gpu: int) -> list[tuple[int, int]]:
        iv = []
        for p in self.partitions[gpu]:
            if p.kind is PartitionKind.UNASSIGNED:
                iv.append((p.base, p.base + p.slot_size))
            elif p.kind is PartitionKind.FIXED:
                for s, b in enumerate(p.slots):
                    if b is None:
                        iv.append((p.base + s * p.block_size, p.base + (s + 1) * p.block_size))
                tail = p.base + len(p.slots) * p.block_size
                if tail < p.base + p.slot_size:
                    iv.append((tail, p.base + p.slot_size))
            else:
                for order, offs in p.free_lists.items():
                    for r in offs:
                        iv.append((p.base + r, p.base + r + order))
        iv.sort()
        merged = []
        for a, b in iv:
            if merged and merged[-1][1] == a:
                merged[-1] = (merged[-1][0], b)
            else:
                merged.append((a, b))
        return merged

    def fragmentation(self, gpu: int) -> float:
        """Largest contiguous free run divided by total free bytes (1.0 = unfragmented)."""
        iv = self.free_intervals(gpu)
        total = sum(b - a for a, b in iv)
        if total == 0:
            return 1.0
        return max(b - a for a, b in iv) / total

    def stats(self) -> dict:
        return {
            "allocated_bytes": list(self.allocated),
            "fragmentation": [round(self.fragmentation(g), 6) for g in range(self.gpu_count)],
            "native_alloc_calls": self.native_calls,
            "relocated_blocks": self.moves,
        }

    # -- consolidation --------------------------------------------------------

    def _plan_fixed(self, src: MemoryPartition, others: list[MemoryPartition]):
        heaps = {p.index: list(p.free_slots) for p in others}
        owners = {p.index: set(p.owners) for p in others}
        plan = []
        for b in [b for b in src.slots if b is not None]:
            cands = [p for p in others if heaps[p.index]]
            if not cands:
                return None
            # same-owner partitions first, then the fullest
            dst = min(cands, key=lambda p: (b.owner not in owners[p.index],
                                            len(heaps[p.index]), p.index))
            slot = heapq.heappop(heaps[dst.index])
            owners[dst.index].add(b.owner)
            plan.append((b, dst, dst.base + slot * dst.block_size))
        return plan

    def _plan_buddy(self, src: MemoryPartition, others: list[MemoryPartition]):
        lists = {p.index: {o: set(s) for o, s in p.free_lists.items()} for p in others}
        used = {p.index: p.used for p in others}
        owners = {p.index: set(p.owners) for p in others}
        plan = []
        for b in sorted(src.buddy_alloc.values(), key=lambda b: (-b.size, b.offset)):
            dst = rel = None
            for p in sorted(others, key=lambda p: (b.owner not in owners[p.index],
                                                   -used[p.index], p.index)):
                rel = _buddy_take(lists[p.index], b.size)
                if rel is not None:
                    dst = p
                    break
            if dst is None:
                return None
            used[dst.index] += b.size
            owners[dst.index].add(b.owner)
            plan.append((b, dst, dst.base + rel))
        return plan

    def _frag_after(self, gpu: int, src: MemoryPartition, plan) -> float:
        iv = [(a, b) for a, b in self.free_intervals(gpu)
              if not (src.base <= a < src.base + src.slot_size)]
        taken = sorted((off, off + b.size) for b, _, off in plan)
        out = []
        for a, b in iv:
            cur = a
            for ta, tb in taken:
                if tb <= cur or ta >= b:
                    continue
                if ta > cur:
                    out.append((cur, ta))
                cur = max(cur, tb)
            if cur < b:
                out.append((cur, b))
        out.append((src.base, src.base + src.slot_size))
        out.sort()
        merged = []
        for a, b in out:
            if merged and merged[-1][1] == a:
                merged[-1] = (merged[-1][0], b)
            else:
                merged.append((a, b))
        total = sum(b - a for a, b in merged)
        return max(b - a for a, b in merged) / total if total else 1.0

    def _commit(self, plan) -> None:
        for b, dst, off in plan:
            if dst.kind is PartitionKind.FIXED:
                nb = self._fixed_alloc_in(dst, b.owner, b.requested)
            else:
                nb = self._buddy_alloc_in(dst, b.size, b.owner, b.requested)
            if nb is None or nb.offset != off:
                raise InvariantViolation("consolidation plan diverged from allocator")
            self.free_block(b)
            # keep the caller's Block object valid: it takes over the new location
            b.partition, b.offset = nb.partition, nb.offset
            if dst.kind is PartitionKind.FIXED:
                dst.slots[(off - dst.base) // dst.block_size] = b
            else:
                dst.buddy_alloc[off - dst.base] = b
            del self.blocks[nb.id]
            self.blocks[b.id] = b
            self.moves += 1

    def consolidate(self, gpu: int) -> int:
        """Evacuate sparsely used partitions into others; returns blocks moved.

        An evacuation is committed only if it leaves the largest-free-run ratio
        no lower than before.
        """
        self._check_gpu_id(gpu)
        moved = 0
        parts = self.partitions[gpu]
        for kind, planner in ((PartitionKind.FIXED, self._plan_fixed),
                              (PartitionKind.BUDDY, self._plan_buddy)):
            tried: set[int] = set()
            while True:
                live = [p for p in parts if p.kind is kind]
                cands = [p for p in live if p.index not in tried]
                if len(live) < 2 or not cands:
                    break
                src = min(cands, key=lambda p: (p.used, -p.index))
                tried.add(src.index)
                plan = planner(src, [p for p in live if p is not src])
                if plan is None:
                    continue
                if self._frag_after(gpu, src, plan) < self.fragmentation(gpu) - 1e-12:
                    continue
                self._commit(plan)
                moved += len(plan)
                tried.clear()
        if self.checked:
            self.check_gpu(gpu)
        return moved

    # -- invariant checks -----------------------------------------------------

    def check_partition(self, p: MemoryPartition) -> None:
        end = p.base + p.slot_size
        if p.kind is PartitionKind.UNASSIGNED:
            if p.used or p.owners:
                raise InvariantViolation(f"unassigned partition {p.index} holds data")
            return
        if p.kind is PartitionKind.FIXED:
            if p.size % p.block_size or p.size > p.slot_size:
                raise InvariantViolation("fixed pool size is not a multiple of its block size")
            used = 0
            free = set(p.free_slots)
            for s, b in enumerate(p.slots):
                if b is None:
                    if s not in free:
                        raise InvariantViolation("empty slot missing from free list")
                    continue
                if s in free:
                    raise InvariantViolation("occupied slot on free list")
                if b.offset != p.base + s * p.block_size or b.size != p.block_size:
                    raise InvariantViolation("fixed block misplaced")
                if self.blocks.get(b.id) is not b:
                    raise InvariantViolation("slot holds a dead block")
                used += b.size
            if len(free) != len(p.free_slots):
                raise InvariantViolation("duplicate free slot")
        else:
            if p.slot_size & (p.slot_size - 1):
                raise InvariantViolation("buddy partition size is not a power of two")
            spans = []
            for rel, b in p.buddy_alloc.items():
                if b.size & (b.size - 1) or rel % b.size or b.offset != p.base + rel:
                    raise InvariantViolation("buddy block misaligned")
                spans.append((rel, rel + b.size, b))
            for order, offs in p.free_lists.items():
                for rel in offs:
                    if rel % order:
                        raise InvariantViolation("free buddy misaligned")
                    if order < p.slot_size and (rel ^ order) in offs:
                        raise InvariantViolation("two free sibling buddies were not merged")
                    spans.append((rel, rel + order, None))
            spans.sort(key=lambda s: s[0])
            cursor = 0
            for a, b, _ in spans:
                if a != cursor:
                    raise InvariantViolation(f"buddy partition {p.index} overlap or gap at {a}")
                cursor = b
            if cursor != p.slot_size:
                raise InvariantViolation("buddy partition not fully tiled")
            used = sum(b.size for b in p.buddy_alloc.values())
        if used != p.used:
            raise InvariantViolation("partition usage counter drifted")
        if p.base + p.size > end:
            raise InvariantViolation("partition exceeds its slot")

    def check_gpu(self, gpu: int) -> None:
        total = 0
        for p in self.partitions[gpu]:
            self.check_partition(p)
            total += p.used
        if total != self.allocated[gpu]:
            raise InvariantViolation("allocated-bytes counter drifted")
        free = sum(b - a for a, b in self.free_intervals(gpu))
        if total + free != self.pool_bytes():
            raise InvariantViolation("allocated + free != pooled capacity")
        for (owner, g), maps in self.block_map.items():
            if g != gpu:
                continue
            for m in maps:
                b = m.block
                if self.blocks.get(b.id) is not b or b.owner != owner or b.gpu != gpu:
                    raise InvariantViolation("block map points at a foreign or dead block")
                if m.size > b.size:
                    raise InvariantViolation("mapped range exceeds its block")

    def check_all(self) -> None:
        for g in range(self.gpu_count):
            self.check_gpu(g)


def init_pool(topology: NodeTopology, partition_size: int = DEFAULT_PARTITION_SIZE,
              fixed_block_size: int = DEFAULT_FIXED_BLOCK, **kw) -> MemoryManager:
    return MemoryManager(topology, partition_size, fixed_block_size, **kw)


class NativeCachingAllocator:
    """Single cache of released blocks, falling back to native allocation calls.

    Used by the block-management ablation: a cached block is reused only for an
    exact size match; otherwise idle cached blocks are released one native call
    at a time until a native allocation of the requested size fits.
    """

    def __init__(self, topology: NodeTopology, *, runtime_reserve: int = DEFAULT_RUNTIME_RESERVE):
        self.topology = topology
        self.gpu_count = topology.gpu_count
        self.capacity = topology.gpu_memory_bytes
        self.runtime_reserve = runtime_reserve
        self.held = [0] * self.gpu_count  # natively allocated (in use + cached)
        self.allocated = [0] * self.gpu_count
        self._cache: list[dict[int, list[int]]] = [dict() for _ in range(self.gpu_count)]
        self._cache_order: list[dict[int, int]] = [dict() for _ in range(self.gpu_count)]
        self._ids = itertools.count()
        self.block_map: dict[tuple[str, int], list[tuple[int, int]]] = {}
        self.resident: dict[str, set[int]] = {}
        self.host_resident: set[str] = set()
        self.native_calls = 0

    def pool_bytes(self) -> int:
        return self.capacity - self.runtime_reserve

    def free_bytes(self, gpu: int) -> int:
        return self.pool_bytes() - self.allocated[gpu]

    def fits(self, block_spec, gpu: int) -> bool:
        return self.allocated[gpu] + sum(block_spec) <= self.pool_bytes()

    def register_model(self, owner: str, model: ModelProfile) -> None:
        self.host_resident.add(owner)
        self.resident.setdefault(owner, set())

    def is_resident(self, owner: str, gpu: int) -> bool:
        return gpu in self.resident.get(owner, ())

    def _alloc(self, gpu: int, size: int) -> tuple[tuple[int, int], int]:
        cache = self._cache[gpu]
        if cache.get(size):
            bid = cache[size].pop()
            del self._cache_order[gpu][bid]
            return (bid, size), 0
        calls = 0
        order = self._cache_order[gpu]
        while self.pool_bytes() - self.held[gpu] < size and order:
            bid = next(iter(order))
            sz = order.pop(bid)
            cache[sz].remove(bid)
            self.held[gpu] -= sz
            calls += 1
        if self.pool_bytes() - self.held[gpu] < size:
            raise OutOfMemory(gpu, size)
        self.held[gpu] += size
        return (next(self._ids), size), calls + 1

    def _release(self, gpu: int, blk: tuple[int, int]) -> None:
        bid, size = blk
        self._cache[gpu].setdefault(size, []).append(bid)
        self._cache_order[gpu][bid] = size

    def load_model_blocks(self, model: ModelProfile, gpu: int, owner: str) -> Placement:
        self.register_model(owner, model)
        if gpu in self.resident[owner]:
            raise InvalidState(f"{owner} already resident on GPU {gpu}")
        if self.allocated[gpu] + model.footprint_bytes > self.pool_bytes():
            raise OutOfMemory(gpu, model.footprint_bytes)
        got, calls = [], 0
        try:
            for size in model.block_spec:
                blk, c = self._alloc(gpu, size)
                got.append(blk)
                calls += c
        except OutOfMemory:
            for blk in got:
                self._release(gpu, blk)
            self.native_calls += calls
            raise
        self.allocated[gpu] += model.footprint_bytes
        self.block_map[(owner, gpu)] = got
        self.resident[owner].add(gpu)
        self.native_calls += calls
        return Placement(owner, gpu, [], set(), native_calls=calls)

    def evict_model(self, owner: str, gpu: int) -> int:
        if not self.is_resident(owner, gpu):
            raise InvalidState(f"{owner} is not resident on GPU {gpu}")
        freed = 0
        for blk in self.block_map.pop((owner, gpu)):
            self._release(gpu, blk)
            freed += blk[1]
        self.allocated[gpu] -= freed
        self.resident[owner].discard(gpu)
        return freed

    def consolidate(self, gpu: int) -> int:
        return 0

    def fragmentation(self, gpu: int) -> float:
        return 1.0

    def stats(self) -> dict:
        return {
            "allocated_bytes": list(self.allocated),
            "fragmentation": [1.0] * self.gpu_count,
            "native_alloc_calls": self.native_calls,
            "relocated_blocks": 0,
        }


def _buddy_order_fit(free_lists: dict, size: int) -> int | None:
    """Smallest free order that can host ``size``."""
    best = None
    for order, offs in free_lists.items():
        if offs and order >= size and (best is None or order < best):
            best = order
    return best


def _buddy_take(free_lists: dict, size: int) -> int | None:
    """Pop the lowest free block of the smallest sufficient order, splitting to ``size``."""
    best = _buddy_order_fit(free_lists, size)
    if best is None:
        return None
    offs = free_lists[best]
    rel = min(offs)
    offs.discard(rel)
    order = best
    while order > size:
        order //= 2
        free_lists.setdefault(order, set()).add(rel + order)
    return rel


class FirstFitAllocator:
    """Naive first-fit over one flat region; reference for differential tests."""

    def __init__(self, size: int):
        self.size = size
        self.live: dict[int, tuple[int, int]] = {}
        self._ids = itertools.count()

    def alloc(self, size: int) -> int | None:
        cursor = 0
        for a, b in sorted(self.live.values()):
            if a - cursor >= size:
                break
            cursor = b
        else:
            if cursor + size > self.size:
                return None
        bid = next(self._ids)
        self.live[bid] = (cursor, cursor + size)
        return bid

    def free(self, bid: int) -> None:
        del self.live[bid]
