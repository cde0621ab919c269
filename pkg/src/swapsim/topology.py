"""Static interconnect model of a worker node."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidParameter
from .workload import DEFAULT_PCIE_BANDWIDTH, GiB


class LinkClass(enum.IntEnum):
    NONE = 0
    SLOW = 1
    FAST = 2


# NVLink tiers keep the V100 ratio to PCIe (25 and 50 GB/s against 16 GB/s).
DEFAULT_NVLINK_SLOW = DEFAULT_PCIE_BANDWIDTH * 25 / 16
DEFAULT_NVLINK_FAST = 2 * DEFAULT_NVLINK_SLOW
DEFAULT_GPU_MEMORY = 32 * GiB
DEFAULT_FAST_LINKS = ((0, 1), (1, 3), (3, 2), (2, 0))
DEFAULT_SLOW_LINKS = ((0, 3), (1, 2))


@dataclass(frozen=True)
class NodeTopology:
    gpu_count: int
    pcie_groups: tuple[tuple[int, ...], ...]
    pcie_bandwidth: float  # bytes/s per switch uplink
    nvlink: tuple[tuple[LinkClass, ...], ...]
    host_link_bandwidth: float  # bytes/s, host root complex
    nvlink_slow_bandwidth: float = DEFAULT_NVLINK_SLOW
    gpu_memory_bytes: int = DEFAULT_GPU_MEMORY

    def __post_init__(self):
        n = self.gpu_count
        if n < 1:
            raise InvalidParameter("gpu_count must be >= 1")
        members = sorted(g for grp in self.pcie_groups for g in grp)
        if members != list(range(n)):
            raise InvalidParameter("every GPU must belong to exactly one PCIe group")
        if len(self.nvlink) != n or any(len(row) != n for row in self.nvlink):
            raise InvalidParameter("nvlink matrix must be gpu_count x gpu_count")
        for i in range(n):
            if self.nvlink[i][i] != LinkClass.NONE:
                raise InvalidParameter("nvlink diagonal must be NONE")
            for j in range(n):
                if self.nvlink[i][j] != self.nvlink[j][i]:
                    raise InvalidParameter("nvlink matrix must be symmetric")
        if min(self.pcie_bandwidth, self.host_link_bandwidth, self.nvlink_slow_bandwidth) <= 0:
            raise InvalidParameter("bandwidths must be positive")
        if self.gpu_memory_bytes <= 0:
            raise InvalidParameter("gpu_memory_bytes must be positive")
        object.__setattr__(self, "_group_of",
                           {g: gi for gi, grp in enumerate(self.pcie_groups) for g in grp})

    @property
    def nvlink_fast_bandwidth(self) -> float:
        return 2 * self.nvlink_slow_bandwidth

    def _check(self, g: int) -> None:
        if not (isinstance(g, int) and 0 <= g < self.gpu_count):
            raise InvalidParameter(f"GPU id {g!r} out of range")

    def pcie_group(self, g: int) -> int:
        self._check(g)
        return self._group_of[g]

    def nvlink_class(self, g1: int, g2: int) -> LinkClass:
        self._check(g1)
        self._check(g2)
        return self.nvlink[g1][g2]

    def nvlink_bandwidth(self, g1: int, g2: int) -> float:
        cls = self.nvlink_class(g1, g2)
        if cls == LinkClass.FAST:
            return self.nvlink_fast_bandwidth
        if cls == LinkClass.SLOW:
            return self.nvlink_slow_bandwidth
        return 0.0

    def neighbors(self, g: int) -> tuple[int, ...]:
        """GPUs sharing g's PCIe switch."""
        grp = self.pcie_groups[self.pcie_group(g)]
        return tuple(x for x in grp if x != g)


def build_topology(gpu_count: int, pcie_groups: Sequence[Sequence[int]],
                   fast_links: Sequence[tuple[int, int]] = (),
                   slow_links: Sequence[tuple[int, int]] = (), *,
                   pcie_bandwidth: float = DEFAULT_PCIE_BANDWIDTH,
                   host_link_bandwidth: float | None = None,
                   nvlink_slow_bandwidth: float = DEFAULT_NVLINK_SLOW,
                   gpu_memory_bytes: int = DEFAULT_GPU_MEMORY) -> NodeTopology:
    matrix = [[LinkClass.NONE] * gpu_count for _ in range(gpu_count)]
    for cls, links in ((LinkClass.FAST, fast_links), (LinkClass.SLOW, slow_links)):
        for a, b in links:
            if a == b or not (0 <= a < gpu_count and 0 <= b < gpu_count):
                raise InvalidParameter(f"bad NVLink endpoint pair ({a}, {b})")
            if matrix[a][b] != LinkClass.NONE:
                raise InvalidParameter(f"NVLink ({a}, {b}) listed twice")
            matrix[a][b] = matrix[b][a] = cls
    groups = tuple(tuple(sorted(g)) for g in pcie_groups)
    if host_link_bandwidth is None:
        # root complex serves every switch uplink at full rate
        host_link_bandwidth = pcie_bandwidth * len(groups)
    return NodeTopology(gpu_count, groups, float(pcie_bandwidth),
                        tuple(tuple(r) for r in matrix), float(host_link_bandwidth),
                        float(nvlink_slow_bandwidth), int(gpu_memory_bytes))


def default_v100_node(**overrides) -> NodeTopology:
    """4 GPUs, two PCIe switches, fast NVLink ring 0-1-3-2-0 and slow diagonals."""
    kw = dict(fast_links=DEFAULT_FAST_LINKS, slow_links=DEFAULT_SLOW_LINKS)
    kw.update(overrides)
    return build_topology(4, ((0, 1), (2, 3)), **kw)


def single_gpu_node(**overrides) -> NodeTopology:
    return build_topology(1, ((0,),), **overrides)
