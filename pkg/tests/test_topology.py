import dataclasses

import pytest

from swapsim.errors import InvalidParameter
from swapsim.topology import LinkClass, build_topology, default_v100_node, single_gpu_node
from swapsim.workload import GiB


def test_default_node_shape():
    t = default_v100_node()
    assert t.gpu_count == 4
    assert t.gpu_memory_bytes == 32 * GiB
    assert t.nvlink_class(0, 0) is LinkClass.NONE
    assert t.nvlink_fast_bandwidth / t.nvlink_slow_bandwidth == 2.0


def test_default_node_groups_and_links():
    t = default_v100_node()
    assert t.pcie_group(0) == t.pcie_group(1) != t.pcie_group(2) == t.pcie_group(3)
    assert t.neighbors(0) == (1,) and t.neighbors(3) == (2,)
    for a in range(4):
        for b in range(4):
            assert t.nvlink_class(a, b) == t.nvlink_class(b, a)
            if a != b:
                assert t.nvlink_class(a, b) != LinkClass.NONE
        assert any(t.nvlink_class(a, b) is LinkClass.FAST for b in range(4))


def test_host_link_serves_all_switches():
    t = default_v100_node()
    assert t.host_link_bandwidth == 2 * t.pcie_bandwidth


def test_custom_two_gpu_without_nvlink():
    t = build_topology(2, ((0, 1),))
    assert t.nvlink_class(0, 1) is LinkClass.NONE
    assert t.nvlink_bandwidth(0, 1) == 0.0


def test_out_of_range_ids_rejected():
    t = default_v100_node()
    with pytest.raises(InvalidParameter):
        t.pcie_group(4)
    with pytest.raises(InvalidParameter):
        t.nvlink_class(-1, 0)


def test_construction_validates_invariants():
    with pytest.raises(InvalidParameter):
        build_topology(3, ((0, 1),))
    with pytest.raises(InvalidParameter):
        build_topology(2, ((0, 1),), fast_links=((0, 0),))
    with pytest.raises(InvalidParameter):
        build_topology(2, ((0, 1),), fast_links=((0, 1),), slow_links=((1, 0),))
    with pytest.raises(InvalidParameter):
        build_topology(2, ((0,), (1,)), pcie_bandwidth=0)


def test_topology_is_immutable():
    t = single_gpu_node()
    with pytest.raises(dataclasses.FrozenInstanceError):
        t.gpu_count = 2
