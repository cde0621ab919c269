import itertools
import random

import pytest
from hypothesis import given, strategies as st

from oracles import reference_schedule
from swapsim.errors import CapacityError, InvalidParameter, InvalidState, SchedulingError
from swapsim.scheduler import (NodeState, SwapKind, iter_eviction_order, pick_eviction_victims,
                               schedule, schedule_random, touch)
from swapsim.topology import build_topology, default_v100_node
from swapsim.workload import Heaviness

H, L = Heaviness.HEAVY, Heaviness.LIGHT


def node(**kw):
    return NodeState(default_v100_node(), **kw)


def test_resident_on_idle_gpu_runs_in_place():
    st_ = node()
    st_.add_copy("m", 2)
    assert (schedule("m", st_).gpu, schedule("m", st_).swap_kind) == (2, SwapKind.NO_SWAP)


def test_busy_holder_copies_over_fastest_nvlink():
    st_ = node()
    st_.add_copy("m", 0)
    st_.gpus[0].busy = True
    st_.gpus[2].busy = True  # leaves GPU1 (fast link to 0) and GPU3 (slow link to 0)
    d = schedule("m", st_)
    assert (d.gpu, d.swap_kind, d.src) == (1, SwapKind.FROM_GPU, 0)


def test_host_load_avoids_loading_neighbour():
    st_ = node()
    st_.gpus[1].busy = True
    st_.gpus[1].loading = H
    st_.gpus[3].busy = True
    d = schedule("bert", st_)
    assert (d.gpu, d.swap_kind) == (2, SwapKind.FROM_HOST)


def test_host_load_prefers_light_loading_neighbour_over_heavy():
    st_ = node()
    for g, h in ((1, H), (3, L)):
        st_.gpus[g].busy = True
        st_.gpus[g].loading = h
    assert schedule("m", st_).gpu == 2


def test_no_available_gpu_is_scheduling_error():
    st_ = node()
    for g in st_.gpus:
        g.busy = True
    with pytest.raises(SchedulingError):
        schedule("m", st_)


def states(topology):
    n = topology.gpu_count
    for busy in itertools.product((False, True), repeat=n):
        for loading in itertools.product((None, "light", "heavy"), repeat=n):
            for res in itertools.product((False, True), repeat=n):
                yield busy, loading, {g for g in range(n) if res[g]}


def to_node(topology, busy, loading, holders):
    s = NodeState(topology)
    for g in range(topology.gpu_count):
        s.gpus[g].busy = busy[g]
        s.gpus[g].loading = {None: None, "light": L, "heavy": H}[loading[g]]
    for g in holders:
        s.add_copy("m", g)
    return s


def decide(s):
    try:
        d = schedule("m", s)
    except SchedulingError:
        return None
    return d.gpu, d.swap_kind.value, d.src


def test_matches_reference_on_three_gpu_universe():
    topo = build_topology(3, ((0, 1), (2,)), fast_links=((0, 1),), slow_links=((1, 2),))
    for busy, loading, holders in states(topo):
        assert decide(to_node(topo, busy, loading, holders)) == \
            reference_schedule(topo, busy, loading, holders)


@given(st.lists(st.booleans(), min_size=4, max_size=4),
       st.lists(st.sampled_from([None, "light", "heavy"]), min_size=4, max_size=4),
       st.sets(st.integers(0, 3)))
def test_matches_reference_on_default_node(busy, loading, holders):
    topo = default_v100_node()
    assert decide(to_node(topo, busy, loading, holders)) == \
        reference_schedule(topo, busy, loading, holders)


def test_random_baseline_is_seeded_and_never_copies():
    s = node()
    s.gpus[0].busy = s.gpus[2].busy = True
    picks = [schedule_random("m", s, random.Random(9)).gpu for _ in range(3)]
    assert len(set(picks)) == 1 and picks[0] in (1, 3)
    s.add_copy("m", 0)
    for seed in range(50):
        assert schedule_random("m", s, random.Random(seed)).swap_kind is SwapKind.FROM_HOST
    s.add_copy("m", 3)
    assert schedule_random("m", s, random.Random(0)).swap_kind is SwapKind.NO_SWAP


def eviction_node():
    return node(heaviness={"A": L, "B": H, "C": H, "D": L, "E": L},
                footprint={"A": 100, "B": 300, "C": 200, "D": 50, "E": 70})


def test_light_evicted_before_sole_heavy_copy():
    s = eviction_node()
    s.add_copy("B", 0, now=0)
    s.add_copy("A", 0, now=1)
    assert pick_eviction_victims(0, 50, s) == ["A"]


def test_replicated_heavy_is_low_priority():
    s = eviction_node()
    s.add_copy("C", 0, now=0)
    s.add_copy("A", 0, now=1)
    s.add_copy("C", 2, now=0)
    assert pick_eviction_victims(0, 10, s) == ["C"]


def test_lru_order_within_group_and_minimal_prefix():
    s = eviction_node()
    s.add_copy("D", 0, now=3)
    s.add_copy("E", 0, now=7)
    s.add_copy("A", 0, now=9)
    assert pick_eviction_victims(0, 60, s) == ["D", "E"]
    assert pick_eviction_victims(0, 50, s) == ["D"]


def test_in_use_and_loading_models_are_skipped():
    s = eviction_node()
    s.add_copy("D", 0, now=1)
    s.add_copy("E", 0, now=2)
    s.add_copy("A", 0, now=3)
    s.pin("D", 0)
    s.gpus[0].loading_model = "E"
    assert pick_eviction_victims(0, 10, s) == ["A"]
    with pytest.raises(CapacityError):
        pick_eviction_victims(0, 1000, s)


def test_victim_request_above_capacity_rejected():
    with pytest.raises(InvalidParameter):
        pick_eviction_victims(0, 2000, eviction_node(), capacity=1000)


def test_plain_lru_ignores_heaviness():
    s = eviction_node()
    s.add_copy("B", 0, now=0)
    s.add_copy("A", 0, now=1)
    assert pick_eviction_victims(0, 10, s, heaviness_aware=False) == ["B"]


def test_touch_moves_model_to_back_of_its_group():
    s = eviction_node()
    s.add_copy("D", 0, now=1)
    s.add_copy("E", 0, now=2)
    touch("D", 0, 5, s)
    touch("D", 0, 8, s)
    assert iter_eviction_order(0, s) == ["E", "D"]
    assert s.gpus[0].resident["D"] == 8
    s.drop_copy("D", 0)
    with pytest.raises(InvalidState):
        touch("D", 0, 9, s)


@given(st.lists(st.tuples(st.sampled_from("ABCDE"), st.integers(0, 100)), min_size=1, max_size=5,
                unique_by=lambda x: x[0]),
       st.integers(1, 720))
def test_victims_form_minimal_prefix(models, need):
    s = eviction_node()
    for m, t in sorted(models, key=lambda x: x[1]):
        s.add_copy(m, 0, now=t)
    try:
        v = pick_eviction_victims(0, need, s)
    except CapacityError:
        assert sum(s.footprint[m] for m, _ in models) < need
        return
    assert v == iter_eviction_order(0, s)[:len(v)]
    assert sum(s.footprint[m] for m in v) >= need
    assert sum(s.footprint[m] for m in v[:-1]) < need
