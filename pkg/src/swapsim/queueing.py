"""SLO-aware request queues: required request count, alpha partitioning, alpha tuning."""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidParameter

SPLIT_POSITIVE_FIRST = "split_positive_first"
PURE_REVERSE = "pure_reverse"
HIGH_ORDERS = (SPLIT_POSITIVE_FIRST, PURE_REVERSE)


def rrc(n: int, m: int, p: float) -> float:
    """Extra in-deadline requests needed before the p-tail meets the deadline."""
    if not 0 < p < 1:
        raise InvalidParameter(f"tail percentile {p} outside (0, 1)")
    if not 0 <= m <= n:
        raise InvalidParameter("need 0 <= m <= n")
    return (p * n - m) / (1 - p)


@dataclass
class FunctionSloState:
    function_id: str
    p: float = 0.98
    n: int = 0
    m: int = 0
    avg_latency_ms: float | None = None
    prior_latency_ms: float = 1.0  # used until the first completion
    served: int = 0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise InvalidParameter(f"{self.function_id}: tail percentile must be in (0, 1)")

    def record_served(self, latency_ms: float, in_deadline: bool, counted: bool = True) -> None:
        """A completion; ``counted`` is False when the request already expired."""
        if counted:
            self.n += 1
            self.m += int(in_deadline)
        self.served += 1
        if self.avg_latency_ms is None:
            self.avg_latency_ms = latency_ms
        else:
            self.avg_latency_ms += (latency_ms - self.avg_latency_ms) / self.served

    def record_expired(self) -> None:
        self.n += 1


def normalized_rrc(state: FunctionSloState) -> float:
    avg = state.avg_latency_ms if state.avg_latency_ms is not None else state.prior_latency_ms
    r = rrc(state.n, state.m, state.p)
    return 0.0 if r == 0 else r * avg


def partition(ranked: Sequence[tuple[str, float]], alpha: float) -> tuple[list[str], list[str]]:
    """Split functions sorted ascending by normalized RRC into (high, low).

    High is the longest prefix whose positive-part sum stays within
    ``alpha`` times the total positive-part sum.
    """
    if not 0 <= alpha <= 1:
        raise InvalidParameter(f"alpha {alpha} outside [0, 1]")
    total = sum(max(r, 0.0) for _, r in ranked)
    budget = alpha * total
    acc, k = 0.0, 0
    for _, r in ranked:
        acc += max(r, 0.0)
        # relative slack so alpha=1 keeps everything despite summation order
        if acc > budget + 1e-12 * max(total, 1.0):
            break
        k += 1
    ids = [f for f, _ in ranked]
    return ids[:k], ids[k:]


def auto_config_alpha(alpha: float, last_ratio: float, new_ratio: float,
                      scalar: float = 2.0, threshold: float = 0.04) -> float:
    """Multiplicative increase/decrease of alpha on SLO-ratio movement."""
    if scalar <= 1:
        raise InvalidParameter("scalar must be > 1")
    if threshold < 0:
        raise InvalidParameter("threshold must be >= 0")
    if not (0 <= last_ratio <= 1 and 0 <= new_ratio <= 1):
        raise InvalidParameter("SLO ratios must lie in [0, 1]")
    delta = new_ratio - last_ratio
    if delta > threshold:
        return min(alpha * scalar, 1.0)
    if delta < -threshold:
        return alpha / scalar
    return alpha


def high_key(r: float, fid: str, order: str = SPLIT_POSITIVE_FIRST) -> tuple:
    if order == PURE_REVERSE:
        return (-r, fid)
    return (0, r, fid) if r > 0 else (1, -r, fid)


def low_key(r: float, fid: str) -> tuple:
    return (r, fid)


class PriorityQueues:
    """Two queues keyed by function; requests of one function stay FIFO.

    Keys are refreshed whenever a function's SLO counters change, with stale
    heap entries discarded lazily.
    """

    def __init__(self, alpha: float = 0.5, high_order: str = SPLIT_POSITIVE_FIRST):
        if not 0 <= alpha <= 1:
            raise InvalidParameter("alpha must be in [0, 1]")
        if high_order not in HIGH_ORDERS:
            raise InvalidParameter(f"high_order must be one of {HIGH_ORDERS}")
        self.alpha = alpha
        self.high_order = high_order
        self.states: dict[str, FunctionSloState] = {}
        self.high: set[str] = set()
        self.pending: dict[str, deque] = {}
        self._version: dict[str, int] = {}
        self._heaps = ([], [])  # high, low
        self._size = 0

    def register(self, state: FunctionSloState) -> None:
        self.states[state.function_id] = state
        self.pending.setdefault(state.function_id, deque())
        self._version.setdefault(state.function_id, 0)
        # cold functions sit at the boundary with RRC 0, which always fits the budget
        self.high.add(state.function_id)

    def __len__(self) -> int:
        return self._size

    def key_of(self, fid: str) -> tuple[int, tuple]:
        r = normalized_rrc(self.states[fid])
        if fid in self.high:
            return 0, high_key(r, fid, self.high_order)
        return 1, low_key(r, fid)

    def _push_entry(self, fid: str) -> None:
        self._version[fid] += 1
        which, key = self.key_of(fid)
        heapq.heappush(self._heaps[which], (key, self._version[fid], fid))

    def push(self, request) -> None:
        q = self.pending[request.function_id]
        q.append(request)
        self._size += 1
        if len(q) == 1:
            self._push_entry(request.function_id)

    def refresh(self, fid: str) -> None:
        """Re-key ``fid`` after its SLO counters changed."""
        if self.pending[fid]:
            self._push_entry(fid)

    def remove(self, request) -> bool:
        q = self.pending[request.function_id]
        try:
            q.remove(request)
        except ValueError:
            return False
        self._size -= 1
        return True

    def next_request(self):
        for heap in self._heaps:
            while heap:
                _, ver, fid = heap[0]
                q = self.pending[fid]
                if ver != self._version[fid] or not q:
                    heapq.heappop(heap)
                    continue
                self._size -= 1
                return q.popleft()
        return None

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(((f, normalized_rrc(s)) for f, s in self.states.items()),
                      key=lambda t: (t[1], t[0]))

    def repartition(self) -> tuple[int, int]:
        high, low = partition(self.ranked(), self.alpha)
        self.high = set(high)
        self._heaps = ([], [])
        for fid, q in self.pending.items():
            if q:
                self._push_entry(fid)
        return len(high), len(low)


class FifoQueue:
    """Single arrival-order queue (ablation)."""

    def __init__(self):
        self._q: deque = deque()
        self.states: dict[str, FunctionSloState] = {}
        self.alpha = 1.0
        self.high: set[str] = set()

    def register(self, state: FunctionSloState) -> None:
        self.states[state.function_id] = state

    def __len__(self) -> int:
        return len(self._q)

    def push(self, request) -> None:
        self._q.append(request)

    def refresh(self, fid: str) -> None:
        pass

    def remove(self, request) -> bool:
        try:
            self._q.remove(request)
        except ValueError:
            return False
        return True

    def next_request(self):
        return self._q.popleft() if self._q else None

    def repartition(self) -> tuple[int, int]:
        return len(self.states), 0


def tail_latency(samples: Iterable[float], p: float) -> float:
    """Nearest-rank p-quantile: the smallest sample with at least p of samples at or below it."""
    xs = sorted(samples)
    if not xs:
        return math.nan
    k = max(1, math.ceil(p * len(xs) - 1e-9))
    return xs[k - 1]
