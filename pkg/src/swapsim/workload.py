"""Model catalog, function definitions and request traces."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameter, ParseError, ReferenceError_

MiB = 1 << 20
GiB = 1 << 30

DEFAULT_SLOWDOWN_THRESHOLD = 1.25
DEFAULT_FIXED_BLOCK = 20 * MiB
# Effective host->GPU swap throughput; pinned staging copy is folded in.
DEFAULT_PCIE_BANDWIDTH = 2 * GiB
DEFAULT_GROUP_SIZE = 2 * MiB

CATALOG_HEADER = ["name", "exec_ms", "nonpipeline_ms", "footprint_bytes", "transfer_bytes"]
TRACE_HEADER = ["arrival_ms", "function_id"]
CATALOG_VERSION_LINE = "# swapsim catalog v1"
TRACE_VERSION_LINE = "# swapsim trace v1"


class Heaviness(str, enum.Enum):
    HEAVY = "Heavy"
    LIGHT = "Light"


def synthesize_blocks(footprint_bytes: int, block_size: int = DEFAULT_FIXED_BLOCK) -> tuple[int, ...]:
    """Fixed-size blocks filling the footprint, plus one remainder block."""
    if footprint_bytes <= 0 or block_size <= 0:
        raise InvalidParameter("footprint and block size must be positive")
    full, rem = divmod(footprint_bytes, block_size)
    blocks = [block_size] * full
    if rem:
        blocks.append(rem)
    return tuple(blocks)


def calibrate_transfer_bytes(exec_ms: float, nonpipeline_ms: float,
                             bandwidth: float = DEFAULT_PCIE_BANDWIDTH) -> int:
    """Bytes such that exec + bytes / bandwidth equals the non-pipelined latency."""
    if nonpipeline_ms <= exec_ms:
        raise InvalidParameter("non-pipelined latency must exceed execution latency")
    return max(1, round((nonpipeline_ms - exec_ms) * bandwidth / 1000.0))


@dataclass(frozen=True)
class ModelProfile:
    name: str
    exec_latency: float  # ms, warm execution with remoting
    footprint_bytes: int
    transfer_bytes: int
    nonpipeline_latency: float  # ms
    heaviness: Heaviness = Heaviness.LIGHT
    block_spec: tuple[int, ...] = ()
    cold_start_ms: float = 8000.0

    def __post_init__(self):
        if self.exec_latency <= 0:
            raise InvalidParameter(f"{self.name}: exec_latency must be > 0")
        if self.footprint_bytes <= 0:
            raise InvalidParameter(f"{self.name}: footprint_bytes must be > 0")
        if not 0 < self.transfer_bytes <= self.footprint_bytes:
            raise InvalidParameter(f"{self.name}: need 0 < transfer_bytes <= footprint_bytes")
        if not self.block_spec:
            object.__setattr__(self, "block_spec", synthesize_blocks(self.footprint_bytes))
        if sum(self.block_spec) != self.footprint_bytes:
            raise InvalidParameter(f"{self.name}: block_spec does not sum to footprint_bytes")

    @property
    def transfer_ms(self) -> float:
        return self.nonpipeline_latency - self.exec_latency


def pipeline_pcie_latency(profile: ModelProfile,
                          bandwidth: float = DEFAULT_PCIE_BANDWIDTH,
                          group_size: int = DEFAULT_GROUP_SIZE) -> float:
    from .transfer import group_count, pipeline_latency

    t_transfer = profile.transfer_bytes / bandwidth * 1000.0
    n = group_count(profile.transfer_bytes, group_size)
    return pipeline_latency(t_transfer, profile.exec_latency, n)


def classify_heaviness(profile: ModelProfile,
                       slowdown_threshold: float = DEFAULT_SLOWDOWN_THRESHOLD,
                       pipeline_ms: float | None = None,
                       bandwidth: float = DEFAULT_PCIE_BANDWIDTH,
                       group_size: int = DEFAULT_GROUP_SIZE) -> Heaviness:
    """Heavy iff pipelined PCIe latency / execution latency > threshold (strict).

    ``pipeline_ms`` overrides the modeled pipelined latency with a measured one.
    """
    if slowdown_threshold <= 0:
        raise InvalidParameter("slowdown_threshold must be positive")
    if pipeline_ms is None:
        pipeline_ms = pipeline_pcie_latency(profile, bandwidth, group_size)
    if pipeline_ms / profile.exec_latency > slowdown_threshold:
        return Heaviness.HEAVY
    return Heaviness.LIGHT


def make_profile(name: str, exec_ms: float, nonpipeline_ms: float, footprint_bytes: int,
                 transfer_bytes: int | None = None, *,
                 slowdown_threshold: float = DEFAULT_SLOWDOWN_THRESHOLD,
                 bandwidth: float = DEFAULT_PCIE_BANDWIDTH,
                 group_size: int = DEFAULT_GROUP_SIZE,
                 block_size: int = DEFAULT_FIXED_BLOCK,
                 cold_start_ms: float = 8000.0) -> ModelProfile:
    """Build a profile with calibrated transfer bytes and computed heaviness."""
    if transfer_bytes is None:
        transfer_bytes = calibrate_transfer_bytes(exec_ms, nonpipeline_ms, bandwidth)
    prof = ModelProfile(name, float(exec_ms), int(footprint_bytes), int(transfer_bytes),
                        float(nonpipeline_ms), Heaviness.LIGHT,
                        synthesize_blocks(int(footprint_bytes), block_size), cold_start_ms)
    heavy = classify_heaviness(prof, slowdown_threshold, bandwidth=bandwidth, group_size=group_size)
    return _with(prof, heaviness=heavy)


def _with(profile: ModelProfile, **changes) -> ModelProfile:
    from dataclasses import replace
    return replace(profile, **changes)


# name, remote-async exec ms, non-pipeline ms, pooled footprint MiB, cold start ms.
# Pooled footprints exclude the ~1 GB per-container runtime that the shared
# executor runtime absorbs (ResNet-152: 1.6 GB native, Bert-qa: 2.4 GB native).
REFERENCE_MODELS = [
    ("ResNet-50", 9, 23, 360, 8000),
    ("ResNet-101", 14, 35, 460, 8000),
    ("ResNet-152", 19, 45, 614, 8000),
    ("DenseNet-169", 25, 34, 256, 8000),
    ("DenseNet-201", 28, 39, 308, 8000),
    ("Inception-v3", 14, 27, 308, 8000),
    ("EfficientNet", 12, 17, 154, 8000),
    ("Bert-qa", 45, 190, 1434, 11000),
]

# Measured pipelined-PCIe latency per model, used for calibration checks.
MEASURED_PIPELINE_PCIE = {
    "ResNet-50": 13, "ResNet-101": 22, "ResNet-152": 29, "DenseNet-169": 27,
    "DenseNet-201": 30, "Inception-v3": 17, "EfficientNet": 13, "Bert-qa": 149,
}
MEASURED_PIPELINE_NVLINK = {
    "ResNet-50": 11, "ResNet-101": 16, "ResNet-152": 21, "DenseNet-169": 26,
    "DenseNet-201": 30, "Inception-v3": 16, "EfficientNet": 13, "Bert-qa": 48,
}
MEASURED_HEAVY = {"ResNet-50", "ResNet-101", "ResNet-152", "Bert-qa"}


def default_catalog(**kwargs) -> list[ModelProfile]:
    return [make_profile(n, e, npl, mib * MiB, cold_start_ms=cs, **kwargs)
            for n, e, npl, mib, cs in REFERENCE_MODELS]


def default_catalog_path() -> Path:
    return Path(__file__).parent / "data" / "model_catalog.csv"


@dataclass(frozen=True)
class FunctionSpec:
    id: str
    model: ModelProfile
    deadline: float  # ms
    tail_percentile: float = 0.98

    def __post_init__(self):
        if self.deadline <= 0:
            raise InvalidParameter(f"function {self.id}: deadline must be > 0")
        if not 0 < self.tail_percentile < 1:
            raise InvalidParameter(f"function {self.id}: tail_percentile must be in (0, 1)")


@dataclass(frozen=True)
class Request:
    function_id: str
    arrival_time: float  # ms since sim start
    seq: int

    def __post_init__(self):
        if self.arrival_time < 0:
            raise InvalidParameter("arrival_time must be >= 0")


@dataclass
class Trace:
    requests: list[Request] = field(default_factory=list)
    duration: float = 0.0

    def __post_init__(self):
        last = -math.inf
        for r in self.requests:
            if r.arrival_time < last:
                raise InvalidParameter("trace requests must be sorted by arrival_time")
            last = r.arrival_time
        if self.requests and last > self.duration:
            raise InvalidParameter("request arrives after trace duration")

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def function_ids(self) -> set[str]:
        return {r.function_id for r in self.requests}


def default_deadline(profile: ModelProfile) -> float:
    """80 ms for vision models, 200 ms for Bert-qa."""
    return 200.0 if profile.name.lower().startswith("bert") else 80.0


def gen_poisson_trace(functions: Sequence[tuple[FunctionSpec, float]], duration: float,
                      seed: int) -> Trace:
    """Homogeneous Poisson arrivals per function; rates are requests per minute."""
    if not functions:
        raise InvalidParameter("need at least one function")
    if duration < 0:
        raise InvalidParameter("duration must be >= 0")
    rng = np.random.default_rng(seed)
    times: list[np.ndarray] = []
    ids: list[str] = []
    for spec, rate in functions:
        if rate <= 0:
            raise InvalidParameter(f"function {spec.id}: rate must be > 0")
        n = rng.poisson(rate * duration / 60_000.0) if duration > 0 else 0
        # conditional on the count, Poisson arrival times are iid uniform
        t = np.sort(rng.uniform(0.0, duration, size=n))
        times.append(np.round(t, 3))
        ids.append(spec.id)
    return _merge(times, ids, duration)


def _merge(times: list[np.ndarray], ids: list[str], duration: float) -> Trace:
    if not times:
        return Trace([], duration)
    all_t = np.concatenate(times) if times else np.empty(0)
    owner = np.concatenate([np.full(len(t), i) for i, t in enumerate(times)]) if times else np.empty(0)
    order = np.lexsort((owner, all_t))
    seqs = [0] * len(ids)
    reqs = []
    for k in order:
        fi = int(owner[k])
        reqs.append(Request(ids[fi], float(all_t[k]), seqs[fi]))
        seqs[fi] += 1
    return Trace(reqs, duration)


# -- file formats -------------------------------------------------------------

def _data_lines(path: Path):
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            yield lineno, line


def _read_csv(path: Path, header: list[str]):
    rows = []
    first = True
    for lineno, line in _data_lines(Path(path)):
        cells = next(csv.reader([line]))
        cells = [c.strip() for c in cells]
        if first:
            if cells != header:
                raise ParseError(f"{path}:{lineno}: expected header {','.join(header)}")
            first = False
            continue
        if len(cells) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        rows.append((lineno, cells))
    if first:
        raise ParseError(f"{path}: missing header")
    return rows


def load_model_catalog(path, *, slowdown_threshold: float = DEFAULT_SLOWDOWN_THRESHOLD,
                       bandwidth: float = DEFAULT_PCIE_BANDWIDTH,
                       group_size: int = DEFAULT_GROUP_SIZE,
                       block_size: int = DEFAULT_FIXED_BLOCK) -> list[ModelProfile]:
    profiles = []
    seen = set()
    for lineno, (name, exec_ms, np_ms, foot, xfer) in _read_csv(path, CATALOG_HEADER):
        try:
            if name in seen:
                raise InvalidParameter(f"duplicate model {name!r}")
            prof = make_profile(name, float(exec_ms), float(np_ms), int(foot), int(xfer),
                                slowdown_threshold=slowdown_threshold, bandwidth=bandwidth,
                                group_size=group_size, block_size=block_size,
                                cold_start_ms=11000.0 if name.lower().startswith("bert") else 8000.0)
        except (ValueError, InvalidParameter) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        seen.add(name)
        profiles.append(prof)
    return profiles


def write_model_catalog(profiles: Iterable[ModelProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CATALOG_VERSION_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for p in profiles:
            w.writerow([p.name, _num(p.exec_latency), _num(p.nonpipeline_latency),
                        p.footprint_bytes, p.transfer_bytes])


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def load_trace(path, function_ids: Iterable[str] | None = None,
               duration: float | None = None) -> Trace:
    known = set(function_ids) if function_ids is not None else None
    reqs = []
    seqs: dict[str, int] = {}
    last = -math.inf
    for lineno, (t, fid) in _read_csv(path, TRACE_HEADER):
        try:
            at = float(t)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad arrival_ms {t!r}") from None
        if at < 0 or not math.isfinite(at):
            raise ParseError(f"{path}:{lineno}: arrival_ms must be finite and >= 0")
        if at < last:
            raise ParseError(f"{path}:{lineno}: rows not sorted by arrival_ms")
        if known is not None and fid not in known:
            raise ReferenceError_(f"{path}:{lineno}: unknown function id {fid!r}")
        last = at
        s = seqs.get(fid, 0)
        seqs[fid] = s + 1
        reqs.append(Request(fid, at, s))
    end = max(last, 0.0) if reqs else 0.0
    return Trace(reqs, max(end, duration or 0.0))


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_VERSION_LINE + "\n")
        fh.write(f"# duration_ms={_num(trace.duration)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.requests:
            w.writerow([_num(r.arrival_time), r.function_id])


def trace_duration_hint(path) -> float | None:
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if line.startswith("# duration_ms="):
                return float(line.split("=", 1)[1])
    return None


def catalog_csv_text(profiles: Iterable[ModelProfile]) -> str:
    buf = io.StringIO()
    buf.write(CATALOG_VERSION_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CATALOG_HEADER)
    for p in profiles:
        w.writerow([p.name, _num(p.exec_latency), _num(p.nonpipeline_latency),
                    p.footprint_bytes, p.transfer_bytes])
    return buf.getvalue()
