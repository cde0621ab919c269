"""INI run configuration: parsing with field-path errors, and a lossless dump."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import ClusterParams
from .errors import ConfigError, SwapSimError
from .scenarios import RATE_EXPONENT, RATE_MAX, RATE_MIN, cluster_deadline, sample_rates
from .sim import SimParams
from .topology import NodeTopology, default_v100_node, single_gpu_node
from .workload import (FunctionSpec, ModelProfile, default_catalog_path, default_deadline,
                       load_model_catalog)

CONFIG_VERSION_LINE = "# swapsim config v1"
TOPOLOGIES = {"v100": default_v100_node, "single-gpu": single_gpu_node}
RATE_LAWS = ("power", "uniform")
DEADLINE_SETS = ("node", "cluster")


@dataclass
class FunctionEntry:
    id: str
    model: str
    rate: float  # requests per minute
    deadline_ms: float | None = None  # None: the model's default deadline
    percentile: float = 0.98


@dataclass
class GeneratorSpec:
    """Functions synthesized by cycling through the catalog."""
    count: int
    rate_law: str = "power"
    rate_min: float = RATE_MIN
    rate_max: float = RATE_MAX
    deadlines: str = "node"
    percentile: float = 0.98


@dataclass
class SimConfig:
    topology: str = "v100"
    catalog: str | None = None  # None: bundled calibration catalog
    duration_ms: float = 300_000.0
    seed: int = 1
    trace: str | None = None  # None: Poisson arrivals from the function rates
    requests_csv: bool = True
    policy: SimParams = field(default_factory=SimParams)
    generator: GeneratorSpec | None = None
    functions: list[FunctionEntry] = field(default_factory=list)
    cluster: ClusterParams | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def build_topology(self) -> NodeTopology:
        return TOPOLOGIES[self.topology]()

    def load_catalog(self) -> dict[str, ModelProfile]:
        path = self.resolve(self.catalog) if self.catalog else default_catalog_path()
        return {m.name: m for m in load_model_catalog(path, group_size=self.policy.group_size,
                                                     block_size=self.policy.fixed_block_size)}

    def build_functions(self) -> list[tuple[FunctionSpec, float]]:
        """Explicit functions first, then generated ones."""
        catalog = self.load_catalog()
        out = []
        for f in self.functions:
            if f.model not in catalog:
                raise ConfigError(f"function.{f.id}.model: unknown model {f.model!r}")
            m = catalog[f.model]
            dl = f.deadline_ms if f.deadline_ms is not None else default_deadline(m)
            out.append((FunctionSpec(f.id, m, dl, f.percentile), f.rate))
        g = self.generator
        if g is not None:
            models = list(catalog.values())
            rng = np.random.default_rng(self.seed)
            if g.rate_law == "power":
                rates = sample_rates(g.count, rng, g.rate_min, g.rate_max, RATE_EXPONENT)
            else:
                rates = [float(r) for r in rng.uniform(g.rate_min, g.rate_max, size=g.count)]
            pick = cluster_deadline if g.deadlines == "cluster" else default_deadline
            taken = {f.id for f in self.functions}
            for i in range(g.count):
                fid = f"f{i:04d}"
                if fid in taken:
                    raise ConfigError(f"generator: id {fid} clashes with an explicit function")
                m = models[i % len(models)]
                out.append((FunctionSpec(fid, m, pick(m), g.percentile), rates[i]))
        if not out:
            raise ConfigError("functions: define [function ...] sections or a [generator]")
        return out


_POLICY_FIELDS = {f.name: f for f in dataclasses.fields(SimParams)}
_CLUSTER_FIELDS = {f.name: f for f in dataclasses.fields(ClusterParams)}


def _convert(value: str, typ, where: str):
    # annotations are strings under postponed evaluation; "float | None" parses as float
    typ = str(getattr(typ, "__name__", typ)).split("|")[0].strip()
    try:
        if typ == "bool":
            low = value.strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(value)
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r}") from None


def _fill(obj, section: configparser.SectionProxy, fields: dict, where: str):
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"{where}.{key}: unknown key")
        setattr(obj, key, _convert(raw, fields[key].type, f"{where}.{key}"))
    return obj


def parse_config(text: str, base_dir: Path = Path(".")) -> SimConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    cfg = SimConfig(base_dir=base_dir)
    for name in cp.sections():
        sec = cp[name]
        if name == "run":
            run_fields = {f.name: f for f in dataclasses.fields(SimConfig)
                          if f.name in ("topology", "catalog", "duration_ms", "seed", "trace",
                                        "requests_csv")}
            _fill(cfg, sec, run_fields, "run")
        elif name == "policy":
            _fill(cfg.policy, sec, _POLICY_FIELDS, "policy")
        elif name == "cluster":
            cfg.cluster = _fill(ClusterParams(), sec, _CLUSTER_FIELDS, "cluster")
        elif name == "generator":
            if "count" not in sec:
                raise ConfigError("generator.count: required")
            g = GeneratorSpec(count=0)
            cfg.generator = _fill(g, sec, {f.name: f for f in dataclasses.fields(GeneratorSpec)},
                                  "generator")
        elif name.startswith("function "):
            fid = name.split(" ", 1)[1].strip()
            where = f"function.{fid}"
            for req in ("model", "rate"):
                if req not in sec:
                    raise ConfigError(f"{where}.{req}: required")
            entry = FunctionEntry(fid, "", 0.0)
            fields = {f.name: f for f in dataclasses.fields(FunctionEntry) if f.name != "id"}
            _fill(entry, sec, fields, where)
            cfg.functions.append(entry)
        else:
            raise ConfigError(f"{name}: unknown section")
    validate(cfg)
    return cfg


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def validate(cfg: SimConfig) -> None:
    if cfg.topology not in TOPOLOGIES:
        raise ConfigError(f"run.topology: choose from {sorted(TOPOLOGIES)}")
    if cfg.duration_ms < 0:
        raise ConfigError("run.duration_ms: must be >= 0")
    for key in ("catalog", "trace"):
        p = getattr(cfg, key)
        if p and not cfg.resolve(p).is_file():
            raise ConfigError(f"run.{key}: file not found: {p}")
    try:
        cfg.policy.validate()
    except SwapSimError as exc:
        raise ConfigError(str(exc)) from None
    seen = set()
    for f in cfg.functions:
        where = f"function.{f.id}"
        if f.id in seen:
            raise ConfigError(f"{where}: duplicate id")
        seen.add(f.id)
        if not f.rate > 0:
            raise ConfigError(f"{where}.rate: must be > 0")
        if f.deadline_ms is not None and not f.deadline_ms > 0:
            raise ConfigError(f"{where}.deadline_ms: must be > 0")
        if not 0 < f.percentile < 1:
            raise ConfigError(f"{where}.percentile: {f.percentile} outside (0, 1)")
    g = cfg.generator
    if g is not None:
        if g.count < 1:
            raise ConfigError("generator.count: must be >= 1")
        if g.rate_law not in RATE_LAWS:
            raise ConfigError(f"generator.rate_law: choose from {RATE_LAWS}")
        if not 0 < g.rate_min <= g.rate_max:
            raise ConfigError("generator.rate_min: need 0 < rate_min <= rate_max")
        if g.deadlines not in DEADLINE_SETS:
            raise ConfigError(f"generator.deadlines: choose from {DEADLINE_SETS}")
        if not 0 < g.percentile < 1:
            raise ConfigError(f"generator.percentile: {g.percentile} outside (0, 1)")
    if not cfg.functions and g is None:
        raise ConfigError("functions: define [function ...] sections or a [generator]")
    if cfg.cluster is not None:
        cfg.cluster.validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: SimConfig) -> str:
    """INI text that parses back to an equal config."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    run = {"topology": cfg.topology, "duration_ms": cfg.duration_ms, "seed": cfg.seed,
           "requests_csv": cfg.requests_csv}
    if cfg.catalog:
        run["catalog"] = cfg.catalog
    if cfg.trace:
        run["trace"] = cfg.trace
    cp["run"] = {k: _fmt(v) for k, v in run.items()}
    cp["policy"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.policy).items()}
    if cfg.generator is not None:
        cp["generator"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.generator).items()}
    for f in cfg.functions:
        body = {"model": f.model, "rate": f.rate, "percentile": f.percentile}
        if f.deadline_ms is not None:
            body["deadline_ms"] = f.deadline_ms
        cp[f"function {f.id}"] = {k: _fmt(v) for k, v in body.items()}
    if cfg.cluster is not None:
        cp["cluster"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.cluster).items()}
    buf = io.StringIO()
    buf.write(CONFIG_VERSION_LINE + "\n")
    cp.write(buf)
    return buf.getvalue()
