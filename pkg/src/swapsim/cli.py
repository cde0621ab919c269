"""Command-line front end: simulate, gen-trace, report."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from .cluster import NORMALIZED_QUANTILES, normalized_load_variance, run_cluster
from .config import dump_config, load_config
from .errors import ConfigError, InvalidParameter, ParseError, ReferenceError_, SwapSimError
from .queueing import tail_latency
from .sim import run
from .workload import gen_poisson_trace, load_trace, trace_duration_hint, write_trace

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
VALIDATION_ERRORS = (ConfigError, ParseError, ReferenceError_, InvalidParameter)
REPORT_QUANTILES = NORMALIZED_QUANTILES + (0.99,)

log = logging.getLogger("swapsim")


def _setup_logging() -> None:
    level = os.environ.get("SWAPSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _build(cfg):
    fns = cfg.build_functions()
    if cfg.trace:
        path = cfg.resolve(cfg.trace)
        duration = max(cfg.duration_ms, trace_duration_hint(path) or 0.0)
        trace = load_trace(path, [f.id for f, _ in fns], duration)
    else:
        trace = gen_poisson_trace(fns, cfg.duration_ms, cfg.seed)
    return fns, trace


def cmd_simulate(config_path, out_dir) -> int:
    cfg = load_config(config_path)
    fns, trace = _build(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    topo = cfg.build_topology()
    if cfg.cluster is not None:
        report, _ = run_cluster(topo, fns, trace, cfg.policy, cfg.cluster, cfg.seed)
        (out / "report.json").write_text(report.to_json())
        log.info("cluster run: slo_ratio=%.4f migrations=%d", report.slo_ratio,
                 len(report.migrations))
        print(f"slo_ratio {report.slo_ratio:.4f}  nodes {len(report.nodes)}  "
              f"migrations {len(report.migrations)}")
        return EXIT_OK
    report, eng = run(topo, [f for f, _ in fns], trace, cfg.policy, cfg.seed)
    (out / "report.json").write_text(report.to_json())
    if cfg.requests_csv:
        (out / "requests.csv").write_text(eng.requests_csv())
    (out / "alpha.csv").write_text(eng.alpha_csv())
    (out / "decisions.csv").write_text(eng.decisions_csv())
    print(f"slo_ratio {report.slo_ratio:.4f}  functions {len(report.functions)}  "
          f"gpu_load {' '.join(f'{x:.3f}' for x in report.gpu_load)}")
    return EXIT_OK


def cmd_gen_trace(config_path, out_path) -> int:
    cfg = load_config(config_path)
    fns = cfg.build_functions()
    write_trace(gen_poisson_trace(fns, cfg.duration_ms, cfg.seed), out_path)
    return EXIT_OK


def _run_summary(run_dir: Path) -> dict:
    path = run_dir / "report.json"
    if not path.is_file():
        raise ConfigError(f"report: {run_dir} has no report.json")
    rep = json.loads(path.read_text())
    if "nodes" in rep:
        variances = [n["load_variance"] for n in rep["nodes"]]
        quant = {float(q): rep["normalized_latency"][f"{q:.6f}"] for q in NORMALIZED_QUANTILES}
        quant[0.99] = rep["normalized_latency"]["p99"]
        loads = [x for n in rep["nodes"] for x in n["gpu_load"]]
    else:
        norm = []
        for fid, f in rep["functions"].items():
            for x in rep["samples"].get(fid, []):
                norm.append(math.inf if x is None else x / f["deadline_ms"])
        quant = {q: tail_latency(norm, q) if norm else math.nan for q in REPORT_QUANTILES}
        variances = [normalized_load_variance(rep["gpu_load"])]
        loads = rep["gpu_load"]
    return {
        "run": run_dir.name, "policy": rep["policy"], "functions": len(rep["functions"]),
        "slo_ratio": rep["slo_ratio"], "quantiles": quant, "variances": variances,
        "mean_gpu_load": sum(loads) / len(loads) if loads else 0.0,
    }


def _csv(header_line: str, columns: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(header_line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def cmd_report(run_dirs, out_dir, fmt: str = "csv") -> int:
    runs = []
    for d in run_dirs:
        d = Path(d)
        if not d.is_dir():
            raise ConfigError(f"report: run directory not found: {d}")
        runs.append(_run_summary(d))
    runs.sort(key=lambda r: (r["policy"], r["functions"], r["run"]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _csv("# swapsim summary v1",
                   ["run", "policy", "functions", "slo_ratio", "p99_over_deadline",
                    "mean_load_variance", "mean_gpu_load"],
                   [(r["run"], r["policy"], r["functions"], r["slo_ratio"],
                     r["quantiles"][0.99], sum(r["variances"]) / len(r["variances"]),
                     r["mean_gpu_load"]) for r in runs])
    (out / "summary.csv").write_text(summary)
    (out / "slo_series.csv").write_text(_csv(
        "# swapsim slo-series v1", ["policy", "functions", "slo_ratio"],
        [(r["policy"], r["functions"], r["slo_ratio"]) for r in runs]))
    (out / "latency_quantiles.csv").write_text(_csv(
        "# swapsim latency-quantiles v1", ["run", "policy", "functions", "quantile", "latency_over_deadline"],
        [(r["run"], r["policy"], r["functions"], float(q), v)
         for r in runs for q, v in sorted(r["quantiles"].items())]))
    (out / "load_variance.csv").write_text(_csv(
        "# swapsim load-variance v1", ["run", "policy", "functions", "node", "load_variance"],
        [(r["run"], r["policy"], r["functions"], i, v)
         for r in runs for i, v in enumerate(r["variances"])]))
    if fmt in ("png", "both"):
        from . import plots
        series: dict = {}
        for r in runs:
            series.setdefault(r["policy"], []).append((r["functions"], r["slo_ratio"]))
        plots.slo_vs_functions(series, out / "slo_vs_functions.png")
        plots.latency_quantiles(
            {f"{r['policy']}@{r['functions']}": [(q, v) for q, v in r["quantiles"].items()
                                                  if math.isfinite(v)] for r in runs},
            out / "latency_quantiles.png")
        plots.load_variance({f"{r['policy']}@{r['functions']}": r["variances"] for r in runs},
                            out / "load_variance.png")
    sys.stdout.write(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swapsim", description="GPU model-swapping simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run one configured simulation")
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True, help="output directory")
    g = sub.add_parser("gen-trace", help="write a Poisson trace for a config's functions")
    g.add_argument("config")
    g.add_argument("-o", "--out", required=True, help="trace CSV path")
    r = sub.add_parser("report", help="merge run directories into comparison tables")
    r.add_argument("runs", nargs="+")
    r.add_argument("-o", "--out", required=True, help="output directory")
    r.add_argument("--format", choices=("csv", "png", "both"), default="csv")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "gen-trace":
            return cmd_gen_trace(args.config, args.out)
        return cmd_report(args.runs, args.out, args.format)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SwapSimError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
