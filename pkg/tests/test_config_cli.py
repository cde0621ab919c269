import csv
import hashlib
import json
from pathlib import Path

import pytest

from swapsim.cli import main
from swapsim.config import dump_config, load_config, parse_config
from swapsim.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[run]
topology = single-gpu
duration_ms = 20000
seed = 3

[function resnet]
model = ResNet-152
rate = 30
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.name)
def test_bundled_configs_round_trip(path):
    cfg = load_config(path)
    again = parse_config(dump_config(cfg), path.parent)
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_round_trip_keeps_every_section():
    text = MINIMAL + """
[policy]
policy = lru
alpha0 = 0.25
checked = yes

[function bert]
model = Bert-qa
rate = 7.5
deadline_ms = 180
percentile = 0.95

[generator]
count = 5
rate_law = uniform
deadlines = cluster

[cluster]
nodes = 2
max_nodes = 3
"""
    cfg = parse_config(text)
    assert cfg.policy.alpha0 == 0.25 and cfg.policy.checked is True
    assert cfg.cluster.max_nodes == 3
    assert parse_config(dump_config(cfg)) == cfg
    assert [f.id for f, _ in cfg.build_functions()][:3] == ["resnet", "bert", "f0000"]


@pytest.mark.parametrize("snippet,field", [
    ("[function resnet]\nmodel = ResNet-152\nrate = 1\npercentile = 1.5\n",
     "function.resnet.percentile"),
    ("[function x]\nmodel = ResNet-152\n", "function.x.rate"),
    ("[run]\ntopology = tpu\n[function x]\nmodel = ResNet-152\nrate = 1\n", "run.topology"),
    ("[policy]\nscalar = 0.5\n[function x]\nmodel = ResNet-152\nrate = 1\n", "policy.scalar"),
    ("[policy]\nbogus = 1\n", "policy.bogus"),
    ("[generator]\ncount = x\n", "generator.count"),
    ("[cluster]\nnodes = 0\n[generator]\ncount = 2\n", "cluster.nodes"),
    ("[run]\ntrace = missing.csv\n[generator]\ncount = 2\n", "run.trace"),
])
def test_validation_errors_name_the_field(snippet, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(snippet)


def test_unknown_model_is_reported():
    cfg = parse_config("[function x]\nmodel = AlexNet\nrate = 1\n")
    with pytest.raises(ConfigError, match="function.x.model"):
        cfg.build_functions()


def test_simulate_minimal_config(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", str(write(tmp_path, MINIMAL)), "-o", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert list(rep["functions"]) == ["resnet"]
    for name in ("config.ini", "requests.csv", "alpha.csv", "decisions.csv"):
        assert (out / name).read_text().startswith("# swapsim")
    rows = list(csv.reader((out / "requests.csv").read_text().splitlines()[1:]))
    assert rows[0] == "request_id,function_id,arrival_ms,start_ms,end_ms,gpu,swap_kind".split(",")
    assert len(rows) - 1 == rep["requests"]["arrived"]


def test_simulate_is_reproducible(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    main(["simulate", str(cfg), "-o", str(tmp_path / "a")])
    main(["simulate", str(cfg), "-o", str(tmp_path / "b")])
    for name in ("report.json", "requests.csv", "alpha.csv", "decisions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_percentile_exits_2(tmp_path, capsys):
    bad = MINIMAL + "percentile = 1.5\n"
    assert main(["simulate", str(write(tmp_path, bad)), "-o", str(tmp_path / "o")]) == 2
    assert "function.resnet.percentile" in capsys.readouterr().err


def test_gen_trace_is_stable(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    digests = []
    for name in ("t1.csv", "t2.csv"):
        assert main(["gen-trace", str(cfg), "-o", str(tmp_path / name)]) == 0
        digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_simulate_replays_a_trace_file(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    main(["gen-trace", str(cfg), "-o", str(tmp_path / "t.csv")])
    replay = write(tmp_path, MINIMAL.replace("seed = 3", "seed = 3\ntrace = t.csv"), "r.ini")
    main(["simulate", str(cfg), "-o", str(tmp_path / "gen")])
    main(["simulate", str(replay), "-o", str(tmp_path / "replay")])
    a = json.loads((tmp_path / "gen" / "report.json").read_text())
    b = json.loads((tmp_path / "replay" / "report.json").read_text())
    assert a["samples"] == b["samples"]


def test_report_missing_dir_exits_2(tmp_path):
    assert main(["report", str(tmp_path / "nope"), "-o", str(tmp_path / "out")]) == 2


def test_report_builds_one_series_per_policy(tmp_path):
    runs = []
    for policy in ("faaswap", "fifo"):
        for count in (8, 16):
            text = f"[run]\nduration_ms = 10000\n[policy]\npolicy = {policy}\n[generator]\ncount = {count}\n"
            out = tmp_path / f"{policy}-{count}"
            assert main(["simulate", str(write(tmp_path, text, f"{policy}{count}.ini")),
                         "-o", str(out)]) == 0
            runs.append(str(out))
    assert main(["report", *runs, "-o", str(tmp_path / "rep")]) == 0
    lines = (tmp_path / "rep" / "slo_series.csv").read_text().splitlines()
    assert lines[:2] == ["# swapsim slo-series v1", "policy,functions,slo_ratio"]
    series = [l.split(",")[:2] for l in lines[2:]]
    assert series == [["faaswap", "8"], ["faaswap", "16"], ["fifo", "8"], ["fifo", "16"]]
    header = (tmp_path / "rep" / "summary.csv").read_text().splitlines()[1]
    assert header == "run,policy,functions,slo_ratio,p99_over_deadline,mean_load_variance,mean_gpu_load"


def test_report_png_needs_matplotlib(tmp_path):
    pytest.importorskip("matplotlib")
    text = "[run]\nduration_ms = 5000\n[generator]\ncount = 8\n"
    out = tmp_path / "r"
    main(["simulate", str(write(tmp_path, text)), "-o", str(out)])
    assert main(["report", str(out), "-o", str(tmp_path / "rep"), "--format", "both"]) == 0
    for name in ("slo_vs_functions.png", "latency_quantiles.png", "load_variance.png"):
        assert (tmp_path / "rep" / name).read_bytes()[:4] == b"\x89PNG"


@pytest.mark.slow
def test_faaswap_beats_simpleswap_on_overload(tmp_path):
    base = (CONFIGS / "overload.ini").read_text()
    ratios = {}
    for policy in ("faaswap", "simpleswap"):
        text = base.replace("policy = faaswap", f"policy = {policy}")
        out = tmp_path / policy
        assert main(["simulate", str(write(tmp_path, text, f"{policy}.ini")), "-o", str(out)]) == 0
        ratios[policy] = json.loads((out / "report.json").read_text())["slo_ratio"]
    assert ratios["faaswap"] >= ratios["simpleswap"]
