import csv
import io
import math

import pytest

from mecsim import cli
from mecsim.config import ConfigError, ExperimentConfig, config_to_mapping, parse_config, parse_text
from mecsim.sweep import METRICS, aggregate, aggregate_csv, ci_halfwidth, read_rows, rows_csv, run_sweep, tasks


def test_empty_config_is_default_experiment():
    c = parse_config(text="")
    assert c == ExperimentConfig()
    assert (c.num_servers, c.num_videos, c.num_levels) == (3, 1000, 4)
    assert c.base_bitrate_mbps == 2.0
    assert c.relative_bitrates == (0.45, 0.55, 0.67, 0.82)
    assert (c.video_length_s, c.zipf_alpha, c.arrival_rate) == (600.0, 0.8, 8.0)
    assert c.requests_per_server == 10_000
    assert c.cache_fraction == 0.2 and c.processing_mbps == 10.0
    assert c.processing_capacity() == 10e6
    assert c.cache_capacity() == int(0.2 * 1000 * 373_500_000)
    assert len(c.seeds) == 10


def test_sweep_expansion():
    c = parse_text("cache_fraction = [0.05, 0.1, 0.2, 0.3, 0.4]\nseeds = [0, 1]\npolicy = ['jccp', 'cocache']")
    assert c.sweep_param == "cache_fraction"
    assert [v for v, _ in c.points()] == [0.05, 0.1, 0.2, 0.3, 0.4]
    assert len(list(tasks(c))) == 2 * 2 * 5
    assert all(p.cache_fraction == v for v, p in c.points())


def test_count_rows_200_and_20():
    c = ExperimentConfig(sweep_param="cache_fraction", sweep_values=(0.05, 0.1, 0.2, 0.3, 0.4))
    assert len(list(tasks(c))) == 200
    fake = [
        {"policy": p, "seed": s, "sweep_value": v, "status": "ok", **{m: 0.5 for m in METRICS}}
        for p, s, v, _ in tasks(c)
    ]
    assert len(aggregate(fake, "cache_fraction")) == 20


def test_unknown_policy_names_valid_ones():
    with pytest.raises(ConfigError, match="jccp.*cachepro.*cocache.*offline"):
        parse_text('policy = "nosuch"')


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError, match="line 2.*bogus"):
        parse_text("num_servers = 3\nbogus = 1\n")


@pytest.mark.parametrize("text", ["processing_mbps = 0", "cache_fraction = -0.1", "cache_bytes = 0"])
def test_non_positive_capacity(text):
    with pytest.raises(ConfigError, match="positive"):
        parse_text(text)


def test_malformed_file():
    with pytest.raises(ConfigError, match="malformed"):
        parse_text("num_servers = = 3")


def test_type_error_has_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_text('num_servers = "three"')


def test_two_sweep_axes_rejected():
    with pytest.raises(ConfigError, match="one sweep axis"):
        parse_text("cache_fraction = [0.1, 0.2]\nprocessing_mbps = [5, 10]")


def test_overrides_win():
    c = parse_config(text="processing_mbps = 5\nseeds = [1]", overrides=["processing_mbps=40", "policy=jccp"])
    assert c.processing_mbps == 40.0
    assert c.policy == ("jccp",)
    assert c.seeds == (1,)


def test_override_replaces_sweep():
    c = parse_config(text="processing_mbps = [2.5, 40]", overrides=["processing_mbps=20"])
    assert c.sweep_param is None and c.processing_mbps == 20


def test_unlimited_processing():
    assert math.isinf(parse_text("processing_mbps = inf").processing_capacity())


def test_mapping_roundtrip():
    c = parse_text("cache_fraction = [0.1, 0.2]\nseeds = [3]")
    assert parse_config(text=None, overrides=[]) == ExperimentConfig()
    m = config_to_mapping(c)
    from mecsim.config import from_mapping

    assert from_mapping({k: list(v) if isinstance(v, tuple) else v for k, v in m.items() if v is not None}) == c


def test_ci_halfwidth_oracle():
    from scipy import stats

    xs = [0.61, 0.64, 0.58, 0.66, 0.60]
    n = len(xs)
    mean = sum(xs) / n
    sd = (sum((x - mean) ** 2 for x in xs) / (n - 1)) ** 0.5
    assert ci_halfwidth(xs) == pytest.approx(stats.t.ppf(0.975, 4) * sd / n**0.5, rel=1e-12)
    assert ci_halfwidth(xs) == pytest.approx(2.7764451051977987 * sd / n**0.5, rel=1e-12)
    assert math.isnan(ci_halfwidth([1.0]))


SMALL = "requests_per_server = 150\nnum_videos = 60\n"


def test_sweep_rows_and_aggregates_recomputable():
    c = parse_text(SMALL + "seeds = [0, 1]\ncache_fraction = [0.2, 0.4]\npolicy = ['jccp', 'cocache', 'offline']")
    rows = run_sweep(c, workers=1)
    assert [(r["policy"], r["seed"], r["cache_fraction"]) for r in rows] == [
        (p, s, f) for p in ("jccp", "cocache", "offline") for s in (0, 1) for f in (0.2, 0.4)
    ]
    text = rows_csv(rows)
    parsed = read_rows(text)
    aggs = aggregate(rows, "cache_fraction")
    for a in aggs:
        members = [r for r in parsed if r["policy"] == a["policy"] and r["cache_fraction"] == a["sweep_value"]]
        vals = [r["hit_ratio"] for r in members]
        assert a["hit_ratio_mean"] == pytest.approx(sum(vals) / len(vals), rel=1e-15)
        assert a["hit_ratio_ci95"] == pytest.approx(ci_halfwidth(vals), rel=1e-12)
    # offline dominance, checked post hoc on the CSV
    by = {(r["policy"], r["seed"], r["cache_fraction"]): r for r in parsed}
    for (p, s, f), r in by.items():
        if p == "offline":
            assert r["backhaul_cost"] <= by["jccp", s, f]["backhaul_cost"]


def test_csv_header_and_runtime_blank_by_default():
    rows = run_sweep(parse_text(SMALL + "policy = 'jccp'\nseeds = [0]"), workers=1)
    lines = rows_csv(rows).splitlines()
    assert lines[0] == (
        "policy,seed,cache_fraction,P_units,lambda,hit_ratio,avg_delay_ms,external_traffic_TB,"
        "backhaul_cost,proc_util,runtime_ms,status"
    )
    rec = next(csv.DictReader(io.StringIO(rows_csv(rows))))
    assert rec["runtime_ms"] == "" and rec["status"] == "ok"
    assert rows_csv(run_sweep(parse_text(SMALL + "policy='jccp'\nseeds=[0]\nrecord_runtime=true"), 1)).splitlines()[1].split(",")[10] != ""


def test_parallel_matches_serial():
    c = parse_text(SMALL + "seeds = [0, 1]\nprocessing_mbps = [2.5, 40]\npolicy = ['jccp', 'cachepro']")
    assert rows_csv(run_sweep(c, workers=2)) == rows_csv(run_sweep(c, workers=1))


def test_row_error_marked_and_others_continue(monkeypatch):
    import mecsim.sweep as sweep

    real = sweep.run

    def flaky(point, policy, seed):
        if policy == "cocache":
            raise RuntimeError("boom")
        return real(point, policy, seed)

    monkeypatch.setattr(sweep, "run", flaky)
    rows = run_sweep(parse_text(SMALL + "seeds = [0, 1]\npolicy = ['jccp', 'cocache']"), workers=1)
    assert [r["status"] for r in rows] == ["ok", "ok", "error: RuntimeError: boom", "error: RuntimeError: boom"]
    assert "n" in aggregate_csv(aggregate(rows)).splitlines()[0]


# --- command line ------------------------------------------------------------


def write_cfg(tmp_path, text):
    p = tmp_path / "exp.toml"
    p.write_text(text)
    return str(p)


def test_cli_sweep_writes_files_and_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "seeds = [0, 1]\ncache_fraction = [0.1, 0.2]\npolicy = ['jccp', 'cachepro']")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["sweep", "-c", cfg, "-o", str(a), "-j", "1"]) == 0
    assert cli.main(["sweep", "-c", cfg, "-o", str(b), "-j", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a_summary.csv").read_bytes() == (tmp_path / "b_summary.csv").read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 2 * 2 * 2


def test_cli_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    cfg = write_cfg(tmp_path, SMALL + "policy = 'cocache'\nseeds = [0]")
    assert cli.main(["sweep", "-c", cfg, "-j", "1"]) == 0
    assert (tmp_path / "out" / "sweep.csv").exists()
    assert (tmp_path / "out" / "sweep_summary.csv").exists()


def test_cli_row_error_exit_code(tmp_path, monkeypatch):
    import mecsim.sweep as sweep

    def boom(*a):
        raise RuntimeError("x")

    monkeypatch.setattr(sweep, "run", boom)
    cfg = write_cfg(tmp_path, SMALL + "seeds = [0, 1]\npolicy = 'jccp'")
    assert cli.main(["sweep", "-c", cfg, "-o", str(tmp_path / "s.csv"), "-j", "1"]) == 1


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, 'policy = "nosuch"')
    assert cli.main(["run", "-c", cfg]) == 2
    assert "valid policies" in capsys.readouterr().err


def test_cli_run_and_trace(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "seeds = [0, 1]")
    log = tmp_path / "log.csv"
    assert cli.main(["run", "-c", cfg, "--policy", "jccp", "--seed", "1", "--log", str(log)]) == 0
    out = capsys.readouterr().out
    assert "hit_ratio" in out and "policy               jccp" in out
    trace = tmp_path / "trace.csv"
    assert cli.main(["trace", "-c", cfg, "--policy", "jccp", "--seed", "1", "-o", str(trace)]) == 0
    assert trace.read_text() == log.read_text()
    assert len(trace.read_text().splitlines()) == 1 + 3 * 150


def test_cli_validate_subset(capsys):
    assert cli.main(["validate", "lru"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
