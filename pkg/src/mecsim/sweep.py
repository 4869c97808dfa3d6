"""Parameter sweeps across policies and seeds, emitted as CSV."""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

from scipy import stats

from .engine import run

COLUMNS = (
    "policy",
    "seed",
    "cache_fraction",
    "P_units",
    "lambda",
    "hit_ratio",
    "avg_delay_ms",
    "external_traffic_TB",
    "backhaul_cost",
    "proc_util",
    "runtime_ms",
    "status",
)
METRICS = ("hit_ratio", "avg_delay_ms", "external_traffic_TB", "backhaul_cost", "proc_util")


def tasks(config):
    """(policy, seed, sweep value, point config) in output order."""
    points = list(config.points())
    for policy in config.policy:
        for seed in config.seeds:
            for value, point in points:
                yield policy, seed, value, point


def _fraction(point):
    if point.cache_bytes is None:
        return point.cache_fraction
    return point.cache_bytes / point.catalog().library_size


def run_point(task) -> dict:
    policy, seed, value, point = task
    row = {
        "policy": policy,
        "seed": seed,
        "cache_fraction": _fraction(point),
        "P_units": point.processing_mbps,
        "lambda": point.arrival_rate,
        "sweep_value": value,
    }
    t0 = time.perf_counter()
    try:
        rep = run(point, policy, seed)
    except Exception as exc:  # reported per row, the sweep goes on
        row.update({m: None for m in METRICS}, runtime_ms=None, status=f"error: {type(exc).__name__}: {exc}")
        return row
    row.update(
        hit_ratio=rep.hit_ratio,
        avg_delay_ms=rep.avg_access_delay,
        external_traffic_TB=rep.external_traffic_tb,
        backhaul_cost=rep.total_backhaul_cost,
        proc_util=rep.mean_utilization,
        runtime_ms=(time.perf_counter() - t0) * 1000.0 if point.record_runtime else None,
        status="ok",
    )
    return row


def default_workers():
    return os.cpu_count() or 1


def run_sweep(config, workers=None) -> list:
    """One row per (policy, seed, sweep value), in configured order
    regardless of which worker finishes first."""
    todo = list(tasks(config))
    workers = workers or config.workers or default_workers()
    if workers <= 1 or len(todo) <= 1:
        return [run_point(t) for t in todo]
    with ProcessPoolExecutor(max_workers=min(workers, len(todo))) as pool:
        return list(pool.map(run_point, todo))


def ci_halfwidth(values, level=0.95) -> float:
    n = len(values)
    if n < 2:
        return math.nan
    mean = sum(values) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in values) / (n - 1))
    return float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)


def aggregate(rows, axis=None) -> list:
    """Mean and 95% Student-t half-width per (policy, sweep value) over seeds."""
    groups = {}
    for r in rows:
        groups.setdefault((r["policy"], r.get("sweep_value")), []).append(r)
    out = []
    for (policy, value), members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        agg = {"policy": policy, "sweep_param": axis or "", "sweep_value": value, "n": len(ok)}
        for m in METRICS:
            vals = [r[m] for r in ok]
            agg[f"{m}_mean"] = sum(vals) / len(vals) if vals else math.nan
            agg[f"{m}_ci95"] = ci_halfwidth(vals)
        out.append(agg)
    return out


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def aggregate_csv(aggs) -> str:
    cols = ["policy", "sweep_param", "sweep_value", "n"]
    cols += [f"{m}_{s}" for m in METRICS for s in ("mean", "ci95")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for a in aggs:
        w.writerow([_fmt(a[c]) for c in cols])
    return buf.getvalue()


def read_rows(text: str) -> list:
    """Parse ``rows_csv`` output back into typed rows."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = dict(rec)
        row["seed"] = int(row["seed"])
        for c in ("cache_fraction", "P_units", "lambda") + METRICS + ("runtime_ms",):
            row[c] = float(row[c]) if row[c] != "" else None
        out.append(row)
    return out
