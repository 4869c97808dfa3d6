"""Self-check suites run by ``mecsim validate``.

Each suite compares a production component against a slow, obviously
correct reference and returns (name, passed, detail).
"""

from __future__ import annotations

import math
import random

import numpy as np
from scipy import stats

from .cache import LruCache, Uncacheable
from .config import ExperimentConfig
from .engine import build, replay_cost
from .model import Request, Topology, VariantId
from .offline import SchedulingInstance, solve_bnb, solve_exhaustive
from .workload import WorkloadParams, generate_trace, popularity_permutation, zipf_pmf


def random_instance(rng: random.Random, max_servers=3, max_requests=6, max_levels=3) -> SchedulingInstance:
    """Small scheduling instance with random costs, caches and capacities."""
    K = rng.randint(1, max_servers)
    L = rng.randint(1, max_levels)
    local = [rng.randint(1, 10) for _ in range(K)]
    pair = [[0] * K for _ in range(K)]
    for a in range(K):
        for b in range(a + 1, K):
            pair[a][b] = pair[b][a] = rng.randint(11, 60)
    origin = [rng.randint(61, 200) for _ in range(K)]
    topo = Topology.build(local, pair, origin)
    V = rng.randint(1, 4)
    sizes = {lv: 10 * lv + rng.randint(0, 5) for lv in range(1, L + 1)}
    loads = {lv: rng.choice((0.5, 1, 1.5, 2, 3)) * lv for lv in range(1, L + 1)}
    cache = {j: [VariantId(v, lv) for v in range(1, V + 1) for lv in range(1, L + 1) if rng.random() < 0.35]
             for j in topo.servers}
    caps = {j: rng.choice((0, 1, 2, 3, 4, 6, 8, math.inf)) for j in topo.servers}
    reqs = [
        Request(i + 1, rng.randint(1, K), VariantId(rng.randint(1, V), rng.randint(1, L)), 0.0, 1.0)
        for i in range(rng.randint(1, max_requests))
    ]
    return SchedulingInstance(reqs, cache, topo, caps, sizes, loads)


def check_solver(n=200, seed=0):
    rng = random.Random(seed)
    bad = 0
    for _ in range(n):
        inst = random_instance(rng)
        if solve_bnb(inst).icost != solve_exhaustive(inst).icost:
            bad += 1
    return "solver: branch-and-bound vs exhaustive", bad == 0, f"{bad} mismatches over {n} instances"


def check_lru(ops=10_000, seed=0):
    """Production cache vs a list kept in recency order."""
    rng = random.Random(seed)
    cap = 100
    cache = LruCache(cap)
    ref = []  # (variant, size), LRU first
    for _ in range(ops):
        v = VariantId(rng.randrange(30), rng.randint(1, 3))
        size = rng.randint(1, 40)
        if rng.random() < 0.3:
            hit = any(x == v for x, _ in ref)
            if cache.touch(v) != hit:
                return "cache: LRU vs reference list", False, f"touch({v}) disagrees"
            if hit:
                i = next(i for i, (x, _) in enumerate(ref) if x == v)
                ref.append(ref.pop(i))
            continue
        present = [i for i, (x, _) in enumerate(ref) if x == v]
        try:
            evicted = cache.insert(v, size)
        except Uncacheable:
            if present or size <= cap:
                return "cache: LRU vs reference list", False, f"unexpected Uncacheable for {v}"
            continue
        expect = []
        if present:
            ref.append(ref.pop(present[0]))
        else:
            while sum(s for _, s in ref) + size > cap:
                expect.append(ref.pop(0)[0])
            ref.append((v, size))
        if evicted != expect or [x for x, _ in cache.entries()] != [x for x, _ in reversed(ref)]:
            return "cache: LRU vs reference list", False, f"state diverged after inserting {v}"
    return "cache: LRU vs reference list", True, f"{ops} operations agree"


def check_workload(seed=0):
    # popularity: 50k draws from the generator, mapped back to popularity rank
    V, n = 100, 50_000
    pop = generate_trace(WorkloadParams(num_videos=V, requests_per_server=n), seed, num_servers=1)
    rank = np.empty(V + 1, dtype=int)
    rank[popularity_permutation(WorkloadParams(num_videos=V), seed, 1)] = np.arange(V)
    observed = np.bincount(rank[[r.variant.video for r in pop]], minlength=V)
    chi = stats.chisquare(observed, zipf_pmf(V, 0.8) * n)
    # level choice and inter-arrival gaps
    params = WorkloadParams(num_videos=V, requests_per_server=30_000)
    trace = generate_trace(params, seed, num_servers=1)
    shares = np.bincount([r.variant.level for r in trace], minlength=5)[1:] / len(trace)
    times = np.array([r.arrival_time for r in trace])
    gap = np.diff(np.concatenate(([0.0], times))).mean()
    target = 60.0 / params.arrival_rate
    ok = chi.pvalue >= 0.01 and np.all(np.abs(shares - 0.25) <= 0.01) and abs(gap - target) <= 0.02 * target
    detail = f"chi2 p={chi.pvalue:.3f}, level shares {np.round(shares, 4).tolist()}, mean gap {gap:.3f}s"
    return "workload: popularity, levels, arrivals", bool(ok), detail


def check_engine(seed=0, requests=2000):
    cfg = ExperimentConfig(requests_per_server=requests, check_invariants=True)
    detail = []
    ok = True
    for policy in cfg.policy:
        sim = build(cfg, policy, seed)
        rep = sim.run()
        replay = replay_cost(sim.log, sim.trace, sim.state.catalog, sim.state.topology)
        if replay != rep.total_backhaul_cost:
            ok = False
        detail.append(f"{policy} hit={rep.hit_ratio:.3f}")
    return "engine: invariants and cost replay", ok, ", ".join(detail)


SUITES = {
    "solver": check_solver,
    "lru": check_lru,
    "workload": check_workload,
    "engine": check_engine,
}


def run_all(names=None):
    for name in names or SUITES:
        try:
            yield SUITES[name]()
        except Exception as exc:
            yield name, False, f"{type(exc).__name__}: {exc}"
