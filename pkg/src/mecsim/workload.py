"""Seeded request traces and backhaul delay topologies.

Each random purpose draws from its own child stream of ``SeedSequence(seed)``
so that e.g. changing the number of requests does not reshuffle the topology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DomainError, Request, Topology, VariantId

# spawn-key prefixes, one per purpose
_TOPOLOGY, _PERMUTATION, _ARRIVALS, _VIDEOS, _LEVELS = range(5)


@dataclass(frozen=True)
class WorkloadParams:
    num_videos: int = 1000
    num_levels: int = 4
    zipf_alpha: float = 0.8
    arrival_rate: float = 8.0  # requests/minute, every server
    requests_per_server: int = 10_000
    video_length: float = 600.0
    arrival_rates: tuple = None  # optional per-server override
    local_delay: tuple = (5.0, 10.0)
    neighbor_delay: tuple = (20.0, 50.0)
    origin_delay: tuple = (100.0, 200.0)
    shuffle_popularity: bool = True

    def __post_init__(self):
        if self.zipf_alpha < 0:
            raise DomainError("zipf_alpha must be >= 0")
        rates = [self.arrival_rate] if self.arrival_rates is None else list(self.arrival_rates)
        if any(not r > 0 for r in rates):
            raise DomainError("arrival rates must be positive")
        lo, mid, hi = self.local_delay, self.neighbor_delay, self.origin_delay
        for a, b in (lo, mid, hi):
            if not 0 < a <= b:
                raise DomainError(f"bad delay range [{a}, {b}]")
        if not (lo[1] < mid[0] and mid[1] < hi[0]):
            raise DomainError("delay ranges must be ordered local < neighbor < origin")

    def rate(self, server: int) -> float:
        if self.arrival_rates is None:
            return self.arrival_rate
        return self.arrival_rates[server - 1]


def _rng(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def zipf_pmf(V: int, alpha: float) -> np.ndarray:
    """q_i proportional to i**-alpha, i = 1..V."""
    if V < 1:
        raise DomainError("need at least one video")
    if alpha < 0:
        raise DomainError("alpha must be >= 0")
    w = np.arange(1, V + 1, dtype=float) ** -alpha
    return w / math.fsum(w)


def popularity_permutation(params: WorkloadParams, seed: int, server: int) -> np.ndarray:
    """Title (1-based) at each popularity rank for ``server``."""
    if not params.shuffle_popularity:
        return np.arange(1, params.num_videos + 1)
    return _rng(seed, _PERMUTATION, server).permutation(params.num_videos) + 1


def generate_trace(params: WorkloadParams, seed: int, num_servers: int = 3) -> list:
    """Time-ordered requests from every server, ids numbered 1.. in that order."""
    pmf = zipf_pmf(params.num_videos, params.zipf_alpha)
    n = params.requests_per_server
    rows = []
    for j in range(1, num_servers + 1):
        gaps = _rng(seed, _ARRIVALS, j).exponential(60.0 / params.rate(j), size=n)
        times = np.cumsum(gaps)
        ranks = _rng(seed, _VIDEOS, j).choice(params.num_videos, size=n, p=pmf)
        titles = popularity_permutation(params, seed, j)[ranks]
        levels = _rng(seed, _LEVELS, j).integers(1, params.num_levels + 1, size=n)
        rows.extend(
            (float(t), j, seq, int(v), int(lv))
            for seq, (t, v, lv) in enumerate(zip(times, titles, levels))
        )
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return [
        Request(i, j, VariantId(v, lv), t, params.video_length)
        for i, (t, j, _, v, lv) in enumerate(rows, start=1)
    ]


def sample_topology(K: int, params: WorkloadParams, seed: int) -> Topology:
    if K < 1:
        raise DomainError("need at least one server")
    rng = _rng(seed, _TOPOLOGY)
    local = rng.uniform(*params.local_delay, size=K)
    origin = rng.uniform(*params.origin_delay, size=K)
    pair = [[0.0] * K for _ in range(K)]
    for a in range(K):
        for b in range(a + 1, K):
            pair[a][b] = pair[b][a] = float(rng.uniform(*params.neighbor_delay))
    return Topology.build([float(x) for x in local], pair, [float(x) for x in origin])


def write_trace(requests, fh) -> None:
    """``arrival_time_s, server, video, level`` per line, in trace order."""
    fh.write("# arrival_time_s, server, video, level\n")
    for r in requests:
        fh.write(f"{r.arrival_time!r}, {r.home}, {r.variant.video}, {r.variant.level}\n")


def read_trace(fh, video_length: float) -> list:
    rows = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            t, j, v, lv = (x.strip() for x in line.split(","))
            rows.append((float(t), int(j), len(rows), int(v), int(lv)))
        except ValueError as exc:
            raise ValueError(f"trace line {lineno}: {line!r}: {exc}") from None
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return [
        Request(i, j, VariantId(v, lv), t, video_length)
        for i, (t, j, _, v, lv) in enumerate(rows, start=1)
    ]
