"""Per-server transcoding capacity ledger.

Loads are summed as exact rationals so that admission never depends on the
order in which float loads were added or removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class ActiveTranscode:
    request_id: int
    server: int
    load: float
    release_time: float


def _exact(x):
    return None if math.isinf(x) else Fraction(x)


class ProcessingLedger:
    def __init__(self, capacities, start_time=0.0):
        """``capacities`` maps server index -> P_j (``math.inf`` for unlimited)."""
        caps = dict(capacities)
        for j, cap in caps.items():
            if cap < 0:
                raise ValueError(f"negative processing capacity at server {j}")
        self.capacity = caps
        self._cap = {j: _exact(c) for j, c in caps.items()}
        self._load = {j: Fraction(0) for j in caps}
        self.active = {}
        self._now = start_time
        self._start = start_time
        self._area = {j: 0.0 for j in caps}

    @property
    def servers(self):
        return list(self.capacity)

    def load(self, server: int) -> float:
        return float(self._load[server])

    def headroom(self, server: int, p: float) -> float:
        cap = self._cap[server]
        if cap is None:
            return math.inf
        return float(cap - self._load[server] - Fraction(p))

    def fits(self, server: int, p: float) -> bool:
        """Exact form of ``headroom(server, p) >= 0``."""
        cap = self._cap[server]
        return cap is None or self._load[server] + Fraction(p) <= cap

    def admit(self, server: int, request_id: int, p: float, release_time: float) -> bool:
        if request_id in self.active:
            raise ValueError(f"request {request_id} already holds a transcode slot")
        if p < 0:
            raise ValueError("negative transcode load")
        if not self.fits(server, p):
            return False
        self.active[request_id] = ActiveTranscode(request_id, server, p, release_time)
        self._load[server] += Fraction(p)
        return True

    def release(self, request_id: int) -> bool:
        entry = self.active.pop(request_id, None)
        if entry is None:
            return False
        self._load[entry.server] -= Fraction(entry.load)
        return True

    def clear(self) -> None:
        self.active.clear()
        for j in self._load:
            self._load[j] = Fraction(0)

    def recomputed_load(self, server: int) -> float:
        return float(sum((Fraction(a.load) for a in self.active.values() if a.server == server), Fraction(0)))

    def check(self, deep: bool = False) -> None:
        for j, cap in self._cap.items():
            if deep:
                assert self._load[j] == sum(
                    (Fraction(a.load) for a in self.active.values() if a.server == j), Fraction(0)
                ), f"load ledger drifted at server {j}"
            assert cap is None or self._load[j] <= cap, f"processing over capacity at server {j}"

    # time-weighted utilization

    def advance(self, t: float) -> None:
        """Accumulate load/capacity area up to time ``t``."""
        if t < self._now:
            raise ValueError(f"time went backwards: {t} < {self._now}")
        dt = t - self._now
        if dt > 0:
            for j, cap in self._cap.items():
                if cap:
                    self._area[j] += float(self._load[j] / cap) * dt
        self._now = t

    def utilization(self, horizon_end: float = None) -> dict:
        """Per-server time-averaged load/capacity over [start, horizon_end]."""
        end = self._now if horizon_end is None else horizon_end
        if end > self._now:
            self.advance(end)
        span = end - self._start
        if span <= 0:
            return {j: 0.0 for j in self._cap}
        return {j: (self._area[j] / span if self._cap[j] else 0.0) for j in self._cap}


def load(ledger: ProcessingLedger, server: int) -> float:
    return ledger.load(server)


def headroom(ledger: ProcessingLedger, server: int, p: float) -> float:
    return ledger.headroom(server, p)


def admit(ledger: ProcessingLedger, server: int, request_id: int, p: float, release_time: float) -> bool:
    return ledger.admit(server, request_id, p, release_time)


def release(ledger: ProcessingLedger, request_id: int) -> bool:
    return ledger.release(request_id)


def compute_utilization(ledger: ProcessingLedger, horizon_end: float = None):
    """(per-server utilization dict, mean over servers)."""
    per = ledger.utilization(horizon_end)
    mean = sum(per.values()) / len(per) if per else 0.0
    return per, mean
