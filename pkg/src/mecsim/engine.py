"""Discrete-event simulation of request arrivals and stream departures."""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

from .model import DECISION_KINDS, OriginFetch, decision_cost
from .offline import Reoptimizer
from .policy import SCHEDULERS, ConsistencyError, SystemState, apply_decision
from .processing import compute_utilization
from .workload import generate_trace, sample_topology

TB = 1e12

LOG_COLUMNS = (
    "request_id",
    "time",
    "server",
    "video",
    "level",
    "decision_type",
    "source",
    "transcode_site",
    "cost",
    "delay_ms",
    "origin_bytes",
)


@dataclass(frozen=True)
class DecisionRecord:
    request_id: int
    time: float
    server: int
    video: int
    level: int
    decision: object
    cost: float
    delay_ms: float
    origin_bytes: int
    internal_bytes: int
    transcode_site: int = None

    @property
    def decision_type(self) -> str:
        return self.decision.kind

    def row(self) -> tuple:
        src = self.decision.source
        return (
            self.request_id,
            repr(self.time),
            self.server,
            self.video,
            self.level,
            self.decision_type,
            "" if src is None else src,
            "" if self.transcode_site is None else self.transcode_site,
            repr(self.cost),
            repr(self.delay_ms),
            self.origin_bytes,
        )


@dataclass
class MetricsReport:
    requests: int
    hit_ratio: float
    avg_access_delay: float  # ms
    external_traffic: int  # bytes drawn from the origin
    internal_traffic: int  # bytes moved between edge servers
    total_backhaul_cost: float
    processing_utilization: dict  # server -> fraction
    mean_utilization: float
    counts: dict = field(default_factory=dict)
    horizon: float = 0.0
    solver_nodes: int = 0

    @property
    def external_traffic_tb(self) -> float:
        return self.external_traffic / TB


class InvariantViolation(AssertionError):
    pass


class Simulation:
    """One policy on one trace.  Caches start empty; every request is decided
    on arrival and releases its processing slot on departure."""

    def __init__(
        self,
        policy,
        trace,
        topology,
        catalog,
        params,
        cache_bytes,
        processing,
        warmup_requests=0,
        check_invariants=True,
        jccp_home_transcode=True,
        keep_log=True,
    ):
        if policy != "offline" and policy not in SCHEDULERS:
            raise ValueError(f"unknown policy {policy!r}")
        self.policy = policy
        self.trace = list(trace)
        servers = topology.servers
        if not isinstance(cache_bytes, dict):
            cache_bytes = {j: cache_bytes for j in servers}
        if not isinstance(processing, dict):
            processing = {j: processing for j in servers}
        self.state = SystemState.empty(
            topology, catalog, params, cache_bytes, processing, jccp_home_transcode
        )
        self.warmup = warmup_requests
        self.check_invariants = check_invariants
        self.keep_log = keep_log
        self.log = []
        self.reoptimizer = Reoptimizer(self.state) if policy == "offline" else None

    def _check(self):
        try:
            for c in self.state.caches.values():
                c.check()
            self.state.ledger.check()
        except AssertionError as exc:
            raise InvariantViolation(str(exc)) from None

    def _decide_offline(self, request):
        """Re-solve for everything in service plus ``request``, move processing
        reservations to match the new schedule, and return the newcomer's decision."""
        state, ledger = self.state, self.state.ledger
        picks = self.reoptimizer.solve(request)
        moved = []
        for rid, opt in picks.items():
            held = ledger.active.get(rid)
            if held is None and opt.site is None:
                continue
            if held is not None and held.server == opt.site:
                continue
            if held is not None:
                ledger.release(rid)
            if opt.site is not None:
                moved.append((rid, opt))
        for rid, opt in moved:
            r = self.reoptimizer.requests[rid]
            if not ledger.admit(opt.site, rid, opt.load, r.departure_time):
                raise ConsistencyError(f"offline schedule overloads server {opt.site}")
        return picks[request.id].decision

    def run(self) -> MetricsReport:
        state = self.state
        ledger = state.ledger
        scheduler = SCHEDULERS.get(self.policy)
        departures = []  # (time, request id)
        counts = dict.fromkeys(DECISION_KINDS, 0)
        n = origin = ext = internal = 0
        cost_sum = delay_sum = 0.0
        last_time = 0.0

        for idx, req in enumerate(self.trace):
            while departures and departures[0][0] <= req.arrival_time:
                t, rid = heapq.heappop(departures)
                ledger.advance(t)
                ledger.release(rid)
                if scheduler is None:
                    self.reoptimizer.depart(rid)
                if self.check_invariants:
                    self._check()
            ledger.advance(req.arrival_time)

            if scheduler is None:
                decision = self._decide_offline(req)
                outcome = apply_decision(req, decision, state, admit=False)
                self.reoptimizer.cache_changed({req.variant.video, *(v.video for v in outcome.evicted)})
            else:
                decision = scheduler(req, state)
                outcome = apply_decision(req, decision, state)
            heapq.heappush(departures, (req.departure_time, req.id))
            last_time = max(last_time, req.departure_time)
            if self.check_invariants:
                self._check()

            if idx < self.warmup:
                continue
            n += 1
            counts[decision.kind] += 1
            cost_sum += outcome.cost
            delay_sum += outcome.delay
            ext += outcome.origin_bytes
            internal += outcome.internal_bytes
            if isinstance(decision, OriginFetch):
                origin += 1
            if self.keep_log:
                self.log.append(
                    DecisionRecord(
                        req.id, req.arrival_time, req.home, req.variant.video, req.variant.level,
                        decision, outcome.cost, outcome.delay, outcome.origin_bytes,
                        outcome.internal_bytes, outcome.transcode_site,
                    )
                )

        while departures:
            t, rid = heapq.heappop(departures)
            ledger.advance(t)
            ledger.release(rid)
            if self.check_invariants:
                self._check()
        if self.check_invariants:
            try:
                for c in state.caches.values():
                    c.check(deep=True)
                ledger.check(deep=True)
            except AssertionError as exc:
                raise InvariantViolation(str(exc)) from None

        per, mean = compute_utilization(ledger, last_time)
        return MetricsReport(
            requests=n,
            hit_ratio=(1.0 - origin / n) if n else 0.0,
            avg_access_delay=(delay_sum / n) if n else 0.0,
            external_traffic=ext,
            internal_traffic=internal,
            total_backhaul_cost=cost_sum,
            processing_utilization=per,
            mean_utilization=mean,
            counts=counts,
            horizon=last_time,
            solver_nodes=self.reoptimizer.nodes if self.reoptimizer else 0,
        )


def build(config, policy=None, seed=None, keep_log=True) -> Simulation:
    """Simulation for one (policy, seed) of a non-sweep ``config``."""
    policy = policy or config.policy[0]
    seed = config.seeds[0] if seed is None else seed
    catalog = config.catalog()
    wl = config.workload()
    topology = sample_topology(config.num_servers, wl, seed)
    trace = generate_trace(wl, seed, config.num_servers)
    return Simulation(
        policy,
        trace,
        topology,
        catalog,
        config.cost_params(catalog),
        config.cache_capacity(catalog),
        config.processing_capacity(),
        warmup_requests=config.warmup_requests,
        check_invariants=config.check_invariants,
        jccp_home_transcode=config.jccp_home_transcode,
        keep_log=keep_log,
    )


def run(config, policy=None, seed=None) -> MetricsReport:
    return build(config, policy, seed, keep_log=False).run()


def timed_run(config, policy=None, seed=None):
    t0 = time.perf_counter()
    report = run(config, policy, seed)
    return report, (time.perf_counter() - t0) * 1000.0


def write_log(records, fh) -> None:
    fh.write(", ".join(LOG_COLUMNS) + "\n")
    for rec in records:
        fh.write(", ".join(str(x) for x in rec.row()) + "\n")


def replay_cost(records, trace, catalog, topology) -> float:
    """Sum of decision costs recomputed from logged decisions, in log order."""
    by_id = {r.id: r for r in trace}
    total = 0.0
    for rec in records:
        total += decision_cost(rec.decision, by_id[rec.request_id], catalog, topology)
    return total
