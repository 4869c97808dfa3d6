"""Online request schedulers and the shared post-decision state update."""

from __future__ import annotations

from dataclasses import dataclass, field

from .cache import LruCache, Uncacheable
from .model import (
    Catalog,
    CostParams,
    LocalHit,
    LocalTranscode,
    NeighborFetch,
    NeighborTranscodeAtHome,
    NeighborTranscodeAtSource,
    OriginFetch,
    Request,
    Topology,
    VariantId,
    access_delay,
    decision_cost,
    is_transcode,
    transcode_cost,
    transferred_bytes,
)
from .processing import ProcessingLedger

POLICIES = ("jccp", "cachepro", "cocache", "offline")


class ConsistencyError(RuntimeError):
    """A scheduler's promise could not be honoured when applied."""


@dataclass
class SystemState:
    caches: dict  # server -> LruCache
    ledger: ProcessingLedger
    topology: Topology
    catalog: Catalog
    params: CostParams
    jccp_home_transcode: bool = True

    @classmethod
    def empty(cls, topology, catalog, params, cache_bytes, processing, jccp_home_transcode=True):
        """Fresh state with empty caches; ``cache_bytes``/``processing`` map server -> capacity."""
        caches = {j: LruCache(int(cache_bytes[j])) for j in topology.servers}
        ledger = ProcessingLedger({j: processing[j] for j in topology.servers})
        return cls(caches, ledger, topology, catalog, params, jccp_home_transcode)

    def load_of(self, level):
        return transcode_cost(self.catalog, self.params, level)


@dataclass
class AppliedOutcome:
    decision: object
    cost: float
    delay: float
    origin_bytes: int
    internal_bytes: int
    transcode_site: int = None
    evicted: list = field(default_factory=list)
    cached: bool = True


def _local_steps(request, state):
    j, v = request.home, request.variant
    home = state.caches[j]
    if home.contains(v):
        return LocalHit()
    h = home.closest_transcodable(v)
    if h is not None and state.ledger.fits(j, state.load_of(v.level)):
        return LocalTranscode(h)
    return None


def _nearest_exact_holder(request, state):
    j, v = request.home, request.variant
    d = state.topology.cost[j]
    holders = [k for k in state.topology.servers if k != j and state.caches[k].contains(v)]
    if not holders:
        return None
    return NeighborFetch(min(holders, key=lambda k: (d[k], k)))


def schedule_jccp(request: Request, state: SystemState):
    """Online JCCP: first applicable branch among local hit, local transcode,
    nearest neighbor copy, neighbor transcode (most headroom), origin."""
    decision = _local_steps(request, state)
    if decision is not None:
        return decision
    decision = _nearest_exact_holder(request, state)
    if decision is not None:
        return decision

    j, v = request.home, request.variant
    p = state.load_of(v.level)
    ledger, d = state.ledger, state.topology.cost[j]
    best, best_key = None, None
    for k in state.topology.servers:
        if k == j:
            continue
        h = state.caches[k].closest_transcodable(v)
        if h is None:
            continue
        sites = [(k, 1)]
        if state.jccp_home_transcode:
            sites.append((j, 0))
        for site, at_source in sites:
            if not ledger.fits(site, p):
                continue
            # Most headroom wins; then at-source, cheaper path, lower index.
            key = (ledger.headroom(site, p), at_source, -d[k], -k)
            if best_key is None or key > best_key:
                best_key = key
                best = NeighborTranscodeAtSource(k, h) if at_source else NeighborTranscodeAtHome(k, h)
    if best is not None:
        return best
    return OriginFetch()


def schedule_cachepro(request: Request, state: SystemState):
    """Local caching plus local transcoding; never looks at neighbors."""
    return _local_steps(request, state) or OriginFetch()


def schedule_cocache(request: Request, state: SystemState):
    """Collaborative caching of exact variants; never transcodes."""
    if state.caches[request.home].contains(request.variant):
        return LocalHit()
    return _nearest_exact_holder(request, state) or OriginFetch()


SCHEDULERS = {
    "jccp": schedule_jccp,
    "cachepro": schedule_cachepro,
    "cocache": schedule_cocache,
}


def read_location(request, decision):
    """(server, variant) whose cached copy the decision reads, or None for origin."""
    v = request.variant
    if isinstance(decision, LocalHit):
        return request.home, v
    if isinstance(decision, LocalTranscode):
        return request.home, VariantId(v.video, decision.from_level)
    if isinstance(decision, NeighborFetch):
        return decision.source, v
    if isinstance(decision, (NeighborTranscodeAtSource, NeighborTranscodeAtHome)):
        return decision.source, VariantId(v.video, decision.from_level)
    return None


def apply_decision(request: Request, decision, state: SystemState, admit: bool = True) -> AppliedOutcome:
    """Commit ``decision``: reserve processing, refresh the read entry, cache
    the delivered variant at home, and report cost/delay/traffic.

    ``admit=False`` skips the reservation (the offline policy rebuilds the
    ledger from its own schedule).
    """
    j, v = request.home, request.variant
    site = decision.site(j)
    if admit and site is not None:
        p = state.load_of(v.level)
        if not state.ledger.admit(site, request.id, p, request.departure_time):
            raise ConsistencyError(
                f"request {request.id}: {decision} approved but server {site} lacks capacity"
            )
    loc = read_location(request, decision)
    if loc is not None:
        server, variant = loc
        if not state.caches[server].touch(variant):
            raise ConsistencyError(f"request {request.id}: {variant} not cached at server {server}")

    size = state.catalog.size(v.level)
    evicted, cached = [], True
    try:
        evicted = state.caches[j].insert(v, size)
    except Uncacheable:
        cached = False

    return AppliedOutcome(
        decision=decision,
        cost=decision_cost(decision, request, state.catalog, state.topology),
        delay=access_delay(decision, request, state.topology),
        origin_bytes=size if isinstance(decision, OriginFetch) else 0,
        internal_bytes=transferred_bytes(decision, request, state.catalog),
        transcode_site=site if is_transcode(decision) else None,
        evicted=evicted,
        cached=cached,
    )
