import random

import pytest

from mecsim.cache import LruCache
from mecsim.model import (
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
)
from mecsim.policy import (
    SystemState,
    apply_decision,
    schedule_cachepro,
    schedule_cocache,
    schedule_jccp,
)

# sizes 1..4 bytes and tau = 1 so that p_l = l
TINY = Catalog(5, 4, (8.0, 16.0, 24.0, 32.0), 1.0)
UNIT = CostParams(1)
TOPO = Topology.build([5, 6, 7], [[0, 40, 25], [40, 0, 30], [25, 30, 0]], [150, 160, 170])


def state(caps=(10, 10, 10), cache=1000, catalog=TINY, params=UNIT, topo=TOPO, home_transcode=True):
    procs = {j: caps[j - 1] for j in topo.servers}
    return SystemState.empty(topo, catalog, params, {j: cache for j in topo.servers}, procs, home_transcode)


def put(st, server, video, level):
    st.caches[server].insert(VariantId(video, level), st.catalog.size(level))


def req(home, video, level, rid=1):
    return Request(rid, home, VariantId(video, level), 0.0, 1.0)


def test_jccp_local_hit_wins():
    st = state()
    put(st, 1, 1, 2)
    put(st, 2, 1, 2)
    assert schedule_jccp(req(1, 1, 2), st) == LocalHit()


def test_jccp_local_transcode():
    st = state()
    put(st, 1, 1, 4)
    assert schedule_jccp(req(1, 1, 2), st) == LocalTranscode(4)


def test_jccp_empty_is_origin():
    assert schedule_jccp(req(1, 1, 2), state()) == OriginFetch()


def test_jccp_prefers_exact_neighbor_over_transcode():
    st = state()
    put(st, 2, 1, 4)
    put(st, 3, 1, 2)
    assert schedule_jccp(req(1, 1, 2), st) == NeighborFetch(3)


def test_jccp_nearest_exact_neighbor():
    st = state()
    put(st, 2, 1, 2)
    put(st, 3, 1, 2)
    assert schedule_jccp(req(1, 1, 2), st) == NeighborFetch(3)  # d=25 beats d=40


def test_jccp_four_candidate_argmax():
    # headrooms before the new load: home 1, k1 2, k2 5; p_1 = 1
    st = state(caps=(1, 2, 5))
    put(st, 2, 1, 3)
    put(st, 3, 1, 4)
    # Q: k1@k1 = 1, k2@k2 = 4, k1@home = 0, k2@home = 0
    assert schedule_jccp(req(1, 1, 1), st) == NeighborTranscodeAtSource(3, 4)


def test_jccp_home_site_when_sources_full():
    st = state(caps=(5, 0, 0))
    put(st, 3, 1, 4)
    # the source has no headroom, the home does
    assert schedule_jccp(req(1, 1, 2), st) == NeighborTranscodeAtHome(3, 4)
    st2 = state(caps=(5, 0, 0), home_transcode=False)
    put(st2, 3, 1, 4)
    assert schedule_jccp(req(1, 1, 2), st2) == OriginFetch()


def test_jccp_no_headroom_anywhere_goes_to_origin():
    st = state(caps=(1, 1, 1))
    put(st, 1, 1, 4)
    put(st, 2, 1, 4)
    assert schedule_jccp(req(1, 1, 2), st) == OriginFetch()


def test_cachepro_examples():
    st = state()
    put(st, 1, 1, 2)
    assert schedule_cachepro(req(1, 1, 2), st) == LocalHit()
    put(st, 1, 2, 4)
    assert schedule_cachepro(req(1, 2, 1), st) == LocalTranscode(4)
    put(st, 2, 3, 2)
    assert schedule_cachepro(req(1, 3, 2), st) == OriginFetch()


def test_cocache_examples():
    st = state()
    put(st, 1, 1, 2)
    assert schedule_cocache(req(1, 1, 2), st) == LocalHit()
    put(st, 2, 2, 2)
    put(st, 3, 2, 2)
    assert schedule_cocache(req(1, 2, 2), st) == NeighborFetch(3)  # d=25 vs d=40
    put(st, 1, 4, 4)
    assert schedule_cocache(req(1, 4, 2), st) == OriginFetch()


def test_apply_origin_fetch_default_catalog():
    cat = Catalog.from_relative(10, 2e6, (0.45, 0.55, 0.67, 0.82), 600.0)
    st = state(catalog=cat, params=CostParams.bitrate_equivalent(cat), cache=10**9)
    r = req(2, 1, 1)
    out = apply_decision(r, OriginFetch(), st)
    assert out.origin_bytes == 67_500_000
    assert out.delay == 160
    assert out.cost == 67_500_000 * 160
    assert st.caches[2].contains(VariantId(1, 1))


def test_apply_local_hit_refreshes():
    st = state()
    put(st, 1, 1, 2)
    put(st, 1, 2, 2)
    out = apply_decision(req(1, 1, 2), LocalHit(), st)
    assert (out.cost, out.delay, out.origin_bytes) == (0, 5, 0)
    assert [v for v, _ in st.caches[1].entries()] == [VariantId(1, 2), VariantId(2, 2)]
    assert len(st.caches[1]) == 2


def test_apply_neighbor_transcode_at_home_state_diff():
    st = state()
    put(st, 2, 1, 4)
    put(st, 2, 9, 1)  # makes (1,4) the LRU entry at server 2
    out = apply_decision(req(1, 1, 2), NeighborTranscodeAtHome(2, 4), st)
    assert st.ledger.load(1) == 2 and st.ledger.load(2) == 0
    assert st.caches[1].contains(VariantId(1, 2))
    assert st.caches[2].entries()[0][0] == VariantId(1, 4)  # touched
    assert out.cost == 2 * 40
    assert out.transcode_site == 1


def test_apply_at_source_loads_source():
    st = state()
    put(st, 3, 1, 4)
    apply_decision(req(1, 1, 2), NeighborTranscodeAtSource(3, 4), st)
    assert st.ledger.load(3) == 2 and st.ledger.load(1) == 0


def test_load_is_source_independent():
    a, b = state(), state()
    put(a, 1, 1, 4)
    put(b, 1, 1, 3)
    apply_decision(req(1, 1, 2), LocalTranscode(4), a)
    apply_decision(req(1, 1, 2), LocalTranscode(3), b)
    assert a.ledger.load(1) == b.ledger.load(1) == 2


def _random_state(rng, home_transcode=True):
    st = state(caps=tuple(rng.choice((0, 1, 2, 3, 5, 8)) for _ in range(3)), cache=12, home_transcode=home_transcode)
    for j in (1, 2, 3):
        for _ in range(rng.randint(0, 5)):
            lv = rng.randint(1, 4)
            st.caches[j].insert(VariantId(rng.randint(1, 4), lv), lv)
        for rid in range(rng.randint(0, 3)):
            st.ledger.admit(j, 1000 * j + rid, rng.randint(1, 3), 1.0)
    return st


def test_scheduler_properties_on_random_states():
    rng = random.Random(7)
    for _ in range(2000):
        st = _random_state(rng)
        r = req(rng.randint(1, 3), rng.randint(1, 4), rng.randint(1, 4))
        p = st.load_of(r.variant.level)
        dec = schedule_jccp(r, st)
        site = dec.site(r.home)
        if site is not None:
            assert st.ledger.fits(site, p)  # never over capacity
        assert type(schedule_cachepro(r, st)) in (LocalHit, LocalTranscode, OriginFetch)
        assert type(schedule_cocache(r, st)) in (LocalHit, NeighborFetch, OriginFetch)
        # collaboration with transcoding never goes to origin where exact-copy sharing would not
        if isinstance(dec, OriginFetch):
            assert isinstance(schedule_cocache(r, st), OriginFetch)
            assert isinstance(schedule_cachepro(r, st), OriginFetch)


def test_apply_keeps_invariants_random():
    rng = random.Random(8)
    for _ in range(500):
        st = _random_state(rng)
        rid = 1
        for _ in range(20):
            r = Request(rid, rng.randint(1, 3), VariantId(rng.randint(1, 4), rng.randint(1, 4)), 0.0, 1.0)
            rid += 1
            sched = rng.choice((schedule_jccp, schedule_cachepro, schedule_cocache))
            out = apply_decision(r, sched(r, st), st)
            assert out.cost >= 0
            for c in st.caches.values():
                c.check(deep=True)
            st.ledger.check(deep=True)
            assert st.caches[r.home].contains(r.variant)
