"""Exact re-solve of the request-scheduling integer program for the set of
requests currently being served, with caches held fixed.

Every option carries an integer cost and an integer processing load obtained
by scaling the (float) delays and loads by a common denominator, so both
solvers compare objectives exactly.
"""

from __future__ import annotations

import bisect
import functools
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .model import (
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

EXHAUSTIVE_LIMIT = 10**7


class Infeasible(Exception):
    pass


class TooLarge(Exception):
    pass


def _lcd(values) -> int:
    den = 1
    for x in values:
        den = math.lcm(den, Fraction(x).denominator)
    return den


@dataclass(frozen=True)
class Option:
    decision: object
    cost: float  # backhaul cost as in decision_cost
    site: int  # server hosting the transcode, None if no processing
    load: float
    icost: int  # scaled exact cost
    iload: int  # scaled exact load


@functools.lru_cache(maxsize=64)
def _scaling(topology, capacities, loads):
    """Integer images of delays, capacities and loads under common denominators."""
    finite = [c for _, c in capacities if not math.isinf(c)]
    cost_scale = _lcd(x for row in topology.cost for x in row)
    load_scale = _lcd([p for _, p in loads] + finite)
    dint = tuple(tuple(int(Fraction(x) * cost_scale) for x in row) for row in topology.cost)
    icap = {j: None if math.isinf(c) else int(Fraction(c) * load_scale) for j, c in capacities}
    iload = {lv: int(Fraction(p) * load_scale) for lv, p in loads}
    return cost_scale, dint, icap, iload


class SchedulingInstance:
    """Requests in service, a view of every cache, and the capacities.

    ``cache`` maps server -> iterable of VariantId (copied into a frozen
    snapshot); ``sizes``/``loads`` map level -> bytes / processing units;
    ``capacities`` maps server -> P_j.
    """

    def __init__(self, requests, cache, topology: Topology, capacities, sizes, loads):
        self.requests = list(requests)
        self.topology = topology
        self.capacities = dict(capacities)
        self.sizes = dict(sizes)
        self.loads = dict(loads)
        self.cache = {j: frozenset(cache.get(j, ())) for j in topology.servers}
        self._levels = {}
        for j, items in self.cache.items():
            for v in items:
                if v.level not in self.sizes:
                    raise ValueError(f"cached {v} has no known size")
                self._levels.setdefault((j, v.video), set()).add(v.level)
        self._live = None
        self.cost_scale, self._dint, self.icapacity, self._iload = _scaling(
            topology, tuple(sorted(self.capacities.items())), tuple(sorted(self.loads.items()))
        )

    @classmethod
    def from_state(cls, requests, state, live=False):
        """Instance over the engine's caches; ``live=True`` reads the caches in
        place instead of copying them (valid only until they next change)."""
        cat = state.catalog
        levels = range(1, cat.num_levels + 1)
        inst = cls(
            requests,
            {} if live else {j: [v for v, _ in c.entries()] for j, c in state.caches.items()},
            state.topology,
            state.ledger.capacity,
            {lv: cat.size(lv) for lv in levels},
            {lv: state.load_of(lv) for lv in levels},
        )
        if live:
            inst._live = state.caches
        return inst

    def holds(self, server, variant) -> bool:
        if self._live is not None:
            return self._live[server].contains(variant)
        return variant in self.cache[server]

    def closest_transcodable(self, server, variant):
        if self._live is not None:
            return self._live[server].closest_transcodable(variant)
        above = [h for h in self._levels.get((server, variant.video), ()) if h > variant.level]
        return min(above) if above else None

    def exact_cost(self, icost: int) -> Fraction:
        return Fraction(icost, self.cost_scale)


def enumerate_options(request: Request, instance: SchedulingInstance) -> list:
    """Every decision the cache snapshot permits, in a fixed canonical order."""
    j, v = request.home, request.variant
    size = instance.sizes[v.level]
    p, ip = instance.loads[v.level], instance._iload[v.level]
    d, dint = instance.topology.cost[j], instance._dint[j]

    opts = []
    if instance.holds(j, v):
        opts.append(Option(LocalHit(), 0.0, None, 0.0, 0, 0))
    h = instance.closest_transcodable(j, v)
    if h is not None:
        opts.append(Option(LocalTranscode(h), 0.0, j, p, 0, ip))
    for k in instance.topology.servers:
        if k != j and instance.holds(k, v):
            opts.append(Option(NeighborFetch(k), size * d[k], None, 0.0, size * dint[k], 0))
    for k in instance.topology.servers:
        if k == j:
            continue
        h = instance.closest_transcodable(k, v)
        if h is not None:
            c, ic = size * d[k], size * dint[k]
            opts.append(Option(NeighborTranscodeAtSource(k, h), c, k, p, ic, ip))
            opts.append(Option(NeighborTranscodeAtHome(k, h), c, j, p, ic, ip))
    opts.append(Option(OriginFetch(), size * d[0], None, 0.0, size * dint[0], 0))
    return opts


@dataclass
class Schedule:
    decisions: dict  # request id -> decision, in instance order
    icost: int
    instance: SchedulingInstance
    nodes: int = 0

    @property
    def objective(self) -> float:
        return float(self.instance.exact_cost(self.icost))

    @property
    def objective_exact(self) -> Fraction:
        return self.instance.exact_cost(self.icost)

    def placements(self) -> dict:
        """request id -> (server, load) for requests that occupy processing."""
        out = {}
        for r in self.instance.requests:
            site = self.decisions[r.id].site(r.home)
            if site is not None:
                out[r.id] = (site, self.instance.loads[r.variant.level])
        return out

    def check(self) -> None:
        """Assert one permitted decision per request and per-server capacity."""
        inst = self.instance
        assert set(self.decisions) == {r.id for r in inst.requests}
        used = {j: 0 for j in inst.topology.servers}
        total = 0
        for r in inst.requests:
            opts = {o.decision: o for o in enumerate_options(r, inst)}
            dec = self.decisions[r.id]
            assert dec in opts, f"request {r.id}: {dec} not permitted by the snapshot"
            total += opts[dec].icost
            if opts[dec].site is not None:
                used[opts[dec].site] += opts[dec].iload
        assert total == self.icost, "objective does not match decisions"
        for j, u in used.items():
            cap = inst.icapacity[j]
            assert cap is None or u <= cap, f"server {j} over processing capacity"


def solve_exhaustive(instance: SchedulingInstance, limit: int = EXHAUSTIVE_LIMIT) -> Schedule:
    """Brute force over the Cartesian product of options; first minimum wins."""
    reqs = instance.requests
    table = [enumerate_options(r, instance) for r in reqs]
    if math.prod(len(t) for t in table) > limit:
        raise TooLarge(f"{math.prod(len(t) for t in table)} combinations exceed {limit}")
    cap = instance.icapacity
    best, best_cost = None, None
    for combo in itertools.product(*table):
        used = {j: 0 for j in instance.topology.servers}
        ok = True
        for o in combo:
            if o.site is not None:
                used[o.site] += o.iload
                if cap[o.site] is not None and used[o.site] > cap[o.site]:
                    ok = False
                    break
        if not ok:
            continue
        cost = sum(o.icost for o in combo)
        if best_cost is None or cost < best_cost:
            best, best_cost = combo, cost
    if best is None:
        raise Infeasible("no schedule satisfies the processing capacities")
    return Schedule({r.id: o.decision for r, o in zip(reqs, best)}, best_cost, instance)


class _Choice:
    """A request's options after dominance reduction.

    A processing option costing no less than the best processing-free option
    is dominated: swapping to the free option never raises cost and releases
    capacity.  ``paid`` holds the survivors as (site, saving, option), best
    saving first.
    """

    __slots__ = ("free", "base", "paid", "weight", "signature", "density_key")

    def __init__(self, opts):
        free = min((o for o in opts if o.site is None), key=lambda o: o.icost)
        paid = [o for o in opts if o.site is not None and o.icost < free.icost]
        ranked = sorted(
            ((o.site, free.icost - o.icost, n, o) for n, o in enumerate(paid)),
            key=lambda t: (-t[1], t[2]),
        )
        self.free = free
        self.base = free.icost
        self.paid = [(site, gain, o) for site, gain, _, o in ranked]
        self.weight = paid[0].iload if paid else 0
        # best saving per unit of load, descending; load-free items first
        self.density_key = (1, -Fraction(self.paid[0][1], self.weight)) if self.weight else (0, 0)
        # requests with equal signatures are interchangeable
        self.signature = (self.base, self.weight, tuple((s, g) for s, g, _ in self.paid))


def _line_search(items, mu, site, rem):
    """Best multiplier for ``site`` with the others held fixed, counting only
    options that fit the residual capacities ``rem``."""
    breaks = []
    for it in items:
        w = it.weight
        if w == 0:
            continue
        at_site, elsewhere = 0, 0
        for s, g, _ in it.paid:
            if rem[s] < w:
                continue
            if s == site:
                if g > at_site:
                    at_site = g
            elif g - mu[s] * w > elsewhere:
                elsewhere = g - mu[s] * w
        if at_site > elsewhere:
            breaks.append(((at_site - elsewhere) // w, w))
    breaks.sort(reverse=True)
    acc, cap = 0, rem[site]
    for beta, w in breaks:
        acc += w
        if acc > cap:
            return beta
    return 0


def _reachable_sums(weights, caps, limit=20_000):
    """Per site, every total of the given loads (with repetition) up to its
    capacity, sorted; empty when there would be more than ``limit``."""
    weights = sorted(w for w in weights if w)
    out = {}
    for j, cap in caps.items():
        seen = {0}
        stack = [0]
        while stack and len(seen) <= limit:
            x = stack.pop()
            for w in weights:
                y = x + w
                if y > cap:
                    break
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        out[j] = sorted(seen) if len(seen) <= limit else []
    return out


def _seed(items, order, hint, rem, cost):
    """Feasible option indices keeping every hinted option that still exists
    and fits, then adding best fitting options greedily in branching order."""
    taken = [len(it.paid) for it in items]
    for t, (i, it) in enumerate(zip(order, items)):
        o = hint.get(i)
        for x, (s, g, p) in enumerate(it.paid):
            if p == o and rem[s] >= it.weight:
                rem[s] -= it.weight
                taken[t] = x
                cost -= g
                break
    for t, it in enumerate(items):
        if taken[t] < len(it.paid):
            continue
        for x, (s, g, _) in enumerate(it.paid):
            if rem[s] >= it.weight:
                rem[s] -= it.weight
                taken[t] = x
                cost -= g
                break
    return taken, cost


def _branch_and_bound(choices, icap, sites, first=None, memo=None, hint=None):
    """Minimise total cost over ``choices`` (one per request) subject to the
    scaled capacities ``icap``.  Returns (picked options, cost, nodes).

    Requests with no surviving paid option are fixed to their free option.
    The rest are branched depth first, best saving per unit of load first,
    except position ``first``, which goes first so that ties among optimal
    schedules favour its cheapest option.  A node is pruned when its bound
    reaches the incumbent.  The bound is the smaller of two relaxations over
    the open requests: each takes its best option still fitting the residual
    capacities, or the Lagrangian relaxation of those capacities with
    multipliers refreshed by one coordinate pass per node.
    Interchangeable requests are adjacent in the order and take option
    indices in non-decreasing order, so their permutations are not revisited.

    ``memo`` (a dict) remembers solved searches; a search is fully determined
    by the ordered item signatures and the capacities.  ``hint`` (position ->
    Option, e.g. the previous schedule) seeds the incumbent; the search then
    looks for schedules no costlier than it, so tie-breaking is unchanged.
    """
    picks = [c.free for c in choices]
    fixed_cost = sum(c.base for c in choices)
    order = [i for i, c in enumerate(choices) if c.paid]
    order.sort(key=lambda i: (i != first, choices[i].density_key, choices[i].signature, i))
    items = [choices[i] for i in order]
    n = len(items)
    twin = [t > 0 and items[t].signature == items[t - 1].signature for t in range(n)]

    # Unconstrained optimum: every item takes its best paid option.
    used = dict.fromkeys(sites, 0)
    for it in items:
        used[it.paid[0][0]] += it.weight
    if all(icap[j] is None or used[j] <= icap[j] for j in sites):
        for i, it in zip(order, items):
            picks[i] = it.paid[0][2]
        return picks, fixed_cost - sum(it.paid[0][1] for it in items), 0

    key = None
    if memo is not None:
        key = (first is not None and order[:1] == [first], tuple(it.signature for it in items),
               tuple(icap[j] for j in sites))
        hit = memo.get(key)
        if hit is not None:
            taken, saving = hit
            for i, it, x in zip(order, items, taken):
                picks[i] = it.paid[x][2] if x < len(it.paid) else it.free
            return picks, fixed_cost - saving, 0

    rem = {j: (icap[j] if icap[j] is not None else math.inf) for j in sites}
    bounded = [j for j in sites if icap[j] is not None]
    mu = dict.fromkeys(sites, 0)
    sums = _reachable_sums({it.weight for it in items}, {j: icap[j] for j in bounded})

    def max_saving(t):
        open_items = items[t:]
        for j in bounded:
            mu[j] = _line_search(open_items, mu, j, rem)
        plain = 0
        lag = 0
        for j in bounded:
            if mu[j]:
                # no completion can use more than the largest load total that fits
                reach = sums[j]
                lag += mu[j] * (reach[bisect.bisect_right(reach, rem[j]) - 1] if reach else rem[j])
        for it in open_items:
            w = it.weight
            bp = bl = 0
            for s, g, _ in it.paid:
                if rem[s] >= w:
                    if g > bp:
                        bp = g
                    v = g - mu[s] * w
                    if v > bl:
                        bl = v
            plain += bp
            lag += bl
        return min(plain, lag)

    best_cost = math.inf
    best = None
    if hint:
        best, seed_cost = _seed(items, order, hint, dict(rem), fixed_cost)
        best_cost = seed_cost + 1  # costs are integers: accept ties with the seed
    chosen = [None] * n
    nodes = 0

    def dfs(t, acc, lo):
        # acc: cost so far with every open item still at its free option;
        # lo: first option index allowed (the free option has index len(paid))
        nonlocal best_cost, best, nodes
        nodes += 1
        if t == n:
            if acc < best_cost:
                best_cost, best = acc, list(chosen)
            return
        if acc - max_saving(t) >= best_cost:
            return
        it = items[t]
        nxt = twin[t + 1] if t + 1 < n else False
        paid = it.paid
        for x in range(lo, len(paid)):
            s, g, o = paid[x]
            if rem[s] >= it.weight:
                rem[s] -= it.weight
                chosen[t] = x
                dfs(t + 1, acc - g, x if nxt else 0)
                rem[s] += it.weight
        chosen[t] = len(paid)
        dfs(t + 1, acc, len(paid) if nxt else 0)

    dfs(0, fixed_cost, 0)
    if hint and best_cost == seed_cost + 1:
        best_cost = seed_cost
    for i, it, x in zip(order, items, best):
        picks[i] = it.paid[x][2] if x < len(it.paid) else it.free
    if key is not None:
        if len(memo) >= 256:
            memo.pop(next(iter(memo)))
        memo[key] = (best, fixed_cost - best_cost)
    return picks, best_cost, nodes


def solve_bnb(instance: SchedulingInstance, first=None) -> Schedule:
    """Exact minimum-cost schedule by branch and bound (see _branch_and_bound).

    ``first`` is a request id whose own cost is preferred among ties.
    """
    reqs = instance.requests
    choices = [_Choice(enumerate_options(r, instance)) for r in reqs]
    pos = next((i for i, r in enumerate(reqs) if r.id == first), None)
    picks, cost, nodes = _branch_and_bound(
        choices, instance.icapacity, list(instance.topology.servers), pos
    )
    return Schedule({r.id: o.decision for r, o in zip(reqs, picks)}, cost, instance, nodes)


class Reoptimizer:
    """Re-solves the schedule of everything in service at each arrival.

    Option tables are cached per request and dropped whenever any cache gains
    or loses a variant of that request's video, so each arrival only
    re-enumerates what changed.
    """

    def __init__(self, state):
        self.instance = SchedulingInstance.from_state([], state, live=True)
        self.sites = list(state.topology.servers)
        self.requests = {}
        self._choices = {}
        self._by_video = {}
        self._memo = {}
        self._last = {}  # request id -> option in the latest schedule
        self.nodes = 0

    def _choice(self, r):
        c = self._choices.get(r.id)
        if c is None:
            c = self._choices[r.id] = _Choice(enumerate_options(r, self.instance))
        return c

    def solve(self, request):
        """Options chosen for every request in service plus ``request``
        (as request id -> Option), which joins the in-service set."""
        self.requests[request.id] = request
        self._by_video.setdefault(request.variant.video, set()).add(request.id)
        reqs = list(self.requests.values())
        choices = [self._choice(r) for r in reqs]
        picks, _, nodes = _branch_and_bound(
            choices, self.instance.icapacity, self.sites, len(reqs) - 1, self._memo,
            {i: self._last[r.id] for i, r in enumerate(reqs) if r.id in self._last},
        )
        self.nodes += nodes
        self._last = {r.id: o for r, o in zip(reqs, picks)}
        return dict(self._last)

    def cache_changed(self, videos) -> None:
        for v in videos:
            for rid in self._by_video.get(v, ()):
                self._choices.pop(rid, None)

    def depart(self, request_id) -> None:
        r = self.requests.pop(request_id, None)
        if r is None:
            return
        self._choices.pop(request_id, None)
        ids = self._by_video[r.variant.video]
        ids.discard(request_id)
        if not ids:
            del self._by_video[r.variant.video]


def root_bound(instance: SchedulingInstance) -> int:
    """Scaled lower bound used at the root of ``solve_bnb`` (cheapest option
    of every request, ignoring processing)."""
    return sum(min(o.icost for o in enumerate_options(r, instance)) for r in instance.requests)


# --- line-oriented text format -------------------------------------------------


def _decision_fields(dec):
    return f"{dec.kind} {dec.source if dec.source is not None else '-'} " \
           f"{dec.from_level if dec.from_level is not None else '-'}"


def _parse_decision(kind, source, from_level):
    src = None if source == "-" else int(source)
    lvl = None if from_level == "-" else int(from_level)
    return {
        "local_hit": lambda: LocalHit(),
        "local_transcode": lambda: LocalTranscode(lvl),
        "neighbor_fetch": lambda: NeighborFetch(src),
        "neighbor_transcode_at_source": lambda: NeighborTranscodeAtSource(src, lvl),
        "neighbor_transcode_at_home": lambda: NeighborTranscodeAtHome(src, lvl),
        "origin_fetch": lambda: OriginFetch(),
    }[kind]()


def format_instance(instance: SchedulingInstance) -> str:
    """Serialize; ``option`` lines are derived and ignored on reading."""
    topo = instance.topology
    out = [f"servers {topo.num_servers}"]
    for j in topo.servers:
        for k in range(topo.num_servers + 1):
            out.append(f"cost {j} {k} {topo.cost[j][k]!r}")
    for j in topo.servers:
        out.append(f"capacity {j} {float(instance.capacities[j])!r}")
    for lv in sorted(instance.sizes):
        out.append(f"level {lv} {instance.sizes[lv]} {float(instance.loads[lv])!r}")
    for j in topo.servers:
        for v in sorted(instance.cache[j]):
            out.append(f"cache {j} {v.video} {v.level}")
    for r in instance.requests:
        out.append(
            f"request {r.id} {r.home} {r.variant.video} {r.variant.level} "
            f"{r.arrival_time!r} {r.duration!r}"
        )
        for o in enumerate_options(r, instance):
            out.append(
                f"option {r.id} {_decision_fields(o.decision)} {float(o.cost)!r} "
                f"{o.site if o.site is not None else '-'} {float(o.load)!r}"
            )
    return "\n".join(out) + "\n"


def parse_instance(text: str) -> SchedulingInstance:
    K = None
    cost, caps, sizes, loads, cache, reqs = {}, {}, {}, {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split()
        if not line or line[0] == "option":
            continue
        tag, args = line[0], line[1:]
        try:
            if tag == "servers":
                K = int(args[0])
            elif tag == "cost":
                cost[int(args[0]), int(args[1])] = float(args[2])
            elif tag == "capacity":
                caps[int(args[0])] = float(args[1])
            elif tag == "level":
                sizes[int(args[0])] = int(args[1])
                loads[int(args[0])] = float(args[2])
            elif tag == "cache":
                cache.setdefault(int(args[0]), []).append(VariantId(int(args[1]), int(args[2])))
            elif tag == "request":
                rid, home, vid, lvl = map(int, args[:4])
                reqs.append(Request(rid, home, VariantId(vid, lvl), float(args[4]), float(args[5])))
            else:
                raise ValueError(f"unknown record {tag!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"instance line {lineno}: {raw!r}: {exc}") from None
    if K is None:
        raise ValueError("instance lacks a 'servers' line")
    m = [[0.0] * (K + 1) for _ in range(K + 1)]
    for (j, k), x in cost.items():
        m[j][k] = x
    topo = Topology(K, tuple(map(tuple, m)))
    return SchedulingInstance(reqs, cache, topo, caps, sizes, loads)


def format_schedule(schedule: Schedule) -> str:
    out = [f"objective {schedule.objective!r}"]
    for rid, dec in schedule.decisions.items():
        out.append(f"decision {rid} {_decision_fields(dec)}")
    return "\n".join(out) + "\n"


def parse_schedule(text: str) -> dict:
    """request id -> decision (objective line is informational)."""
    out = {}
    for raw in text.splitlines():
        f = raw.split()
        if f and f[0] == "decision":
            out[int(f[1])] = _parse_decision(*f[2:5])
    return out
