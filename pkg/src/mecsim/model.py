"""Domain types for multi-bitrate video caching across cooperating edge servers.

Servers are indexed 1..K, with 0 reserved for the origin content server.
Videos are indexed 1..V and bitrate levels 1..L (higher level = higher bitrate).
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence, Union

ORIGIN = 0


class DomainError(ValueError):
    """Raised when an argument falls outside a type's valid domain."""


@dataclass(frozen=True, order=True)
class VariantId:
    video: int
    level: int

    def __str__(self) -> str:
        return f"v{self.video}@{self.level}"


@dataclass(frozen=True)
class Catalog:
    num_videos: int
    num_levels: int
    level_bitrates: tuple  # bits/second, index 0 holds level 1
    video_length: float  # seconds

    def __post_init__(self):
        object.__setattr__(self, "level_bitrates", tuple(float(b) for b in self.level_bitrates))
        if self.num_videos < 1 or self.num_levels < 1:
            raise DomainError("catalog needs at least one video and one level")
        if len(self.level_bitrates) != self.num_levels:
            raise DomainError(
                f"expected {self.num_levels} bitrates, got {len(self.level_bitrates)}"
            )
        if self.video_length <= 0:
            raise DomainError("video_length must be positive")
        if self.level_bitrates[0] <= 0:
            raise DomainError("bitrates must be positive")
        for lo, hi in zip(self.level_bitrates, self.level_bitrates[1:]):
            if not hi > lo:
                raise DomainError("level_bitrates must be strictly increasing")
        sizes = [variant_size(self, lvl) for lvl in range(1, self.num_levels + 1)]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise DomainError("variant sizes collapse after byte rounding")
        object.__setattr__(self, "_sizes", tuple(sizes))

    @classmethod
    def from_relative(cls, num_videos, base_bitrate, relative, video_length):
        """Catalog whose level bitrates are ``base_bitrate * r`` for each ascending ``r``."""
        return cls(num_videos, len(relative), tuple(base_bitrate * r for r in relative), video_length)

    def size(self, level: int) -> int:
        self.check_level(level)
        return self._sizes[level - 1]

    def check_level(self, level: int) -> None:
        if not 1 <= level <= self.num_levels:
            raise DomainError(f"level {level} outside 1..{self.num_levels}")

    def check_variant(self, variant: VariantId) -> None:
        if not 1 <= variant.video <= self.num_videos:
            raise DomainError(f"video {variant.video} outside 1..{self.num_videos}")
        self.check_level(variant.level)

    @property
    def library_size(self) -> int:
        """Bytes needed to store every level of every video."""
        return self.num_videos * sum(self._sizes)


def variant_size(catalog: Catalog, level: int) -> int:
    """Size in whole bytes of any video at ``level`` (round half up)."""
    if not 1 <= level <= catalog.num_levels:
        raise DomainError(f"level {level} outside 1..{catalog.num_levels}")
    exact = Decimal(repr(catalog.level_bitrates[level - 1])) * Decimal(repr(catalog.video_length)) / 8
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class CostParams:
    tau: float  # processing units per byte; a Fraction keeps loads exact

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")

    @classmethod
    def bitrate_equivalent(cls, catalog: Catalog) -> "CostParams":
        """tau such that a transcode's load in b/s equals its output bitrate."""
        return cls(Fraction(8) / Fraction(repr(catalog.video_length)))


def transcode_cost(catalog: Catalog, params: CostParams, level: int) -> float:
    # Source level does not matter: the load depends on the output variant only.
    return float(Fraction(params.tau) * catalog.size(level))


@dataclass(frozen=True)
class Topology:
    """Backhaul cost/delay matrix in milliseconds.

    ``cost[j][k]`` for 1 <= j, k <= K; ``cost[j][j]`` is the local delivery
    delay and ``cost[j][0]`` the origin path.  Row/column 0 of the origin is
    unused except for ``cost[j][0]``.
    """

    num_servers: int
    cost: tuple

    def __post_init__(self):
        K = self.num_servers
        if K < 1:
            raise DomainError("need at least one server")
        rows = tuple(tuple(float(x) for x in row) for row in self.cost)
        if len(rows) != K + 1 or any(len(r) != K + 1 for r in rows):
            raise DomainError(f"cost matrix must be {K + 1}x{K + 1}")
        for j in range(1, K + 1):
            local, origin = rows[j][j], rows[j][0]
            if not local > 0:
                raise DomainError(f"local cost of server {j} must be positive")
            for k in range(1, K + 1):
                if k == j:
                    continue
                if rows[j][k] != rows[k][j]:
                    raise DomainError(f"cost[{j}][{k}] != cost[{k}][{j}]")
                if not origin > rows[j][k] > local:
                    raise DomainError(
                        f"need origin > neighbor > local for servers {j},{k}"
                    )
            if not origin > local:
                raise DomainError(f"origin cost of server {j} must exceed its local cost")
        object.__setattr__(self, "cost", rows)

    @classmethod
    def build(cls, local: Sequence[float], pair: Sequence[Sequence[float]], origin: Sequence[float]):
        """Assemble from per-server vectors; ``pair`` is a KxK matrix (diagonal ignored)."""
        K = len(local)
        m = [[0.0] * (K + 1) for _ in range(K + 1)]
        for j in range(1, K + 1):
            m[j][j] = local[j - 1]
            m[j][0] = origin[j - 1]
            for k in range(1, K + 1):
                if k != j:
                    m[j][k] = pair[j - 1][k - 1]
        return cls(K, tuple(map(tuple, m)))

    @property
    def servers(self) -> range:
        return range(1, self.num_servers + 1)

    def d(self, j: int, k: int) -> float:
        return self.cost[j][k]

    def neighbors(self, j: int) -> list:
        return [k for k in self.servers if k != j]


@dataclass(frozen=True)
class Request:
    id: int
    home: int
    variant: VariantId
    arrival_time: float
    duration: float

    @property
    def departure_time(self) -> float:
        return self.arrival_time + self.duration


# Serving decisions: exactly one per request.


@dataclass(frozen=True)
class LocalHit:
    kind = "local_hit"
    source = None
    from_level = None

    def site(self, home):
        return None


@dataclass(frozen=True)
class LocalTranscode:
    from_level: int
    kind = "local_transcode"
    source = None

    def site(self, home):
        return home


@dataclass(frozen=True)
class NeighborFetch:
    source: int
    kind = "neighbor_fetch"
    from_level = None

    def site(self, home):
        return None


@dataclass(frozen=True)
class NeighborTranscodeAtSource:
    source: int
    from_level: int
    kind = "neighbor_transcode_at_source"

    def site(self, home):
        return self.source


@dataclass(frozen=True)
class NeighborTranscodeAtHome:
    source: int
    from_level: int
    kind = "neighbor_transcode_at_home"

    def site(self, home):
        return home


@dataclass(frozen=True)
class OriginFetch:
    kind = "origin_fetch"
    source = None
    from_level = None

    def site(self, home):
        return None


ServingDecision = Union[
    LocalHit,
    LocalTranscode,
    NeighborFetch,
    NeighborTranscodeAtSource,
    NeighborTranscodeAtHome,
    OriginFetch,
]

DECISION_KINDS = (
    "local_hit",
    "local_transcode",
    "neighbor_fetch",
    "neighbor_transcode_at_source",
    "neighbor_transcode_at_home",
    "origin_fetch",
)

_NEIGHBOR = (NeighborFetch, NeighborTranscodeAtSource, NeighborTranscodeAtHome)
_TRANSCODE = (LocalTranscode, NeighborTranscodeAtSource, NeighborTranscodeAtHome)


def is_transcode(decision) -> bool:
    return isinstance(decision, _TRANSCODE)


def check_decision(decision, request: Request, topology: Topology) -> None:
    """Raise DomainError if ``decision`` cannot serve ``request``."""
    if isinstance(decision, _NEIGHBOR):
        if decision.source == request.home or decision.source not in topology.servers:
            raise DomainError(f"bad neighbor source {decision.source} for home {request.home}")
    if isinstance(decision, _TRANSCODE) and not decision.from_level > request.variant.level:
        raise DomainError("transcoding must start from a higher level")


def path_server(decision, home: int) -> int:
    """Server index whose row entry ``cost[home][.]`` prices the delivery path."""
    if isinstance(decision, (LocalHit, LocalTranscode)):
        return home
    if isinstance(decision, OriginFetch):
        return ORIGIN
    return decision.source


def decision_cost(decision, request: Request, catalog: Catalog, topology: Topology) -> float:
    """Backhaul cost of serving ``request`` with ``decision``.

    Neighbor paths are charged on the requested size even when the bytes moved
    are those of the higher source variant (transcode at home).
    """
    if isinstance(decision, (LocalHit, LocalTranscode)):
        return 0.0
    size = catalog.size(request.variant.level)
    return size * topology.d(request.home, path_server(decision, request.home))


def access_delay(decision, request: Request, topology: Topology) -> float:
    return topology.d(request.home, path_server(decision, request.home))


def transferred_bytes(decision, request: Request, catalog: Catalog) -> int:
    """Bytes actually crossing the inter-server backhaul (origin excluded)."""
    if isinstance(decision, NeighborTranscodeAtHome):
        return catalog.size(decision.from_level)
    if isinstance(decision, (NeighborFetch, NeighborTranscodeAtSource)):
        return catalog.size(request.variant.level)
    return 0

