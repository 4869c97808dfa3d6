"""Byte-capacity LRU cache holding individual video variants."""

from __future__ import annotations

from collections import OrderedDict

from .model import VariantId


class Uncacheable(Exception):
    """The item is larger than the whole cache."""


class LruCache:
    """LRU store of variants with a byte budget.

    Internally the OrderedDict runs least- to most-recently used; ``entries()``
    reports the opposite (MRU first).  Membership probes never touch recency.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.used = 0
        self._od = OrderedDict()
        self._levels = {}  # video -> set of cached levels

    def __len__(self):
        return len(self._od)

    def __contains__(self, variant):
        return variant in self._od

    def contains(self, variant: VariantId) -> bool:
        return variant in self._od

    def entries(self) -> list:
        """(variant, size) pairs, most recently used first."""
        return [(v, s) for v, s in reversed(self._od.items())]

    def levels_of(self, video: int):
        return self._levels.get(video, ())

    def closest_transcodable(self, variant: VariantId):
        """Smallest cached level above ``variant.level`` for the same video, else None."""
        best = None
        for h in self._levels.get(variant.video, ()):
            if h > variant.level and (best is None or h < best):
                best = h
        return best

    def touch(self, variant: VariantId) -> bool:
        if variant not in self._od:
            return False
        self._od.move_to_end(variant)
        return True

    def insert(self, variant: VariantId, size: int) -> list:
        """Insert as MRU and return the evicted variants, oldest first.

        Re-inserting a present variant only refreshes it.  Raises Uncacheable
        (cache untouched) when ``size`` exceeds the capacity.
        """
        if variant in self._od:
            self._od.move_to_end(variant)
            return []
        if size > self.capacity:
            raise Uncacheable(f"{variant} ({size} B) exceeds capacity {self.capacity} B")
        evicted = []
        while self.used + size > self.capacity:
            old, old_size = self._od.popitem(last=False)
            self.used -= old_size
            self._drop_level(old)
            evicted.append(old)
        self._od[variant] = size
        self.used += size
        self._levels.setdefault(variant.video, set()).add(variant.level)
        return evicted

    def _drop_level(self, variant):
        levels = self._levels[variant.video]
        levels.discard(variant.level)
        if not levels:
            del self._levels[variant.video]

    def check(self, deep: bool = False) -> None:
        if deep:
            assert self.used == sum(self._od.values()), "byte accounting drifted"
            assert len(set(self._od)) == len(self._od)
        assert self.used <= self.capacity, f"cache over capacity: {self.used} > {self.capacity}"

    def dump(self) -> str:
        return "\n".join(f"{v.video} {v.level} {s}" for v, s in self.entries())


def contains(cache: LruCache, variant: VariantId) -> bool:
    return cache.contains(variant)


def closest_transcodable(cache: LruCache, variant: VariantId):
    return cache.closest_transcodable(variant)


def insert_lru(cache: LruCache, variant: VariantId, size: int) -> list:
    return cache.insert(variant, size)


def touch(cache: LruCache, variant: VariantId) -> bool:
    return cache.touch(variant)
