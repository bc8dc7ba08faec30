"""Capacity-bounded item store with priority-proportional sampling."""
from __future__ import annotations

import random
from typing import Any, Hashable, Iterator, Optional


class Bag:
    """Keyed items with priorities in [0, 1].

    ``sample`` draws an item with probability ``priority / total``. When an
    insert overflows the capacity the lowest-priority item (oldest on ties)
    is evicted and returned.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._items: dict = {}
        self._prio: dict = {}
        self.total = 0.0

    def __len__(self):
        return len(self._items)

    def __contains__(self, key):
        return key in self._items

    def __iter__(self) -> Iterator:
        return iter(self._items.values())

    def keys(self):
        return self._items.keys()

    def get(self, key, default=None):
        return self._items.get(key, default)

    def priority(self, key) -> float:
        return self._prio[key]

    def put(self, key: Hashable, item: Any, priority: float) -> Optional[Any]:
        """Insert or replace ``key``; returns the evicted item, if any."""
        priority = min(1.0, max(0.0, priority))
        if key in self._items:
            self.total += priority - self._prio[key]
            self._items[key] = item
            self._prio[key] = priority
            return None
        self._items[key] = item
        self._prio[key] = priority
        self.total += priority
        if len(self._items) > self.capacity:
            victim = min(self._prio, key=self._prio.__getitem__)
            return self.remove(victim)
        return None

    def set_priority(self, key, priority: float):
        priority = min(1.0, max(0.0, priority))
        self.total += priority - self._prio[key]
        self._prio[key] = priority

    def scale(self, key, factor: float):
        self.set_priority(key, self._prio[key] * factor)

    def remove(self, key):
        self.total -= self._prio.pop(key)
        return self._items.pop(key)

    def sample(self, rng: random.Random) -> Optional[Any]:
        """Priority-proportional draw; None when empty or all priorities are zero."""
        if not self._items:
            return None
        total = sum(self._prio.values())
        self.total = total
        if total <= 0.0:
            return None
        r = rng.random() * total
        acc = 0.0
        last = None
        for key, p in self._prio.items():
            if p <= 0.0:
                continue
            acc += p
            last = key
            if r < acc:
                return self._items[key]
        return self._items[last]
