"""Fully associative output-step cache with pinning and five replacement policies.

The cache tracks which output steps are on disk.  Every entry carries a byte
size, a reference count (pinned entries are never evicted) and a miss cost:
the number of output steps a re-simulation must produce to bring it back.

Policies:

* ``LRU``  evicts the least recently used unpinned entry.
* ``LIRS`` Jiang/Zhang low inter-reference recency set.
* ``ARC``  Megiddo/Modha adaptive replacement cache.
* ``BCL``/``DCL`` cost-sensitive LRU variants: evict the first entry in
  recency order that is cheaper than the LRU one, depreciating the LRU's
  cost either immediately (BCL) or once the evicted entry is missed again
  before the LRU entry is touched (DCL).

Access and insertion are separate calls because a miss is only filled once
the re-simulation has produced the file, possibly much later.
"""
from __future__ import annotations

import math
from collections import OrderedDict

__all__ = ["AllPinnedError", "CacheEntry", "CacheState", "make_policy"]


class AllPinnedError(RuntimeError):
    """No evictable entry can make room; the caller must queue the insertion."""


class CacheEntry:
    __slots__ = ("key", "size", "refcount", "cost", "original_cost", "stamp")

    def __init__(self, key, size, cost):
        self.key = key
        self.size = size
        self.refcount = 0
        self.cost = cost
        self.original_cost = cost
        self.stamp = 0

    def __repr__(self):
        return (f"CacheEntry(key={self.key}, size={self.size}, refcount={self.refcount}, "
                f"cost={self.cost}/{self.original_cost})")


class CacheState:
    """Catalog of on-disk output steps for one storage area.

    ``slot_bytes`` is the nominal entry size used by LIRS and ARC to turn the
    byte capacity into an entry count; it defaults to the first inserted size.
    """

    def __init__(self, capacity_bytes, policy="LRU", slot_bytes=None):
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be positive")
        self.capacity_bytes = capacity_bytes
        self.used_bytes = 0
        self.pinned_bytes = 0
        self.pinned_count = 0
        self.entries: dict[int, CacheEntry] = {}
        self.slot_bytes = slot_bytes
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.policy_name = policy.upper()
        self.policy = make_policy(self.policy_name, self)

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def slots(self):
        slot = self.slot_bytes or 1
        return max(1, self.capacity_bytes // slot)

    def record_access(self, key) -> bool:
        """Register an access; returns True on a hit."""
        if key in self.entries:
            self.hits += 1
            self.policy.on_hit(key)
            return True
        self.misses += 1
        self.policy.on_miss(key)
        return False

    def insert(self, key, size, cost) -> list:
        """Add an entry, evicting unpinned entries until it fits.

        Returns the evicted keys in eviction order.  Raises AllPinnedError
        (leaving the cache untouched) if pinned entries prevent the fit.
        """
        entries = self.entries
        if key in entries:
            entry = entries[key]
            if entry.size != size:
                self.used_bytes += size - entry.size
                if entry.refcount:
                    self.pinned_bytes += size - entry.size
                entry.size = size
            return []
        if size > self.capacity_bytes:
            raise ValueError(f"entry of {size} bytes exceeds capacity {self.capacity_bytes}")
        if self.slot_bytes is None:
            self.slot_bytes = size
            self.policy.resize()
        need = self.used_bytes + size - self.capacity_bytes
        if need > self.used_bytes - self.pinned_bytes:
            raise AllPinnedError(f"cannot fit key {key}: {self.pinned_count} entries pinned")
        policy = self.policy
        policy.before_insert(key)
        evicted = []
        while self.used_bytes + size > self.capacity_bytes:
            victim = policy.victim()
            self._drop(victim, True)
            evicted.append(victim)
        entry = CacheEntry(key, size, cost)
        entries[key] = entry
        self.used_bytes += size
        policy.on_insert(entry)
        return evicted

    def _drop(self, key, evicted):
        entry = self.entries.pop(key)
        self.used_bytes -= entry.size
        if entry.refcount:
            self.pinned_bytes -= entry.size
            self.pinned_count -= 1
        if evicted:
            self.evictions += 1
        self.policy.on_remove(entry, evicted)

    def remove(self, key):
        """Forget an entry without counting an eviction (e.g. file vanished)."""
        if key in self.entries:
            self._drop(key, False)

    def pin(self, key) -> int:
        entry = self.entries.get(key)
        if entry is None:
            raise KeyError(f"unknown key {key}")
        if entry.refcount == 0:
            self.pinned_bytes += entry.size
            self.pinned_count += 1
        entry.refcount += 1
        return entry.refcount

    def unpin(self, key) -> int:
        entry = self.entries.get(key)
        if entry is None:
            raise KeyError(f"unknown key {key}")
        if entry.refcount == 0:
            raise ValueError(f"key {key} is not pinned")
        entry.refcount -= 1
        if entry.refcount == 0:
            self.pinned_bytes -= entry.size
            self.pinned_count -= 1
        return entry.refcount

    def select_victim(self):
        """Next victim under the policy (applies cost depreciation for BCL/DCL)."""
        if self.used_bytes == self.pinned_bytes:
            raise AllPinnedError("no evictable entry")
        return self.policy.victim()

    def evictable(self, key) -> bool:
        entry = self.entries.get(key)
        return entry is not None and entry.refcount == 0

    def snapshot_stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses,
                "evictions": self.evictions, "bytes": self.used_bytes}


# --- policies ----------------------------------------------------------------

class _Policy:
    def __init__(self, state: CacheState):
        self.state = state

    def resize(self):
        pass

    def on_hit(self, key):
        pass

    def on_miss(self, key):
        pass

    def before_insert(self, key):
        pass

    def on_insert(self, entry):
        pass

    def on_remove(self, entry, evicted):
        pass

    def victim(self):
        raise NotImplementedError

    def recency(self) -> list:
        """Keys from least to most recently used (resident entries only)."""
        raise NotImplementedError


def _first_evictable(keys, entries):
    for k in keys:
        if entries[k].refcount == 0:
            return k
    return None


class LRUPolicy(_Policy):
    def __init__(self, state):
        super().__init__(state)
        self.order = OrderedDict()

    def on_hit(self, key):
        self.order.move_to_end(key)

    def on_insert(self, entry):
        self.order[entry.key] = None

    def on_remove(self, entry, evicted):
        del self.order[entry.key]

    def victim(self):
        return _first_evictable(self.order, self.state.entries)

    def recency(self):
        return list(self.order)


_EMPTY = (math.inf, None)


class CostLRUPolicy(_Policy):
    """Shared machinery for BCL and DCL.

    Entries live in per-cost buckets ordered by recency stamp, so "least
    recent entry cheaper than c" is a min over the bucket heads below c.
    """

    def __init__(self, state):
        super().__init__(state)
        self.clock = 0
        self.buckets: list[OrderedDict] = []
        self.heads: list = []

    def _bucket(self, cost):
        while cost >= len(self.buckets):
            self.buckets.append(OrderedDict())
            self.heads.append(_EMPTY)
        return self.buckets[cost]

    def _refresh_head(self, cost):
        bucket = self.buckets[cost]
        if bucket:
            key, stamp = next(iter(bucket.items()))
            self.heads[cost] = (stamp, key)
        else:
            self.heads[cost] = _EMPTY

    def on_hit(self, key):
        entry = self.state.entries[key]
        self.clock += 1
        entry.stamp = self.clock
        bucket = self.buckets[entry.cost]
        bucket[key] = self.clock
        bucket.move_to_end(key)
        if self.heads[entry.cost][1] == key:
            self._refresh_head(entry.cost)

    def on_insert(self, entry):
        self.clock += 1
        entry.stamp = self.clock
        bucket = self._bucket(entry.cost)
        bucket[entry.key] = self.clock
        if len(bucket) == 1:
            self.heads[entry.cost] = (self.clock, entry.key)

    def on_remove(self, entry, evicted):
        del self.buckets[entry.cost][entry.key]
        if self.heads[entry.cost][1] == entry.key:
            self._refresh_head(entry.cost)

    def _min_evictable(self, upto):
        """(stamp, key) of the least recent evictable entry with cost < upto."""
        heads = self.heads[:upto]
        if not heads:
            return _EMPTY
        best = min(heads)
        if best[1] is None or self.state.pinned_count == 0:
            return best
        entries = self.state.entries
        if entries[best[1]].refcount == 0 and all(
                h[1] is None or entries[h[1]].refcount == 0 for h in heads):
            return best
        best = _EMPTY
        for bucket in self.buckets[:upto]:
            for k, stamp in bucket.items():
                if stamp >= best[0]:
                    break
                if entries[k].refcount == 0:
                    best = (stamp, k)
                    break
        return best

    def _depreciate(self, key, amount):
        entry = self.state.entries[key]
        new_cost = max(0, entry.cost - amount)
        if new_cost == entry.cost:
            return
        old = self.buckets[entry.cost]
        del old[key]
        if self.heads[entry.cost][1] == key:
            self._refresh_head(entry.cost)
        entry.cost = new_cost
        bucket = self._bucket(new_cost)
        bucket[key] = entry.stamp
        if len(bucket) > 1:
            head_stamp = self.heads[new_cost][0]
            if entry.stamp < head_stamp:
                bucket.move_to_end(key, last=False)
            else:
                items = sorted(bucket.items(), key=lambda kv: kv[1])
                bucket.clear()
                bucket.update(items)
        self._refresh_head(new_cost)

    def victim(self):
        lru_stamp, lru = self._min_evictable(len(self.heads))
        if lru is None:
            return None
        lru_cost = self.state.entries[lru].cost
        stamp, cheaper = self._min_evictable(lru_cost)
        if cheaper is None:
            return lru
        self.on_cheaper_victim(lru, cheaper)
        return cheaper

    def on_cheaper_victim(self, lru, victim):
        raise NotImplementedError

    def recency(self):
        items = [(e.stamp, k) for k, e in self.state.entries.items()]
        return [k for _, k in sorted(items)]


class BCLPolicy(CostLRUPolicy):
    def on_cheaper_victim(self, lru, victim):
        self._depreciate(lru, self.state.entries[victim].cost)


class DCLPolicy(CostLRUPolicy):
    def __init__(self, state):
        super().__init__(state)
        # evicted victim -> [(lru key, amount)], and lru key -> set of victims
        self.pending: dict = {}
        self.by_lru: dict = {}

    def on_cheaper_victim(self, lru, victim):
        amount = self.state.entries[victim].cost
        self.pending.setdefault(victim, []).append((lru, amount))
        self.by_lru.setdefault(lru, set()).add(victim)

    def _forget_lru(self, lru):
        for victim in self.by_lru.pop(lru, ()):
            records = self.pending.get(victim)
            if records:
                records[:] = [r for r in records if r[0] != lru]
                if not records:
                    del self.pending[victim]

    def on_hit(self, key):
        if key in self.by_lru:
            self._forget_lru(key)
        super().on_hit(key)

    def on_miss(self, key):
        records = self.pending.pop(key, None)
        if not records:
            return
        entries = self.state.entries
        for lru, amount in records:
            victims = self.by_lru.get(lru)
            if victims is not None:
                victims.discard(key)
                if not victims:
                    del self.by_lru[lru]
            if lru in entries:
                self._depreciate(lru, amount)

    def on_insert(self, entry):
        # a pending record does not survive the victim's re-insertion
        records = self.pending.pop(entry.key, None)
        if records:
            for lru, _ in records:
                victims = self.by_lru.get(lru)
                if victims is not None:
                    victims.discard(entry.key)
                    if not victims:
                        del self.by_lru[lru]
        super().on_insert(entry)

    def on_remove(self, entry, evicted):
        if entry.key in self.by_lru:
            self._forget_lru(entry.key)
        super().on_remove(entry, evicted)


class LIRSPolicy(_Policy):
    """LIRS with stack S (bottom first) and resident-HIR queue Q (front first)."""

    LIR, HIR, NONRES = "L", "H", "N"

    def __init__(self, state):
        super().__init__(state)
        self.stack = OrderedDict()
        self.queue = OrderedDict()
        self.status: dict = {}
        self.lir_count = 0
        self.nonres_count = 0
        self.resize()

    def resize(self):
        c = self.state.slots
        self.hir_size = max(1, math.ceil(c / 100))
        self.lir_size = max(1, c - self.hir_size)
        self.nonres_cap = 2 * c

    def _prune(self):
        stack, status = self.stack, self.status
        while stack:
            key = next(iter(stack))
            st = status[key]
            if st == "L":
                return
            del stack[key]
            if st == "N":
                del status[key]
                self.nonres_count -= 1

    def _demote_bottom_lir(self):
        bottom = next(iter(self.stack))
        del self.stack[bottom]
        self.status[bottom] = "H"
        self.queue[bottom] = None
        self.lir_count -= 1
        self._prune()

    def on_hit(self, key):
        stack, status = self.stack, self.status
        st = status[key]
        if st == "L":
            was_bottom = next(iter(stack)) == key
            stack.move_to_end(key)
            if was_bottom:
                self._prune()
        elif key in stack:
            stack.move_to_end(key)
            status[key] = "L"
            self.lir_count += 1
            del self.queue[key]
            self._demote_bottom_lir()
        else:
            stack[key] = None
            self.queue.move_to_end(key)

    def on_insert(self, entry):
        key = entry.key
        stack, status = self.stack, self.status
        st = status.get(key)
        if self.lir_count < self.lir_size:
            if st == "N":
                self.nonres_count -= 1
            status[key] = "L"
            self.lir_count += 1
            stack[key] = None
            stack.move_to_end(key)
        elif st == "N":
            self.nonres_count -= 1
            stack.move_to_end(key)
            status[key] = "L"
            self.lir_count += 1
            self._demote_bottom_lir()
        else:
            status[key] = "H"
            stack[key] = None
            self.queue[key] = None

    def on_remove(self, entry, evicted):
        key = entry.key
        st = self.status[key]
        if st == "H":
            del self.queue[key]
            if key in self.stack:
                self.status[key] = "N"
                self.nonres_count += 1
                if self.nonres_count > self.nonres_cap:
                    self._drop_oldest_nonresident()
            else:
                del self.status[key]
        else:
            was_bottom = next(iter(self.stack)) == key
            del self.stack[key]
            del self.status[key]
            self.lir_count -= 1
            if was_bottom:
                self._prune()

    def _drop_oldest_nonresident(self):
        for key in self.stack:
            if self.status[key] == "N":
                del self.stack[key]
                del self.status[key]
                self.nonres_count -= 1
                return

    def victim(self):
        entries = self.state.entries
        key = _first_evictable(self.queue, entries)
        if key is None:
            key = _first_evictable((k for k in self.stack if self.status[k] == "L"), entries)
        return key

    def recency(self):
        return [k for k in self.stack if self.status[k] != "N"]


class ARCPolicy(_Policy):
    def __init__(self, state):
        super().__init__(state)
        self.t1, self.t2 = OrderedDict(), OrderedDict()
        self.b1, self.b2 = OrderedDict(), OrderedDict()
        self.p = 0.0
        self._incoming = None
        self._drop_t1 = False
        self._ghost = {}
        self.resize()

    def resize(self):
        self.c = self.state.slots

    def on_hit(self, key):
        if key in self.t1:
            del self.t1[key]
            self.t2[key] = None
        else:
            self.t2.move_to_end(key)

    def on_miss(self, key):
        b1, b2 = len(self.b1), len(self.b2)
        if key in self.b1:
            self.p = min(float(self.c), self.p + max(b2 / b1, 1.0))
        elif key in self.b2:
            self.p = max(0.0, self.p - max(b1 / b2, 1.0))

    def before_insert(self, key):
        self._incoming = key
        self._drop_t1 = False
        if key in self.b1 or key in self.b2:
            return
        c = self.c
        l1 = len(self.t1) + len(self.b1)
        if l1 >= c:
            if len(self.t1) < c:
                if self.b1:
                    self.b1.popitem(last=False)
            else:
                self._drop_t1 = True
        else:
            total = l1 + len(self.t2) + len(self.b2)
            if total >= 2 * c and self.b2:
                self.b2.popitem(last=False)

    def victim(self):
        entries = self.state.entries
        if self._drop_t1:
            self._drop_t1 = False
            key = _first_evictable(self.t1, entries)
            if key is not None:
                self._ghost[key] = None
                return key
        t1_len = len(self.t1)
        if self.t1 and (t1_len > self.p or (self._incoming in self.b2 and t1_len == self.p)):
            order = ((self.t1, self.b1), (self.t2, self.b2))
        else:
            order = ((self.t2, self.b2), (self.t1, self.b1))
        for lst, ghost in order:
            key = _first_evictable(lst, entries)
            if key is not None:
                self._ghost[key] = ghost
                return key
        return None

    def on_remove(self, entry, evicted):
        key = entry.key
        ghost = self._ghost.pop(key, None) if evicted else None
        if key in self.t1:
            del self.t1[key]
        else:
            del self.t2[key]
        if ghost is not None:
            ghost[key] = None

    def on_insert(self, entry):
        key = entry.key
        self._incoming = None
        self._drop_t1 = False
        if key in self.b1:
            del self.b1[key]
            self.t2[key] = None
        elif key in self.b2:
            del self.b2[key]
            self.t2[key] = None
        else:
            self.t1[key] = None

    def recency(self):
        return list(self.t1) + list(self.t2)


_POLICIES = {"LRU": LRUPolicy, "LIRS": LIRSPolicy, "ARC": ARCPolicy,
             "BCL": BCLPolicy, "DCL": DCLPolicy}


def make_policy(name, state):
    try:
        return _POLICIES[name.upper()](state)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}") from None
