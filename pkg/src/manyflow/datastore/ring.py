from __future__ import annotations

import bisect

from ..errors import EmptyRing

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1
DEFAULT_REPLICAS = 64


def fnv1a64(data) -> int:
    """64-bit FNV-1a over ``data`` (str is encoded as UTF-8)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def fmix64(h: int) -> int:
    """64-bit avalanche finalizer; spreads keys that differ only in their last bytes."""
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK64
    h ^= h >> 33
    return h


def ring_hash(data) -> int:
    """Placement hash: FNV-1a, then :func:`fmix64`.

    Plain FNV-1a leaves the high bits of ``node:0`` .. ``node:63`` nearly
    identical, so a node's virtual points would bunch together on the ring.
    """
    return fmix64(fnv1a64(data))


class HashRing:
    """Consistent-hash ring with ``replicas`` virtual points per node.

    Point ``k`` of node ``n`` sits at ``ring_hash(f"{n}:{k}")``; a name belongs
    to the first point at or clockwise after ``ring_hash(name)``.  Ties on a point
    value resolve to the smaller node id.
    """

    def __init__(self, nodes=(), replicas=DEFAULT_REPLICAS, hash_fn=ring_hash):
        self.replicas = replicas
        self.hash_fn = hash_fn
        self._points = []   # sorted (point, node)
        self._keys = []     # point values, parallel to _points
        self._nodes = []
        self.add_many(nodes)

    @property
    def nodes(self):
        return list(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, node):
        return node in self._nodes

    def points_of(self, node):
        return [self.hash_fn(f"{node}:{k}") for k in range(self.replicas)]

    def add(self, node):
        self.add_many([node])

    def add_many(self, nodes):
        known = set(self._nodes)
        fresh = []
        for node in nodes:
            if node not in known:
                known.add(node)
                self._nodes.append(node)
                fresh.extend((p, node) for p in self.points_of(node))
        if fresh:
            self._points = sorted(self._points + fresh)
            self._keys = [p for p, _ in self._points]

    def remove(self, node):
        if node not in self._nodes:
            return
        self._nodes.remove(node)
        self._points = [(p, n) for p, n in self._points if n != node]
        self._keys = [p for p, _ in self._points]

    def point_index(self, name) -> int:
        if not self._points:
            raise EmptyRing("hash ring has no nodes")
        i = bisect.bisect_left(self._keys, self.hash_fn(name))
        return 0 if i == len(self._keys) else i

    def locate(self, name):
        return self._points[self.point_index(name)][1]

    def successors(self, name):
        """Distinct nodes in clockwise order starting from ``locate(name)``."""
        start = self.point_index(name)
        seen = []
        n = len(self._points)
        for k in range(n):
            node = self._points[(start + k) % n][1]
            if node not in seen:
                seen.append(node)
                if len(seen) == len(self._nodes):
                    break
        return seen


def locate(ring: HashRing, name):
    return ring.locate(name)
