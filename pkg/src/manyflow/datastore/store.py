"""Artifact storage backends.

``shared``  every artifact lives in the shared file system.
``ame``     artifacts live in node memory at ``ring.locate(name)``; the
            producing node keeps its own copy too.
``striped`` artifacts are cut into fixed-size chunks placed round-robin over
            the ring successors of ``ring.locate(name)``.

In the two node-memory kinds, persistent artifacts are also written through
to the shared file system.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..errors import CapacityError, MissingArtifact, StoreIoError, UnknownNode
from .ring import DEFAULT_REPLICAS, HashRing

SHARED = "shared-fs"
KINDS = ("shared", "ame", "striped")
DEFAULT_CHUNK = 4096
UNLIMITED = 1 << 62


def content_digest(content: bytes) -> str:
    return hashlib.blake2b(content, digest_size=8).hexdigest()


@dataclass(frozen=True)
class ArtifactRef:
    name: str
    size: int = 0
    digest: Optional[str] = None
    persistence: str = "volatile"
    locations: frozenset = field(default_factory=frozenset)

    @property
    def persistent(self):
        return self.persistence == "persistent"

    def to_json(self):
        return {
            "name": self.name,
            "size": self.size,
            "digest": self.digest,
            "persistence": self.persistence,
            "locations": sorted(self.locations),
        }


@dataclass(frozen=True)
class Transfer:
    src: str
    dst: str
    bytes: int
    artifact: str


class NodeStore:
    def __init__(self, node, capacity):
        self.node = node
        self.capacity = capacity
        self.used = 0
        self.held = {}

    def add(self, key, size):
        if key in self.held:
            return
        if size > self.capacity:
            raise CapacityError(f"{key}: {size} bytes exceeds the {self.capacity}-byte memory of {self.node}")
        if self.used + size > self.capacity:
            raise CapacityError(
                f"{key}: {size} bytes does not fit on {self.node} ({self.used}/{self.capacity} used)")
        self.held[key] = size
        self.used += size

    def discard(self, key):
        size = self.held.pop(key, None)
        if size is not None:
            self.used -= size


class SharedFS:
    """Directory tree under ``root``; kept in memory when ``root`` is None."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._root = str(root) if root is not None else None
        self._mem = {}

    def fspath(self, name) -> str:
        if self.root is None:
            raise StoreIoError(f"{name}: in-memory shared store has no paths")
        if not name or name.startswith("/") or ".." in name.split("/"):
            raise StoreIoError(f"{name!r} is not a relative artifact path")
        return os.path.join(self._root, name)

    def path(self, name) -> Path:
        return Path(self.fspath(name))

    def write(self, name, content: bytes):
        if self.root is None:
            self._mem[name] = content
            return
        dest = self.path(name)
        try:
            dest.parent.mkdir(parents=True, exist_ok=True)
            tmp = dest.with_name(dest.name + ".tmp")
            with open(tmp, "wb") as f:
                f.write(content)
            os.replace(tmp, dest)
        except OSError as e:
            raise StoreIoError(f"{name}: {e}") from e

    def link_from(self, name, src_path):
        """Adopt an already-written file (hard link, copy on failure)."""
        dest = self.fspath(name)
        parent = os.path.dirname(dest)
        if not os.path.isdir(parent):
            os.makedirs(parent, exist_ok=True)
        try:
            os.link(src_path, dest)
        except FileExistsError:
            tmp = dest + ".tmp"
            if os.path.lexists(tmp):
                os.unlink(tmp)
            os.link(src_path, tmp)
            os.replace(tmp, dest)
        except OSError:
            with open(src_path, "rb") as f:
                self.write(name, f.read())

    def read(self, name) -> bytes:
        if self.root is None:
            try:
                return self._mem[name]
            except KeyError:
                raise MissingArtifact(name, "not in shared store") from None
        try:
            with open(self.path(name), "rb") as f:
                return f.read()
        except FileNotFoundError:
            raise MissingArtifact(name, "not in shared store") from None
        except OSError as e:
            raise StoreIoError(f"{name}: {e}") from e

    def exists(self, name) -> bool:
        if self.root is None:
            return name in self._mem
        return os.path.isfile(self.fspath(name))


class ArtifactStore:
    def __init__(self, kind="shared", nodes=(), node_memory=UNLIMITED, root=None,
                 chunk_size=DEFAULT_CHUNK, replicas=DEFAULT_REPLICAS, hash_fn=None):
        if kind not in KINDS:
            raise ValueError(f"unknown store kind {kind!r}")
        self.kind = kind
        self.chunk_size = chunk_size
        self.shared = SharedFS(root)
        ring_kwargs = {"replicas": replicas}
        if hash_fn is not None:
            ring_kwargs["hash_fn"] = hash_fn
        self.ring = HashRing(nodes, **ring_kwargs)
        self.nodes = {n: NodeStore(n, node_memory) for n in nodes}
        self.catalog = {}          # name -> ArtifactRef (locations maintained here)
        self.copies = {}           # name -> set of nodes holding a full copy
        self.chunks = {}           # name -> [(node, offset, length)]
        self.in_shared = set()
        self.egress = {}           # source -> bytes sent
        self.transfers = []
        self._mem = {}             # (node, key) -> bytes, node-memory kinds only
        self._lock = threading.RLock()

    # -- helpers --

    def _keep_bytes(self):
        return self.kind != "shared"

    def _locations(self, name):
        locs = set(self.copies.get(name, ()))
        locs.update(n for n, _, _ in self.chunks.get(name, ()))
        if name in self.in_shared:
            locs.add(SHARED)
        return frozenset(locs)

    def _refresh(self, name):
        ref = self.catalog[name]
        ref = replace(ref, locations=self._locations(name))
        self.catalog[name] = ref
        return ref

    def _record(self, src, dst, nbytes, name):
        t = Transfer(src, dst, nbytes, name)
        self.egress[src] = self.egress.get(src, 0) + nbytes
        self.transfers.append(t)
        return t

    def _node(self, node) -> NodeStore:
        try:
            return self.nodes[node]
        except KeyError:
            raise UnknownNode(f"{node!r} is not a live node") from None

    def _hold(self, node, name, content, key=None):
        key = key or name
        self._node(node).add(key, len(content))
        if self._keep_bytes():
            self._mem[(node, key)] = content

    def live_nodes(self):
        return list(self.nodes)

    # -- public API --

    def ref(self, name) -> ArtifactRef:
        with self._lock:
            try:
                return self.catalog[name]
            except KeyError:
                raise MissingArtifact(name, "unknown artifact") from None

    def __contains__(self, name):
        return name in self.catalog

    def put(self, a: ArtifactRef, content: bytes, origin=None) -> ArtifactRef:
        """Store ``content`` under ``a.name``; returns the ref with size, digest and locations."""
        with self._lock:
            name = a.name
            if origin is not None and origin != SHARED and origin not in self.nodes:
                raise UnknownNode(f"{origin!r} is not a live node")
            size = len(content)
            placed = []
            try:
                if self.kind == "ame":
                    home = self.ring.locate(name)
                    self._hold(home, name, content)
                    placed.append((home, name))
                    if origin not in (None, SHARED, home):
                        self._hold(origin, name, content)
                        placed.append((origin, name))
                        self._record(origin, home, size, name)
                elif self.kind == "striped":
                    chunks = self._stripe(name, content)
                    for node, off, length in chunks:
                        self._hold(node, name, content[off:off + length], key=f"{name}#{off}")
                        placed.append((node, f"{name}#{off}"))
                        if origin not in (None, SHARED) and node != origin:
                            self._record(origin, node, length, name)
            except CapacityError:
                for node, key in placed:
                    self.nodes[node].discard(key)
                    self._mem.pop((node, key), None)
                raise
            if self.kind == "ame":
                self.copies[name] = {n for n, _ in placed}
            elif self.kind == "striped":
                self.chunks[name] = chunks
                self.copies.setdefault(name, set())
            else:
                self.copies.setdefault(name, set())
            if self.kind == "shared" or a.persistent:
                self.shared.write(name, content)
                self.in_shared.add(name)
                if origin not in (None, SHARED) and self.kind != "shared":
                    self._record(origin, SHARED, size, name)
            self.catalog[name] = ArtifactRef(name, size, content_digest(content), a.persistence)
            return self._refresh(name)

    def put_local(self, a: ArtifactRef, content: bytes, node) -> ArtifactRef:
        """Place a full copy on ``node`` only (plus shared-fs when persistent)."""
        with self._lock:
            self._hold(node, a.name, content)
            self.copies[a.name] = {node}
            self.chunks.pop(a.name, None)
            if a.persistent:
                self.shared.write(a.name, content)
                self.in_shared.add(a.name)
            self.catalog[a.name] = ArtifactRef(a.name, len(content), content_digest(content), a.persistence)
            return self._refresh(a.name)

    def adopt_shared(self, a: ArtifactRef, path=None, content=None) -> ArtifactRef:
        """Register an artifact already present (or written now) in the shared store."""
        with self._lock:
            if content is None:
                if path is None:
                    content = self.shared.read(a.name)
                else:
                    with open(path, "rb") as f:
                        content = f.read()
            if path is not None and self.shared.root is not None:
                self.shared.link_from(a.name, path)
            elif not self.shared.exists(a.name):
                self.shared.write(a.name, content)
            self.in_shared.add(a.name)
            self.copies.setdefault(a.name, set())
            persistence = "persistent" if self.kind != "shared" else a.persistence
            self.catalog[a.name] = ArtifactRef(a.name, len(content), content_digest(content), persistence)
            return self._refresh(a.name)

    def _stripe(self, name, content):
        order = self.ring.successors(name)
        size = len(content)
        step = self.chunk_size
        offsets = list(range(0, size, step)) or [0]
        return [(order[j % len(order)], off, min(step, size - off)) for j, off in enumerate(offsets)]

    def holders(self, name):
        with self._lock:
            return set(self.copies.get(name, ()))

    def available(self, name) -> bool:
        with self._lock:
            if name not in self.catalog:
                return False
            if self.copies.get(name) or name in self.in_shared:
                return True
            chunks = self.chunks.get(name)
            return bool(chunks) and all(n in self.nodes for n, _, _ in chunks)

    def get(self, name) -> bytes:
        with self._lock:
            if name not in self.catalog:
                raise MissingArtifact(name, "unknown artifact")
            for node in sorted(self.copies.get(name, ()), key=_node_key):
                if self._keep_bytes():
                    return self._mem[(node, name)]
            chunks = self.chunks.get(name)
            if chunks and all(n in self.nodes for n, _, _ in chunks):
                return b"".join(self._mem[(n, f"{name}#{off}")] for n, off, _ in chunks)
            if name in self.in_shared:
                return self.shared.read(name)
            raise MissingArtifact(name)

    def stage_to(self, name, dest, src=None) -> list:
        """Make a full copy of ``name`` available on ``dest``.

        Returns the transfers performed; an empty list when ``dest`` already
        holds the artifact.
        """
        if isinstance(name, ArtifactRef):
            name = name.name
        with self._lock:
            if name not in self.catalog:
                raise MissingArtifact(name, "unknown artifact")
            store = self._node(dest)
            if dest in self.copies.get(name, ()):
                return []
            size = self.catalog[name].size
            if src is None:
                src = self._source(name)
            if src is None:
                raise MissingArtifact(name)
            content = self.get(name) if self._keep_bytes() else b""
            if src == "chunks":
                chunks = self.chunks[name]
                store.add(name, size)
                out = [self._record(n, dest, length, name) for n, _, length in chunks if n != dest]
            else:
                if src != SHARED and src not in self.copies.get(name, ()):
                    raise MissingArtifact(name, f"{src} does not hold it")
                store.add(name, size)
                out = [self._record(src, dest, size, name)]
            if self._keep_bytes():
                self._mem[(dest, name)] = content
            self.copies.setdefault(name, set()).add(dest)
            self._refresh(name)
            return out

    def _source(self, name):
        live = sorted(self.copies.get(name, ()), key=_node_key)
        if live:
            return live[0]
        chunks = self.chunks.get(name)
        if chunks and all(n in self.nodes for n, _, _ in chunks):
            return "chunks"
        if name in self.in_shared:
            return SHARED
        return None

    def fail_node(self, node) -> list:
        """Drop ``node`` and everything in its memory; return names now unavailable."""
        with self._lock:
            if node not in self.nodes:
                raise UnknownNode(f"{node!r} is not a live node")
            del self.nodes[node]
            self.ring.remove(node)
            for key in [k for k in self._mem if k[0] == node]:
                del self._mem[key]
            lost = []
            for name in list(self.catalog):
                touched = False
                held = self.copies.get(name)
                if held and node in held:
                    held.discard(node)
                    touched = True
                if any(n == node for n, _, _ in self.chunks.get(name, ())):
                    touched = True
                if touched:
                    self._refresh(name)
                    if not self.available(name):
                        lost.append(name)
            return lost

    def usage(self):
        with self._lock:
            return {n: (s.used, s.capacity) for n, s in self.nodes.items()}

    def manifest(self):
        with self._lock:
            return [self._refresh(n).to_json() for n in sorted(self.catalog)]

    def write_manifest(self, path):
        with open(path, "w") as f:
            for entry in self.manifest():
                f.write(json.dumps(entry, sort_keys=True) + "\n")


def _node_key(node):
    digits = "".join(ch for ch in node if ch.isdigit())
    return (int(digits) if digits else -1, node)
