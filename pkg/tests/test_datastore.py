from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manyflow.datastore import (
    SHARED, ArtifactRef, ArtifactStore, CdmHint, HashRing, content_digest, execute_plan, fmix64, fnv1a64,
    locate, plan_transfers, put, ring_hash, stage_to,
)
from manyflow.errors import BadHint, CapacityError, EmptyRing, MissingArtifact, StoreIoError, UnknownNode

KiB = 1024


def fnv_oracle(text):
    # written out from the published FNV-1a parameters, independent of the package
    h = 14695981039346656037
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 1099511628211) % 2 ** 64
    return h


def finalize_oracle(h):
    # MurmurHash3 fmix64 constants
    m = 2 ** 64
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) % m
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) % m
    return h ^ (h >> 33)


def place_oracle(text):
    return finalize_oracle(fnv_oracle(text))


def ring_oracle(nodes, name, replicas=64):
    """Brute force: sort every virtual point, scan for the first at or after hash(name)."""
    points = sorted((place_oracle(f"{n}:{k}"), n) for n in nodes for k in range(replicas))
    h = place_oracle(name)
    for p, n in points:
        if p >= h:
            return n
    return points[0][1]


def nodes(k):
    return [f"n{i}" for i in range(k)]


def random_names(count, seed):
    rnd = random.Random(seed)
    return [f"data/{rnd.getrandbits(48):012x}.dat" for _ in range(count)]


# -- hashing and the ring ---------------------------------------------------------

@pytest.mark.parametrize("text,expected", [
    ("", 0xCBF29CE484222325),
    ("a", 0xAF63DC4C8601EC8C),
    ("foobar", 0x85944171F73967E8),
])
def test_fnv_reference_vectors(text, expected):
    assert fnv1a64(text) == expected == fnv_oracle(text)


def test_ring_hash_is_finalized_fnv():
    for text in ("", "n0:0", "n0:63", "data/x.dat"):
        assert ring_hash(text) == fmix64(fnv1a64(text)) == place_oracle(text)
    assert fmix64(0) == 0


def test_single_node_ring():
    ring = HashRing(["only"])
    assert {ring.locate(n) for n in random_names(200, 1)} == {"only"}


def test_empty_ring():
    with pytest.raises(EmptyRing):
        HashRing().locate("x")


def test_ring_matches_brute_force_scan():
    for size in (1, 2, 5, 16):
        ring = HashRing(nodes(size))
        for name in random_names(100, size):
            assert locate(ring, name) == ring_oracle(nodes(size), name)


def test_balance_of_four_nodes():
    ring = HashRing(nodes(4))
    counts = {}
    for name in random_names(1000, 7):
        n = ring_oracle(nodes(4), name)
        assert ring.locate(name) == n
        counts[n] = counts.get(n, 0) + 1
    assert all(150 <= c <= 350 for c in counts.values()), counts


def test_removal_relocates_only_the_removed_nodes_names():
    names = random_names(1000, 11)
    before = {n: ring_oracle(nodes(4), n) for n in names}
    ring = HashRing(nodes(4))
    ring.remove("n2")
    after = {n: ring.locate(n) for n in names}
    moved = [n for n in names if before[n] != after[n]]
    assert all(before[n] == "n2" for n in moved)
    assert len(moved) == sum(1 for n in names if before[n] == "n2")
    assert len(moved) <= 400


def test_successors_cover_every_node_once():
    ring = HashRing(nodes(5))
    succ = ring.successors("x")
    assert succ[0] == ring.locate("x")
    assert sorted(succ) == sorted(nodes(5))


def test_incremental_add_equals_bulk():
    a = HashRing(nodes(6))
    b = HashRing()
    for n in reversed(nodes(6)):
        b.add(n)
    for name in random_names(200, 3):
        assert a.locate(name) == b.locate(name)


# -- put --------------------------------------------------------------------------

def test_ame_put_goes_to_home_node():
    s = ArtifactStore("ame", nodes(4), node_memory=1 << 20)
    ref = s.put(ArtifactRef("a.dat"), b"x" * KiB)
    home = s.ring.locate("a.dat")
    assert ref.locations == {home}
    assert s.nodes[home].used == KiB
    assert ref.size == KiB and ref.digest == content_digest(b"x" * KiB)


def test_ame_oversize_is_refused():
    s = ArtifactStore("ame", nodes(4), node_memory=1 << 20)
    with pytest.raises(CapacityError):
        s.put(ArtifactRef("big"), b"\0" * ((1 << 20) + 1))
    assert all(n.used == 0 for n in s.nodes.values())
    assert "big" not in s


def test_ame_keeps_producer_copy():
    s = ArtifactStore("ame", nodes(4))
    home = s.ring.locate("f")
    other = next(n for n in nodes(4) if n != home)
    ref = s.put(ArtifactRef("f"), b"abc", origin=other)
    assert ref.locations == {home, other}
    assert s.egress[other] == 3


def test_persistent_write_through(tmp_path):
    s = ArtifactStore("ame", nodes(2), root=tmp_path)
    ref = s.put(ArtifactRef("out/p.dat", persistence="persistent"), b"keep")
    assert SHARED in ref.locations
    assert (tmp_path / "out" / "p.dat").read_bytes() == b"keep"
    vol = s.put(ArtifactRef("v.dat"), b"tmp")
    assert SHARED not in vol.locations
    assert not (tmp_path / "v.dat").exists()


def test_striped_placement():
    s = ArtifactStore("striped", nodes(4), chunk_size=4 * KiB)
    content = bytes(range(256)) * 40          # 10 KiB
    ref = s.put(ArtifactRef("s.dat"), content)
    chunks = s.chunks["s.dat"]
    # round-robin from the home node over the ring successors, enumerated by hand
    order = s.ring.successors("s.dat")
    assert [(n, off, ln) for n, off, ln in chunks] == [
        (order[0], 0, 4096), (order[1], 4096, 4096), (order[2], 8192, 2048)]
    assert ref.locations == set(order[:3])
    assert s.get("s.dat") == content


def test_shared_kind(tmp_path):
    s = ArtifactStore("shared", root=tmp_path)
    ref = s.put(ArtifactRef("d/x"), b"1")
    assert ref.locations == {SHARED}
    assert (tmp_path / "d" / "x").read_bytes() == b"1"


def test_bad_paths_are_rejected(tmp_path):
    s = ArtifactStore("shared", root=tmp_path)
    for bad in ("/etc/passwd", "../up", "a/../../b"):
        with pytest.raises(StoreIoError):
            s.put(ArtifactRef(bad), b"")


def test_module_level_put_and_stage():
    s = ArtifactStore("ame", nodes(3))
    ref = put(s, ArtifactRef("m"), b"abc", origin=s.ring.locate("m"))
    dest = next(n for n in nodes(3) if n not in ref.locations)
    assert [t.bytes for t in stage_to(s, ref, dest)] == [3]


# -- stage_to ---------------------------------------------------------------------

def test_stage_records_transfer():
    s = ArtifactStore("ame", ["n1", "n2", "n3"])
    home = s.ring.locate("a")
    dest = next(n for n in ["n1", "n2", "n3"] if n != home)
    s.put(ArtifactRef("a"), b"12345")
    (t,) = s.stage_to("a", dest)
    assert (t.src, t.dst, t.bytes) == (home, dest, 5)
    assert dest in s.ref("a").locations


def test_stage_to_holder_is_noop():
    s = ArtifactStore("ame", nodes(3))
    s.put(ArtifactRef("a"), b"12345")
    assert s.stage_to("a", s.ring.locate("a")) == []


def test_volatile_lost_with_its_node():
    s = ArtifactStore("ame", nodes(3))
    s.put(ArtifactRef("v"), b"data")
    home = s.ring.locate("v")
    assert s.fail_node(home) == ["v"]
    with pytest.raises(MissingArtifact):
        s.stage_to("v", next(n for n in s.nodes))


def test_persistent_survives_node_loss():
    s = ArtifactStore("ame", nodes(3))
    s.put(ArtifactRef("p", persistence="persistent"), b"data")
    assert s.fail_node(s.ring.locate("p")) == []
    dest = sorted(s.nodes)[0]
    (t,) = s.stage_to("p", dest)
    assert t.src == SHARED


def test_stage_capacity_and_unknown_node():
    s = ArtifactStore("ame", nodes(2), node_memory=10)
    s.put(ArtifactRef("a"), b"x" * 8)
    other = next(n for n in nodes(2) if n != s.ring.locate("a"))
    s.put_local(ArtifactRef("b"), b"y" * 8, other)
    with pytest.raises(CapacityError):
        s.stage_to("a", other)
    with pytest.raises(UnknownNode):
        s.stage_to("a", "n99")


def test_stage_preserves_digest_on_every_backend(tmp_path):
    content = bytes(random.Random(5).getrandbits(8) for _ in range(9000))
    for kind in ("shared", "ame", "striped"):
        s = ArtifactStore(kind, nodes(4), root=tmp_path / kind, chunk_size=4096)
        ref = s.put(ArtifactRef("f", persistence="persistent"), content)
        for n in nodes(4):
            s.stage_to("f", n)
        assert s.ref("f").digest == ref.digest == content_digest(content)
        assert s.get("f") == content


# -- capacity conservation (property) ---------------------------------------------

ops = st.lists(st.tuples(st.sampled_from(["put", "stage", "fail"]), st.integers(0, 5), st.integers(0, 3000)),
               max_size=40)


@settings(max_examples=80, deadline=None)
@given(ops, st.sampled_from(["ame", "striped"]))
def test_capacity_conservation(sequence, kind):
    s = ArtifactStore(kind, nodes(4), node_memory=4000, chunk_size=1000)
    for op, k, size in sequence:
        name = f"f{k}"
        try:
            if op == "put" and name not in s:
                s.put(ArtifactRef(name), b"z" * size)
            elif op == "stage" and name in s and s.nodes:
                s.stage_to(name, sorted(s.nodes)[size % len(s.nodes)])
            elif op == "fail" and len(s.nodes) > 1:
                s.fail_node(sorted(s.nodes)[k % len(s.nodes)])
        except (CapacityError, MissingArtifact):
            pass
        for store in s.nodes.values():
            assert store.used == sum(store.held.values())
            assert store.used <= store.capacity


# -- transfer planning --------------------------------------------------------------

def holder_store(n, size=100):
    s = ArtifactStore("ame", nodes(n))
    origin = s.ring.locate("b.dat")
    s.put(ArtifactRef("b.dat"), b"q" * size)
    return s, origin


@pytest.mark.parametrize("n", [2, 8, 64])
def test_broadcast_bound(n):
    s, origin = holder_store(n)
    plan = plan_transfers(CdmHint("broadcast", "b.dat", tuple(nodes(n))), s)
    assert plan.origin == origin
    assert plan.rounds == math.ceil(math.log2(n))
    assert plan.origin_egress == math.ceil(math.log2(n))
    assert plan.total_copies == n - 1
    execute_plan(plan, s)
    assert s.holders("b.dat") == set(nodes(n))


def test_broadcast_eight_targets_tree():
    s, origin = holder_store(8)
    plan = plan_transfers(CdmHint("broadcast", "b.dat", tuple(nodes(8))), s)
    per_round = [sum(1 for st_ in plan.steps if st_.round == r) for r in (1, 2, 3)]
    assert per_round == [1, 2, 4]
    # every sender already held the file before its round
    have = {origin}
    for r in (1, 2, 3):
        step_srcs = [x.src for x in plan.steps if x.round == r]
        assert set(step_srcs) <= have
        have |= {x.dst for x in plan.steps if x.round == r}


@pytest.mark.parametrize("n", [2, 8, 64])
def test_direct_baseline(n):
    s = ArtifactStore("ame", nodes(n + 1))
    s.put_local(ArtifactRef("b.dat"), b"q" * 10, f"n{n}")
    plan = plan_transfers(CdmHint("direct", "b.dat", tuple(nodes(n))), s)
    assert plan.origin == f"n{n}"
    assert plan.origin_egress == n
    assert plan.total_copies == n


def test_scatter_chunks_and_bad_hint():
    s = ArtifactStore("ame", nodes(3))
    s.put(ArtifactRef("x"), bytes(range(10)))
    plan = plan_transfers(CdmHint("scatter", "x", ("n0", "n1", "n2")), s)
    assert [(p.dst, p.offset, p.length) for p in plan.steps] == [("n0", 0, 4), ("n1", 4, 3), ("n2", 7, 3)]
    with pytest.raises(BadHint):
        plan_transfers(CdmHint("scatter", "x", ()), s)
    with pytest.raises(BadHint):
        plan_transfers(CdmHint("spray", "x", ("n0",)), s)
    with pytest.raises(MissingArtifact):
        plan_transfers(CdmHint("broadcast", "nope", ("n0",)), s)


def test_gather_preserves_order():
    s = ArtifactStore("ame", nodes(4))
    parts = []
    for i, size in enumerate((1, 2, 3, 4)):
        name = f"part{i}"
        s.put_local(ArtifactRef(name), bytes([i]) * (size * KiB), f"n{i}")
        parts.append(name)
    plan = plan_transfers(CdmHint("gather", tuple(parts), ("n0",), result="whole"), s)
    execute_plan(plan, s)
    whole = s.get("whole")
    assert len(whole) == 10 * KiB
    assert whole == b"".join(bytes([i]) * (k * KiB) for i, k in enumerate((1, 2, 3, 4)))


@settings(max_examples=80, deadline=None)
@given(st.binary(max_size=5000), st.integers(1, 9))
def test_scatter_gather_round_trip(content, k):
    s = ArtifactStore("ame", nodes(max(k, 2)))
    s.put(ArtifactRef("src"), content)
    targets = tuple(nodes(k))
    scatter = plan_transfers(CdmHint("scatter", "src", targets), s)
    execute_plan(scatter, s)
    parts = tuple(step.part for step in scatter.steps)
    gather = plan_transfers(CdmHint("gather", parts, (targets[-1],), result="back"), s)
    execute_plan(gather, s)
    assert s.get("back") == content


def test_plan_is_pure():
    s, _ = holder_store(8)
    before = (dict(s.egress), {n: st_.used for n, st_ in s.nodes.items()})
    plan_transfers(CdmHint("broadcast", "b.dat", tuple(nodes(8))), s)
    assert (dict(s.egress), {n: st_.used for n, st_ in s.nodes.items()}) == before


def test_manifest(tmp_path):
    s = ArtifactStore("ame", nodes(2), root=tmp_path / "a")
    s.put(ArtifactRef("k", persistence="persistent"), b"1")
    s.write_manifest(tmp_path / "m.jsonl")
    import json

    (entry,) = [json.loads(x) for x in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert set(entry) == {"name", "size", "digest", "persistence", "locations"}
    assert SHARED in entry["locations"]
