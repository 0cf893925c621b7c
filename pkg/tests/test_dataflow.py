from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manyflow.dataflow import QUIESCENT, Deadlocked, instantiate, undetermined
from manyflow.datastore import ArtifactRef
from manyflow.dsl import compile_source
from manyflow.errors import CycleError, DoubleAssignError, ManyflowError, UnboundInputError, UnknownTask
from manyflow.workloads import diamond_mesh, fanout, pipeline

from .conftest import GOLDEN, drive, golden_scripts, graph_from_file, graph_of

PIPELINE = (
    "type file;\n"
    'app (file o) s1(file i) { "cp" i o }\n'
    'app (file o) s2(file i) { "cp" i o }\n'
    "file src;\nfile mid;\nfile out;\n"
    "mid = s1(src);\nout = s2(mid);\n"
)

DIAMOND = (GOLDEN / "diamond.mf").read_text()


def bound_pipeline():
    return graph_of(PIPELINE, {"src": ArtifactRef("in.dat", persistence="persistent")})


def by_app(g, app):
    (tid,) = [t for t, n in g.tasks.items() if n.spec.app == app]
    return tid


def finish(g, tid, value="v"):
    g.start(tid)
    return g.complete_task(tid, {f: value for f in g.spec(tid).outputs})


# -- instantiate ------------------------------------------------------------------

def test_pipeline_has_two_tasks_three_futures():
    g = bound_pipeline()
    assert len(g.tasks) == 2
    assert len(g.futures) == 3
    assert g.futures["src"].is_set


def test_fanout_shares_one_input():
    g = graph_from_file(GOLDEN / "fanout10.mf")
    assert len(g.tasks) == 10
    (shared,) = [f for f, c in g.futures.items() if c.producer is None]
    assert g.futures[shared].is_set
    assert sorted(g.futures[shared].consumers) == sorted(g.tasks)


def test_cycle_is_named():
    with pytest.raises(CycleError) as e:
        graph_from_file(GOLDEN / "errors" / "cycle.mf")
    cyc = e.value.cycle
    assert cyc[0] == cyc[-1]
    assert {"a[0]", "a[1]"} <= set(cyc)


def test_unbound_input():
    with pytest.raises(UnboundInputError) as e:
        graph_of(PIPELINE)
    assert e.value.futures == ["src"]


def test_mapped_input_binds_to_its_path():
    g = graph_from_file(GOLDEN / "pipeline.mf")
    ref = g.futures["input"].value
    assert ref.name == "in.dat" and ref.persistent


def test_unmapped_output_names_and_persistence():
    g = graph_from_file(GOLDEN / "pipeline.mf")
    assert g.futures["mid"].persistence == "volatile"
    assert g.futures["result"].persistence == "persistent"
    assert g.spec(by_app(g, "second")).persistence == "persistent"
    g2 = graph_from_file(GOLDEN / "pipeline.mf", persist_all=True)
    assert g2.futures["mid"].persistence == "persistent"


def test_dynamic_double_assignment():
    with pytest.raises(DoubleAssignError):
        graph_from_file(GOLDEN / "errors" / "dynamic_double.mf")


def test_two_writers_of_one_mapped_path():
    src = ('type file;\napp (file o) f(int k) { "seed" o k }\nfile a <"same.dat">;\nfile b <"same.dat">;\n'
           "a = f(1);\nb = f(2);\n")
    with pytest.raises(DoubleAssignError):
        graph_of(src)


def test_task_ids_are_ordered_and_zero_padded():
    g = graph_of(fanout(12))
    assert sorted(g.tasks) == [f"t{i:05d}-noop" for i in range(12)]


def test_width_and_duration_annotations():
    g = graph_from_file(GOLDEN / "widths.mf")
    wide = g.spec(by_app(g, "wide"))
    assert wide.width == 4 and wide.sim_duration == 1.0
    assert len(wide.inputs) == 6
    assert all(g.spec(t).sim_duration == 2.5 for t in g.tasks if g.spec(t).app == "solo")


def test_array_argument_expands_in_index_order():
    g = graph_from_file(GOLDEN / "nested.mf")
    rows = [g.spec(t) for t in sorted(g.tasks) if g.spec(t).app == "row"]
    assert [r.inputs for r in rows] == [tuple(f"grid[{r}][{j}]" for j in range(4)) for r in range(3)]


def test_command_substitutes_scalars():
    g = graph_from_file(GOLDEN / "nested.mf")
    first = g.spec(sorted(g.tasks)[0])
    assert first.command[0] == "seed"
    assert list(first.command[2:]) == ["0", "10"]


def test_task_spec_invariants_on_goldens():
    for path in golden_scripts():
        g = graph_from_file(path)
        for t in g.tasks.values():
            s = t.spec
            assert s.outputs
            assert not set(s.inputs) & set(s.outputs)
            assert s.width >= 1


# -- readiness ------------------------------------------------------------------

def test_ready_tasks_in_pipeline():
    g = bound_pipeline()
    s1, s2 = by_app(g, "s1"), by_app(g, "s2")
    assert g.ready_tasks() == {s1}
    assert finish(g, s1) == [s2]
    assert g.ready_tasks() == {s2}


def test_ready_fanout():
    g = graph_from_file(GOLDEN / "fanout10.mf")
    assert g.ready_tasks() == set(g.tasks)


def test_diamond_readiness():
    g = graph_of(DIAMOND)
    a, b, c, d = (by_app(g, x) for x in "abcd")
    assert sorted(finish(g, a)) == sorted([b, c])
    assert g.ready_tasks() == {b, c}
    assert finish(g, b) == []
    assert finish(g, c) == [d]


def test_completing_a_done_task_again():
    g = bound_pipeline()
    s1 = by_app(g, "s1")
    finish(g, s1)
    with pytest.raises(DoubleAssignError):
        g.complete_task(s1, {"mid": "again"})


def test_unknown_task():
    g = bound_pipeline()
    with pytest.raises(UnknownTask):
        g.complete_task("nope", {})


def test_outputs_must_match_exactly():
    g = bound_pipeline()
    s1 = by_app(g, "s1")
    g.start(s1)
    with pytest.raises(ManyflowError):
        g.complete_task(s1, {"mid": 1, "out": 2})


# -- quiescence -----------------------------------------------------------------

def test_completed_pipeline_is_quiescent():
    g = bound_pipeline()
    drive(g)
    assert g.check_quiescence() is QUIESCENT


def test_failed_producer_deadlocks():
    g = bound_pipeline()
    s1 = by_app(g, "s1")
    g.start(s1)
    g.fail_task(s1)
    out = g.check_quiescence()
    assert isinstance(out, Deadlocked) and not out
    assert set(out.unset) == {"mid", "out"}
    assert out.failed == [s1]


def test_never_produced_file_is_caught_at_instantiation():
    src = 'type file;\napp (file o) f(file i) { "cp" i o }\nfile ghost;\nfile out;\nout = f(ghost);\n'
    with pytest.raises(UnboundInputError):
        graph_of(src)
    g = graph_of(src, allow_unbound=True)
    assert set(undetermined(g)) == {"ghost", "out"}
    out = g.check_quiescence()
    assert not out and "ghost" in out.unset


def test_quiescence_refuses_while_work_remains():
    g = bound_pipeline()
    with pytest.raises(ManyflowError):
        g.check_quiescence()


# -- DOT export -----------------------------------------------------------------

def dot_shapes(text):
    return text.count("shape=box"), text.count("shape=ellipse")


def test_dot_pipeline():
    g = graph_from_file(GOLDEN / "pipeline.mf")
    assert dot_shapes(g.to_dot()) == (2, 3)
    assert "style=dashed" in g.to_dot()     # mid is volatile


def test_dot_fanout_and_diamond_edges():
    assert dot_shapes(graph_from_file(GOLDEN / "fanout10.mf").to_dot())[0] == 10
    g = graph_from_file(GOLDEN / "diamond.mf")
    text = g.to_dot()
    assert dot_shapes(text)[0] == 4
    edges = {tuple(x.strip().strip('"') for x in line.split("[")[0].rstrip(" ;").split(" -> "))
             for line in text.splitlines() if "->" in line}
    a, b, c, d = (by_app(g, x) for x in "abcd")
    # enumerated by hand from the script
    assert edges == {
        (a, "fa"), ("fa", b), ("fa", c), (b, "fb"), (c, "fc"),
        ("fb", d), ("fc", d), (d, "fd"),
    }


def test_dot_is_stable():
    texts = {graph_from_file(GOLDEN / "nested.mf").to_dot() for _ in range(3)}
    assert len(texts) == 1


# -- properties -----------------------------------------------------------------

graphs = st.one_of(
    st.integers(1, 12).map(pipeline),
    st.integers(1, 20).map(fanout),
    st.tuples(st.integers(1, 5), st.integers(1, 4)).map(lambda wd: diamond_mesh(*wd)),
)


@settings(max_examples=60, deadline=None)
@given(graphs, st.randoms(use_true_random=False))
def test_random_completion_orders_reach_same_values(text, rnd):
    reference = graph_of(text)
    drive(reference)
    g = graph_of(text)
    drive(g, order=lambda ready: rnd.sample(sorted(ready), len(ready)))
    assert g.check_quiescence() is QUIESCENT
    assert g.values() == reference.values()


@settings(max_examples=60, deadline=None)
@given(graphs, st.randoms(use_true_random=False))
def test_no_future_is_set_twice(text, rnd):
    g = graph_of(text)
    writes = {}
    while g.ready_tasks():
        tid = rnd.choice(sorted(g.ready_tasks()))
        g.start(tid)
        for f in g.spec(tid).outputs:
            writes[f] = writes.get(f, 0) + 1
        g.complete_task(tid, {f: tid for f in g.spec(tid).outputs})
        # replaying any done task must be refused
        done = [t for t, n in g.tasks.items() if n.status == "done"]
        with pytest.raises(DoubleAssignError):
            g.complete_task(rnd.choice(done), {f: "x" for f in g.spec(done[0]).outputs})
    assert set(writes.values()) == {1}


def test_concurrent_completions_are_atomic():
    g = graph_of(fanout(400))
    tids = sorted(g.tasks)
    for t in tids:
        g.start(t)
    errors = []

    def work(chunk):
        for t in chunk:
            try:
                g.complete_task(t, {f: t for f in g.spec(t).outputs})
            except Exception as e:     # pragma: no cover - failure path
                errors.append(e)

    threads = [threading.Thread(target=work, args=(tids[i::4],)) for i in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert not errors
    assert g.check_quiescence() is QUIESCENT


def test_partition_and_absorb_round_trip():
    g = graph_of(diamond_mesh(3, 3))
    owner = {t: i % 2 for i, t in enumerate(sorted(g.tasks))}
    parts = g.partition(owner, 2)
    assert sum(len(p.tasks) for p in parts) == len(g.tasks)
    for tid in sorted(parts[0].tasks):
        assert parts[0].tasks[tid].spec is g.tasks[tid].spec
    g.absorb(parts)
    assert g.counts() == graph_of(diamond_mesh(3, 3)).counts()


def test_instantiate_is_deterministic():
    prog = compile_source(diamond_mesh(4, 3))
    a, b = instantiate(prog, run_id="r"), instantiate(prog, run_id="r")
    assert [t.spec for t in a.tasks.values()] == [t.spec for t in b.tasks.values()]
