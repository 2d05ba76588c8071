import pytest

from zipper.codegen import compile_model
from zipper.graph import gen_synthetic
from zipper.model import build_model
from zipper.protocol import enumerate_interleavings
from zipper.runtime import inject_drop_signal
from zipper.tiling import make_plan


def four_tile_counts(g4):
    plan = make_plan(g4, 2, 2, "regular")
    assert plan.num_tiles == 4
    return plan, [len(p.tiles) for p in plan.partitions]


@pytest.mark.parametrize("name,fin,fout", [
    ("gcn", 8, 8), ("gat", 8, 4), ("sage", 8, 4), ("rgcn", 8, 4)])
def test_exhaustive_no_deadlock(g4, name, fin, fout):
    plan, tc = four_tile_counts(g4)
    prog, _, _ = compile_model(build_model(name, fin, fout), plan)
    res = enumerate_interleavings(prog, tc, n_s=2, n_e=2)
    assert res.deadlocks == []
    assert res.final_reached
    assert res.states > 100


def test_single_stream_counts(g4):
    plan, tc = four_tile_counts(g4)
    prog, _, _ = compile_model(build_model("gcn", 8, 8), plan)
    res = enumerate_interleavings(prog, tc, n_s=1, n_e=1)
    assert res.ok


def test_uneven_partitions():
    g = gen_synthetic("star", 8)   # all edges land in partition 0
    plan = make_plan(g, 2, 2, "sparse")
    tc = [len(p.tiles) for p in plan.partitions]
    assert 0 in tc
    prog, _, _ = compile_model(build_model("gcn", 4, 4), plan)
    res = enumerate_interleavings(prog, tc, n_s=2, n_e=2)
    assert res.ok


def test_dropped_handoff_found(g4):
    plan, tc = four_tile_counts(g4)
    prog, _, _ = compile_model(build_model("gcn", 8, 8), plan)
    bad = inject_drop_signal(prog, "s", 0)
    res = enumerate_interleavings(bad, tc, n_s=2, n_e=2)
    assert len(res.deadlocks) >= 1
    assert not res.final_reached


def test_dropped_partition_signal_found(g4):
    plan, tc = four_tile_counts(g4)
    prog, _, _ = compile_model(build_model("gcn", 8, 8), plan)
    bad = inject_drop_signal(prog, "d", 0)
    res = enumerate_interleavings(bad, tc, n_s=2, n_e=2)
    assert len(res.deadlocks) >= 1


def test_state_budget_enforced(g4):
    plan, tc = four_tile_counts(g4)
    prog, _, _ = compile_model(build_model("gat", 8, 4), plan)
    with pytest.raises(ValueError, match="budget"):
        enumerate_interleavings(prog, tc, n_s=2, n_e=2, max_states=50)
