"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import math
import time

import numpy as np

from zipper.cli import main as cli_main
from zipper.codegen import compile_model
from zipper.graph import (Graph, assign_edge_types, degree_reorder,
                          gen_synthetic, random_features)
from zipper.model import build_model
from zipper.oracle import compare, gen_weights, run_dense
from zipper.protocol import enumerate_interleavings
from zipper.runtime import (StreamConfig, execute, inject_drop_signal)
from zipper.errors import DeadlockError
from zipper.timing import (EnergyParams, HardwareConfig, SimStats, energy,
                           mem_cycles, mu_cycles, simulate, vu_cycles)
from zipper.tiling import make_plan, traffic_stats

MODELS = [("gcn", 8, 8), ("gat", 8, 4), ("sage", 8, 4), ("ggnn", 8, 8), ("rgcn", 8, 4)]


def verdict(name, ok, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_c1_oracle_equivalence():
    """All models x graphs x tiling x reorder x streams match the oracle."""
    t0 = time.time()
    graphs = {
        "G4": Graph.from_edges([0, 0, 2, 3], [1, 2, 1, 0], num_vertices=4),
        "star64": gen_synthetic("star", 64),
        "chain64": gen_synthetic("chain", 64),
        "er256": gen_synthetic("erdos-renyi", 256, 1024, seed=1),
        "rmat256": gen_synthetic("rmat", 256, 2048, seed=2),
    }
    checked = 0
    worst = 0.0
    for name, fin, fout in MODELS:
        m = build_model(name, fin, fout)
        for gname, g0 in graphs.items():
            g1 = assign_edge_types(g0, 3, seed=3) if name == "rgcn" else g0
            for reorder in (False, True):
                g = degree_reorder(g1)[0] if reorder else g1
                feats = random_features(g, fin, seed=5)
                w = gen_weights(m, seed=6)
                want = run_dense(m, g, feats, w)
                for mode in ("regular", "sparse"):
                    plan = make_plan(g, 96, 96, mode)
                    prog, _, _ = compile_model(m, plan)
                    for cfg in (StreamConfig(1, 1), StreamConfig(4, 4)):
                        out, _ = execute(prog, plan, g, feats, w, cfg)
                        rep = compare(out, want, rel_tol=1e-5)
                        worst = max(worst, rep.max_rel_err)
                        assert rep.passed, \
                            f"{name}/{gname}/reorder={reorder}/{mode}/{cfg}: {rep}"
                        checked += 1
    dt = time.time() - t0
    verdict("C1 oracle equivalence",
            checked == 200 and dt < 60,
            f"{checked} runs, max_rel_err={worst:.2e}, {dt:.1f}s")


def test_c2_sparse_traffic_direction():
    g = gen_synthetic("rmat", 4096, 65536, seed=1)
    reg = traffic_stats(make_plan(g, 64, 64, "regular"), f=128)
    spa = traffic_stats(make_plan(g, 64, 64, "sparse"), f=128)
    rg, _ = degree_reorder(g)
    spr = traffic_stats(make_plan(rg, 64, 64, "sparse"), f=128)
    ratio = reg.src_vertex_loads / spa.src_vertex_loads
    ok = ratio >= 5.0 and spr.src_vertex_loads <= spa.src_vertex_loads
    verdict("C2 sparse-tiling traffic", ok,
            f"sparse {ratio:.1f}x, reorder {reg.src_vertex_loads / spr.src_vertex_loads:.1f}x")


def test_c3_e2v_effectiveness():
    g = gen_synthetic("rmat", 1024, 16384, seed=2)
    f = 128
    feats = random_features(g, f, seed=0)
    plan = make_plan(g, 256, 256, "sparse")
    results = {}
    for name in ("gat", "sage"):
        m = build_model(name, f, f)
        w = gen_weights(m, seed=1)
        cyc, outs = {}, {}
        for e2v_on in (True, False):
            prog, _, _ = compile_model(m, plan, enable_e2v=e2v_on)
            out, tr = execute(prog, plan, g, feats, w, StreamConfig(4, 4))
            st = simulate(prog, plan, g, feats, w, StreamConfig(4, 4), trace=tr)
            cyc[e2v_on], outs[e2v_on] = st.total_cycles, out
        rep = compare(outs[True], outs[False], rel_tol=1e-5)
        results[name] = ((cyc[False] - cyc[True]) / cyc[False], rep.passed)
    gat_gain, gat_same = results["gat"]
    sage_gain, sage_same = results["sage"]
    ok = gat_gain >= 0.10 and gat_same and sage_gain >= 0.0 and sage_same
    verdict("C3 E2V effectiveness", ok,
            f"gat {gat_gain:.1%}, sage {sage_gain:.1%}, outputs match")


def test_c4_inter_tile_pipelining():
    g = gen_synthetic("rmat", 1024, 8192, seed=3)
    f = 64
    feats = random_features(g, f, seed=0)
    plan = make_plan(g, 256, 256, "sparse")
    assert plan.num_tiles >= 16
    m = build_model("gcn", f, f)
    w = gen_weights(m, seed=1)
    prog, _, _ = compile_model(m, plan)
    cycles = {}
    for s in (1, 2, 4, 8):
        cfg = StreamConfig(s, s)
        _, tr = execute(prog, plan, g, feats, w, cfg)
        cycles[s] = simulate(prog, plan, g, feats, w, cfg, trace=tr).total_cycles
    speedup = cycles[1] / cycles[4]
    seq = [cycles[s] for s in (1, 2, 4, 8)]
    sweet = seq.index(min(seq))
    monotone = all(seq[i] >= seq[i + 1] for i in range(sweet))

    # sensitivity ordering: SAGE gains more from an extra MU than extra VUs
    ms = build_model("sage", 128, 128)
    ws = gen_weights(ms, seed=2)
    feats128 = random_features(g, 128, seed=0)
    prog_s, _, _ = compile_model(ms, plan)
    _, tr = execute(prog_s, plan, g, feats128, ws, StreamConfig(4, 4))
    base = simulate(prog_s, plan, g, feats128, ws, StreamConfig(4, 4),
                    HardwareConfig(), trace=tr).total_cycles
    mu2 = simulate(prog_s, plan, g, feats128, ws, StreamConfig(4, 4),
                   HardwareConfig(mu_count=2), trace=tr).total_cycles
    vu4 = simulate(prog_s, plan, g, feats128, ws, StreamConfig(4, 4),
                   HardwareConfig(vu_count=4), trace=tr).total_cycles
    ok = speedup >= 1.2 and monotone and (base / mu2) > (base / vu4)
    verdict("C4 inter-tile pipelining", ok,
            f"(4,4) speedup {speedup:.2f}x, cycles {seq}, "
            f"sage mu-gain {base / mu2:.3f} > vu-gain {base / vu4:.3f}")


def test_c5_memory_footprint():
    g = gen_synthetic("rmat", 1024, 16384, seed=2)
    f = 16
    feats = random_features(g, f, seed=0)
    m = build_model("gat", f, f)
    w = gen_weights(m, seed=1)
    plan = make_plan(g, 128, 128, "sparse")
    assert plan.num_partitions >= 4
    from zipper.ir import lower_to_ir
    from zipper.model import defuse
    from zipper.optim import run_passes
    irp, _ = run_passes(lower_to_ir(defuse(m)))
    whole = 0
    for seg in irp.segments:
        items = g.num_vertices if seg.label == "vertex" else g.num_edges
        for op in seg.ops:
            if op.kind != "output" and not op.kind.startswith("send"):
                whole += items * op.dim * 4
    prog, _, _ = compile_model(m, plan)
    _, trace = execute(prog, plan, g, feats, w, StreamConfig(4, 4))
    ratio = trace.peak_live_bytes / whole
    verdict("C5 memory footprint", ratio < 0.60,
            f"peak {trace.peak_live_bytes} B = {ratio:.1%} of whole-graph {whole} B")


def test_c6_timing_unit_laws():
    hw = HardwareConfig()
    rng = np.random.default_rng(42)
    lanes = hw.vu_cores * hw.vu_lanes
    for _ in range(20):
        n, mm, k = (int(rng.integers(1, 700)) for _ in range(3))
        want = math.ceil(n / 32) * math.ceil(mm / 128) * (k + 159)
        assert mu_cycles(n, mm, k, hw) == want
        items, dim = int(rng.integers(1, 3000)), int(rng.integers(1, 300))
        assert vu_cycles("ADD", items, dim, hw) == math.ceil(items * dim / lanes)
        assert vu_cycles("EXP", items, dim, hw) == 4 * math.ceil(items * dim / lanes)
        b = int(rng.integers(1, 10**7))
        assert mem_cycles(b, hw) == 100 + math.ceil(b / 256)
    assert mu_cycles(32, 128, 128, hw) == 287
    assert mem_cycles(0, hw) == 0
    rep = energy(SimStats(offchip_read_bytes=1024), EnergyParams())
    verdict("C6 timing-model unit laws",
            rep.offchip_pj == 57344,
            f"60 randomized law checks, 1 KiB off-chip = {rep.offchip_pj:.0f} pJ")


def test_c7_protocol_safety():
    g4 = Graph.from_edges([0, 0, 2, 3], [1, 2, 1, 0], num_vertices=4)
    plan = make_plan(g4, 2, 2, "regular")
    tile_counts = [len(p.tiles) for p in plan.partitions]
    assert plan.num_tiles == 4
    states = 0
    for name, fin, fout in MODELS:
        prog, _, _ = compile_model(build_model(name, fin, fout), plan)
        res = enumerate_interleavings(prog, tile_counts, n_s=2, n_e=2)
        assert res.deadlocks == [] and res.final_reached, name
        states += res.states

    prog, _, _ = compile_model(build_model("gcn", 8, 8), plan)
    bad = inject_drop_signal(prog, "s", 0)
    res = enumerate_interleavings(bad, tile_counts, n_s=2, n_e=2)
    assert len(res.deadlocks) >= 1
    feats = random_features(g4, 8, seed=0)
    w = gen_weights(build_model("gcn", 8, 8), seed=1)
    try:
        execute(bad, plan, g4, feats, w, StreamConfig(2, 2))
        named = False
    except DeadlockError as exc:
        named = "wait-for cycle" in exc.snapshot and "starved" in exc.snapshot
    verdict("C7 protocol safety", named,
            f"{states} interleaving states over 5 models, no deadlock; "
            "fault injection names the wait-for cycle")


def test_c8_determinism(tmp_path):
    args = ["run", "--model", "gat", "--synthetic", "rmat:256,2048",
            "--f-in", "16", "--f-out", "16", "--dst-size", "64",
            "--src-size", "64", "--streams", "4,4", "--seed", "9", "--no-plot"]
    cli_main(args + ["--out-dir", str(tmp_path / "a")])
    cli_main(args + ["--out-dir", str(tmp_path / "b")])
    a = (tmp_path / "a" / "stats.json").read_bytes()
    b = (tmp_path / "b" / "stats.json").read_bytes()
    verdict("C8 determinism", a == b and len(a) > 0,
            f"byte-identical stats.json ({len(a)} bytes)")
